//! Joint encoder + head fine-tuning over the learning-rate x seed grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::heads::asr::{decode_ctc_greedy, AsrHead, ASR_HIDDEN};
use crate::heads::data::{LabeledUtterance, ASR_HOURS, SLID_CAP};
use crate::heads::slid::{SlidHead, SLID_HIDDEN};
use crate::heads::vocab::{normalize_text, CharVocab};
use crate::metrics::{macro_f1, mean, score_asr, AsrLanguageScore, AsrReport, F1Report};
use crate::nn::{Adadelta, AdadeltaConfig, Adam, AdamConfig, Grads, Graph, ParamSet};
use crate::rng::{derive_seed, stage_rng};
use crate::ssl::{Checkpoint, Encoder};
use crate::textio::{fmt_sig, write_atomic, KeyValues};

pub const ENCODER_LR_GRID: [f64; 3] = [1e-3, 1e-4, 1e-5];
pub const GRID_SEEDS: usize = 3;
const GRAD_CLIP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Slid,
    Asr,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Slid => "slid",
            Task::Asr => "asr",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slid" => Ok(Task::Slid),
            "asr" => Ok(Task::Asr),
            _ => Err(Error::Config(format!("unknown task '{s}' (expected slid or asr)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub task: Task,
    pub encoder_lrs: Vec<f64>,
    /// Adam step size for the SLID head, Adadelta step size for the ASR head.
    pub head_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub slid_cap: usize,
    pub asr_hours: f64,
    pub hidden: usize,
    /// Seed for data capping and sampling.
    pub seed: u64,
    pub freeze_encoder: bool,
}

fn parse_list<T: FromStr>(s: &str, key: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| Error::Config(format!("{key}: invalid list '{s}'"))))
        .collect()
}

impl FinetuneConfig {
    pub fn new(task: Task) -> Self {
        match task {
            Task::Slid => Self {
                task,
                encoder_lrs: ENCODER_LR_GRID.to_vec(),
                head_lr: 1e-3,
                epochs: 20,
                batch_size: 32,
                seeds: vec![0, 1, 2],
                slid_cap: SLID_CAP,
                asr_hours: ASR_HOURS,
                hidden: SLID_HIDDEN,
                seed: 0,
                freeze_encoder: false,
            },
            Task::Asr => Self {
                task,
                encoder_lrs: ENCODER_LR_GRID.to_vec(),
                head_lr: 1.0,
                epochs: 30,
                batch_size: 16,
                seeds: vec![0, 1, 2],
                slid_cap: SLID_CAP,
                asr_hours: ASR_HOURS,
                hidden: ASR_HIDDEN,
                seed: 0,
                freeze_encoder: false,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_lrs.is_empty() || self.encoder_lrs.iter().any(|lr| !ENCODER_LR_GRID.contains(lr)) {
            return Err(Error::Config(format!("encoder_lrs must be drawn from {ENCODER_LR_GRID:?}")));
        }
        if self.seeds.len() != GRID_SEEDS {
            return Err(Error::Config(format!("seeds must list exactly {GRID_SEEDS} seeds")));
        }
        if self.batch_size == 0 || self.hidden == 0 || !(self.head_lr > 0.0) {
            return Err(Error::Config("batch_size, hidden and head_lr must be positive".into()));
        }
        if self.slid_cap == 0 || !(self.asr_hours > 0.0) {
            return Err(Error::Config("slid_cap and asr_hours must be positive".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues, task: Option<Task>) -> Result<Self> {
        kv.check_known(&[
            "task", "encoder_lrs", "head_lr", "epochs", "batch_size", "seeds", "slid_cap", "asr_hours", "hidden", "seed",
            "freeze_encoder",
        ])?;
        let task = match (kv.get::<Task>("task")?, task) {
            (Some(a), Some(b)) if a != b => return Err(Error::Config(format!("config is for task {a}, not {b}"))),
            (Some(t), _) | (None, Some(t)) => t,
            (None, None) => return Err(Error::Config("missing field `task`".into())),
        };
        let d = Self::new(task);
        let cfg = Self {
            task,
            encoder_lrs: kv.get_str("encoder_lrs").map_or(Ok(d.encoder_lrs.clone()), |s| parse_list(s, "encoder_lrs"))?,
            head_lr: kv.get_or("head_lr", d.head_lr)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            seeds: kv.get_str("seeds").map_or(Ok(d.seeds.clone()), |s| parse_list(s, "seeds"))?,
            slid_cap: kv.get_or("slid_cap", d.slid_cap)?,
            asr_hours: kv.get_or("asr_hours", d.asr_hours)?,
            hidden: kv.get_or("hidden", d.hidden)?,
            seed: kv.get_or("seed", d.seed)?,
            freeze_encoder: kv.get_or("freeze_encoder", d.freeze_encoder)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        let lrs: Vec<String> = self.encoder_lrs.iter().map(f64::to_string).collect();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "task={}\nencoder_lrs={}\nhead_lr={}\nepochs={}\nbatch_size={}\nseeds={}\nslid_cap={}\nasr_hours={}\nhidden={}\nseed={}\nfreeze_encoder={}\n",
            self.task,
            lrs.join(","),
            self.head_lr,
            self.epochs,
            self.batch_size,
            seeds.join(","),
            self.slid_cap,
            self.asr_hours,
            self.hidden,
            self.seed,
            self.freeze_encoder
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub lang: String,
    /// Reference transcript (ASR) or true language (SLID).
    pub reference: String,
    /// Decoded text (ASR) or predicted language (SLID).
    pub hypothesis: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation macro F1 (SLID) or WER (ASR).
    pub valid_metric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkipReport {
    pub empty_transcript: Vec<String>,
    pub unalignable: Vec<String>,
}

impl SkipReport {
    pub fn total(&self) -> usize {
        self.empty_transcript.len() + self.unalignable.len()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("empty_transcript\t{}\nunalignable\t{}\n", self.empty_transcript.len(), self.unalignable.len());
        for id in &self.empty_transcript {
            s += &format!("empty_transcript\t{id}\n");
        }
        for id in &self.unalignable {
            s += &format!("unalignable\t{id}\n");
        }
        s
    }
}

/// A fine-tuned encoder plus head, stored as a checkpoint whose parameters
/// hold `enc.*` and `slid.*` or `asr.*`.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub lr: f64,
    pub seed: u64,
    pub epochs: Vec<EpochRow>,
    pub valid_metric: f64,
    pub valid_predictions: Vec<Prediction>,
    pub test_predictions: Vec<Prediction>,
    pub model: Checkpoint,
}

enum Head {
    Slid(SlidHead),
    Asr(AsrHead),
}

struct Model<'a> {
    enc: Encoder,
    head: Head,
    vocab: Option<&'a CharVocab>,
    languages: &'a [String],
}

impl Model<'_> {
    fn logits(&self, g: &mut Graph, wave: &[f32], dropout: Option<&mut crate::rng::StageRng>) -> Result<crate::nn::Var> {
        let out = self.enc.forward(g, wave, None, None, dropout)?;
        Ok(match &self.head {
            Head::Slid(h) => h.forward(g, out.output),
            Head::Asr(h) => h.forward(g, out.output),
        })
    }

    fn predict(&self, params: &ParamSet, utt: &LabeledUtterance) -> Result<Prediction> {
        let mut g = Graph::new(params);
        let logits = self.logits(&mut g, &utt.wave, None)?;
        let v = g.value(logits);
        let (reference, hypothesis) = match &self.head {
            Head::Slid(_) => {
                let best = v.row(0).iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b }).0;
                (utt.lang.clone(), self.languages[best].clone())
            }
            Head::Asr(_) => (normalize_text(&utt.text), decode_ctc_greedy(v, self.vocab.expect("asr model has a vocab"))),
        };
        Ok(Prediction { id: utt.id.clone(), lang: utt.lang.clone(), reference, hypothesis })
    }
}

fn build_params(ck: &Checkpoint) -> ParamSet {
    let mut params = ParamSet::new();
    for (name, value) in ck.params.iter().filter(|(n, _)| n.starts_with("enc.")) {
        params.add(name, value.clone());
    }
    params
}

/// Languages present in the training data, sorted.
pub fn language_set(utts: &[LabeledUtterance]) -> Vec<String> {
    utts.iter().map(|u| u.lang.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

pub struct TaskData<'a> {
    pub train: &'a [LabeledUtterance],
    pub valid: &'a [LabeledUtterance],
    pub test: &'a [LabeledUtterance],
    pub languages: &'a [String],
    pub vocab: Option<&'a CharVocab>,
}

/// Training targets per utterance: class index (SLID) or CTC labels (ASR).
enum Target {
    Class(usize),
    Labels(Vec<usize>),
}

fn prepare_targets(task: Task, data: &TaskData) -> Result<(Vec<(usize, Target)>, SkipReport)> {
    let lang_index: BTreeMap<&str, usize> = data.languages.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    for u in data.train.iter().chain(data.valid).chain(data.test) {
        if !lang_index.contains_key(u.lang.as_str()) {
            return Err(Error::Data(format!("utterance {} has label '{}' outside the language set", u.id, u.lang)));
        }
    }
    let mut skips = SkipReport::default();
    let mut out = Vec::new();
    for (i, u) in data.train.iter().enumerate() {
        match task {
            Task::Slid => out.push((i, Target::Class(lang_index[u.lang.as_str()]))),
            Task::Asr => {
                let vocab = data.vocab.ok_or_else(|| Error::Config("ASR fine-tuning needs a vocabulary".into()))?;
                let labels = vocab.encode(&u.text).map_err(|e| Error::Data(format!("utterance {}: {e}", u.id)))?;
                if labels.is_empty() {
                    log::warn!("skipping {}: empty transcript", u.id);
                    skips.empty_transcript.push(u.id.clone());
                    continue;
                }
                let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
                if labels.len() + repeats > u.wave.len() / crate::units::HOP {
                    log::warn!("skipping {}: transcript longer than the audio allows", u.id);
                    skips.unalignable.push(u.id.clone());
                    continue;
                }
                out.push((i, Target::Labels(labels)));
            }
        }
    }
    if task == Task::Asr {
        let vocab = data.vocab.expect("checked above");
        for u in data.valid.iter().chain(data.test) {
            vocab.encode(&u.text).map_err(|e| Error::Data(format!("utterance {}: {e}", u.id)))?;
        }
    }
    Ok((out, skips))
}

fn validation_metric(task: Task, preds: &[Prediction], languages: &[String]) -> Result<f64> {
    match task {
        Task::Slid => {
            let pairs: Vec<_> = preds.iter().map(|p| (p.reference.clone(), p.hypothesis.clone())).collect();
            Ok(macro_f1(&pairs, languages, &BTreeSet::new())?.avg_star)
        }
        Task::Asr => {
            let rows: Vec<_> = preds
                .iter()
                .filter(|p| !p.reference.trim().is_empty())
                .map(|p| (p.lang.clone(), p.reference.clone(), p.hypothesis.clone()))
                .collect();
            if rows.is_empty() {
                return Ok(f64::NAN);
            }
            Ok(score_asr(&rows, &BTreeSet::new())?.avg_star_wer)
        }
    }
}

/// One fine-tuning run at encoder learning rate `lr` and seed `seed`.
pub fn finetune_run(ck: &Checkpoint, data: &TaskData, cfg: &FinetuneConfig, lr: f64, seed: u64) -> Result<RunResult> {
    let (targets, _) = prepare_targets(cfg.task, data)?;
    let mut params = build_params(ck);
    let mut rng = stage_rng(seed, &format!("{}-head-init", cfg.task));
    let d = ck.encoder.model_dim;
    let head = match cfg.task {
        Task::Slid => Head::Slid(SlidHead::init(&mut params, d, cfg.hidden, data.languages.len(), &mut rng)),
        Task::Asr => {
            let vocab = data.vocab.ok_or_else(|| Error::Config("ASR fine-tuning needs a vocabulary".into()))?;
            Head::Asr(AsrHead::init(&mut params, d, cfg.hidden, vocab.outputs(), &mut rng))
        }
    };
    let model = Model { enc: Encoder::bind(&ck.encoder, &params)?, head, vocab: data.vocab, languages: data.languages };
    let mut enc_opt = Adam::new(&params, AdamConfig::default(), |n| n.starts_with("enc."));
    let mut slid_opt = Adam::new(&params, AdamConfig::default(), |n| n.starts_with("slid."));
    let mut asr_opt = Adadelta::new(&params, AdadeltaConfig::default(), |n| n.starts_with("asr."));

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut stage_rng(seed, &format!("{}-epoch/{epoch}", cfg.task)));
        let mut dropout = stage_rng(seed, &format!("{}-dropout/{epoch}", cfg.task));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Grads::zeros_like(&params);
            let denom = batch.len() as f64;
            for &ti in batch {
                let (ui, target) = &targets[ti];
                let utt = &data.train[*ui];
                let mut g = Graph::new(&params);
                let logits = model.logits(&mut g, &utt.wave, Some(&mut dropout))?;
                let loss = match target {
                    Target::Class(c) => g.cross_entropy(logits, &[(0, *c)], denom),
                    Target::Labels(l) => match g.ctc_loss(logits, l, denom * l.len() as f64) {
                        Some(v) => v,
                        None => continue,
                    },
                };
                loss_sum += g.scalar(loss) * denom;
                grads.merge(&g.backward(loss));
            }
            if !grads.is_finite() {
                return Err(Error::Divergence { step: epoch as u64, detail: format!("{} fine-tuning gradients non-finite", cfg.task) });
            }
            grads.clip_norm(GRAD_CLIP);
            if !cfg.freeze_encoder {
                enc_opt.step(&mut params, &grads, lr);
            }
            match cfg.task {
                Task::Slid => slid_opt.step(&mut params, &grads, cfg.head_lr),
                Task::Asr => asr_opt.step(&mut params, &grads, cfg.head_lr),
            }
        }
        let valid: Vec<Prediction> = data.valid.iter().map(|u| model.predict(&params, u)).collect::<Result<_>>()?;
        epochs.push(EpochRow {
            epoch: epoch + 1,
            train_loss: loss_sum / targets.len().max(1) as f64,
            valid_metric: validation_metric(cfg.task, &valid, data.languages)?,
        });
    }
    let valid_predictions: Vec<Prediction> = data.valid.iter().map(|u| model.predict(&params, u)).collect::<Result<_>>()?;
    let test_predictions: Vec<Prediction> = data.test.iter().map(|u| model.predict(&params, u)).collect::<Result<_>>()?;
    let valid_metric = validation_metric(cfg.task, &valid_predictions, data.languages)?;
    let mut meta = BTreeMap::new();
    meta.insert("task".to_string(), cfg.task.to_string());
    meta.insert("languages".to_string(), data.languages.join(","));
    meta.insert("encoder_lr".to_string(), lr.to_string());
    meta.insert("seed".to_string(), seed.to_string());
    let model_ck = Checkpoint { params, k: 0, step: cfg.epochs as u64, validation_loss: valid_metric, meta, ..ck.clone() };
    Ok(RunResult { lr, seed, epochs, valid_metric, valid_predictions, test_predictions, model: model_ck })
}

/// Runs a fine-tuned model (from [`finetune_run`]) over `utts`.
pub fn predict_with(model: &Checkpoint, utts: &[LabeledUtterance], vocab: Option<&CharVocab>) -> Result<Vec<Prediction>> {
    let task: Task = model.meta.get("task").ok_or_else(|| Error::Config("model lacks task metadata".into()))?.parse()?;
    let languages: Vec<String> = model.meta.get("languages").map(|l| l.split(',').map(str::to_string).collect()).unwrap_or_default();
    let head = match task {
        Task::Slid => Head::Slid(SlidHead::bind(&model.params)?),
        Task::Asr => {
            let h = AsrHead::bind(&model.params)?;
            let v = vocab.ok_or_else(|| Error::Config("ASR decoding needs a vocabulary".into()))?;
            if h.outputs(&model.params) != v.outputs() {
                return Err(Error::Config(format!("model has {} outputs, vocabulary {}", h.outputs(&model.params), v.outputs())));
            }
            Head::Asr(h)
        }
    };
    let m = Model { enc: model.bind()?, head, vocab, languages: &languages };
    utts.iter().map(|u| m.predict(&model.params, u)).collect()
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub task: Task,
    pub runs: Vec<RunResult>,
    pub best_lr: f64,
    pub skips: SkipReport,
    pub languages: Vec<String>,
}

/// Every `(lr, seed)` combination; the best lr maximizes mean validation F1
/// (SLID) or minimizes mean validation WER (ASR), earlier grid entries
/// winning ties.
pub fn finetune_grid(ck: &Checkpoint, data: &TaskData, cfg: &FinetuneConfig) -> Result<GridResult> {
    cfg.validate()?;
    let (_, skips) = prepare_targets(cfg.task, data)?;
    let combos: Vec<(f64, u64)> = cfg.encoder_lrs.iter().flat_map(|&lr| cfg.seeds.iter().map(move |&s| (lr, s))).collect();
    let runs: Vec<RunResult> = combos
        .par_iter()
        .map(|&(lr, s)| finetune_run(ck, data, cfg, lr, derive_seed(s, &format!("{}-run", cfg.task))).map(|r| RunResult { seed: s, ..r }))
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, f64)> = None;
    for &lr in &cfg.encoder_lrs {
        let m = mean(runs.iter().filter(|r| r.lr == lr).map(|r| r.valid_metric)).unwrap_or(f64::NAN);
        let better = match (best, cfg.task) {
            (None, _) => true,
            (Some((_, b)), _) if b.is_nan() => !m.is_nan(),
            (Some((_, b)), Task::Slid) => m > b,
            (Some((_, b)), Task::Asr) => m < b,
        };
        if better {
            best = Some((lr, m));
        }
    }
    let best_lr = best.expect("grid is non-empty").0;
    Ok(GridResult { task: cfg.task, runs, best_lr, skips, languages: data.languages.to_vec() })
}

impl GridResult {
    pub fn best_runs(&self) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.lr == self.best_lr)
    }

    /// Test F1 averaged over the seeds of the selected lr.
    pub fn slid_report(&self, african: &BTreeSet<String>) -> Result<F1Report> {
        let reports = self
            .best_runs()
            .map(|r| {
                let pairs: Vec<_> = r.test_predictions.iter().map(|p| (p.reference.clone(), p.hypothesis.clone())).collect();
                macro_f1(&pairs, &self.languages, african)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(mean_f1_reports(&reports))
    }

    /// Test WER/CER averaged over the seeds of the selected lr.
    pub fn asr_report(&self, african: &BTreeSet<String>) -> Result<AsrReport> {
        let reports = self.best_runs().map(|r| asr_report_of(&r.test_predictions, african)).collect::<Result<Vec<_>>>()?;
        Ok(mean_asr_reports(&reports))
    }
}

pub fn asr_report_of(preds: &[Prediction], african: &BTreeSet<String>) -> Result<AsrReport> {
    let rows: Vec<_> = preds
        .iter()
        .filter(|p| !p.reference.trim().is_empty())
        .map(|p| (p.lang.clone(), p.reference.clone(), p.hypothesis.clone()))
        .collect();
    score_asr(&rows, african)
}

pub fn mean_f1_reports(reports: &[F1Report]) -> F1Report {
    let mut per_language = BTreeMap::new();
    if let Some(first) = reports.first() {
        for lang in first.per_language.keys() {
            per_language.insert(lang.clone(), mean(reports.iter().map(|r| r.per_language[lang])).unwrap_or(0.0));
        }
    }
    F1Report {
        per_language,
        avg_star: mean(reports.iter().map(|r| r.avg_star)).unwrap_or(0.0),
        avg: reports.iter().map(|r| r.avg).collect::<Option<Vec<_>>>().and_then(mean),
    }
}

pub fn mean_asr_reports(reports: &[AsrReport]) -> AsrReport {
    let mut per_language = Vec::new();
    if let Some(first) = reports.first() {
        for (i, row) in first.per_language.iter().enumerate() {
            per_language.push(AsrLanguageScore {
                lang: row.lang.clone(),
                wer: mean(reports.iter().map(|r| r.per_language[i].wer)).unwrap_or(0.0),
                cer: mean(reports.iter().map(|r| r.per_language[i].cer)).unwrap_or(0.0),
                utterances: row.utterances,
            });
        }
    }
    let opt_mean = |f: fn(&AsrReport) -> Option<f64>| reports.iter().map(f).collect::<Option<Vec<_>>>().and_then(mean);
    AsrReport {
        per_language,
        avg_star_wer: mean(reports.iter().map(|r| r.avg_star_wer)).unwrap_or(0.0),
        avg_star_cer: mean(reports.iter().map(|r| r.avg_star_cer)).unwrap_or(0.0),
        avg_wer: opt_mean(|r| r.avg_wer),
        avg_cer: opt_mean(|r| r.avg_cer),
    }
}

pub fn predictions_to_tsv(task: Task, preds: &[Prediction]) -> String {
    let mut s = match task {
        Task::Slid => String::from("utterance_id\tlabel\tpredicted\n"),
        Task::Asr => String::from("utterance_id\tlang\treference\thypothesis\n"),
    };
    for p in preds {
        match task {
            Task::Slid => s += &format!("{}\t{}\t{}\n", p.id, p.reference, p.hypothesis),
            Task::Asr => s += &format!("{}\t{}\t{}\t{}\n", p.id, p.lang, p.reference, p.hypothesis),
        }
    }
    s
}

fn epochs_csv(rows: &[EpochRow], task: Task) -> String {
    let metric = match task {
        Task::Slid => "valid_f1",
        Task::Asr => "valid_wer",
    };
    let mut s = format!("epoch,train_loss,{metric}\n");
    for r in rows {
        s += &format!("{},{},{}\n", r.epoch, fmt_sig(r.train_loss, 10), fmt_sig(r.valid_metric, 10));
    }
    s
}

/// Lays out one directory per run plus the grid summary under `dir`.
pub fn write_grid(dir: &Path, cfg: &FinetuneConfig, grid: &GridResult, african: &BTreeSet<String>) -> Result<()> {
    write_atomic(&dir.join("config.txt"), cfg.to_kv_string().as_bytes())?;
    for r in &grid.runs {
        let run_dir = dir.join(format!("lr{}_seed{}", r.lr, r.seed));
        write_atomic(&run_dir.join("config.txt"), format!("{}encoder_lr={}\nrun_seed={}\n", cfg.to_kv_string(), r.lr, r.seed).as_bytes())?;
        write_atomic(&run_dir.join("metrics.csv"), epochs_csv(&r.epochs, grid.task).as_bytes())?;
        r.model.save(&run_dir.join("model.ckpt"))?;
        write_atomic(&run_dir.join("predictions.tsv"), predictions_to_tsv(grid.task, &r.test_predictions).as_bytes())?;
    }
    write_atomic(&dir.join("skip_report.txt"), grid.skips.to_text().as_bytes())?;
    let mut summary = format!("best_encoder_lr={}\n", grid.best_lr);
    for r in &grid.runs {
        summary += &format!("run lr={} seed={} valid={}\n", r.lr, r.seed, fmt_sig(r.valid_metric, 10));
    }
    write_atomic(&dir.join("grid.txt"), summary.as_bytes())?;
    let (jsonl, table) = match grid.task {
        Task::Slid => {
            let r = grid.slid_report(african)?;
            (r.to_jsonl(), r.to_table())
        }
        Task::Asr => {
            let r = grid.asr_report(african)?;
            (r.to_jsonl(), r.to_table())
        }
    };
    write_atomic(&dir.join("report.jsonl"), jsonl.as_bytes())?;
    write_atomic(&dir.join("report.txt"), table.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_grid_invariants() {
        let ok = KeyValues::parse("task=slid\nencoder_lrs=0.001,0.0001\n", "t").unwrap();
        assert_eq!(FinetuneConfig::from_kv(&ok, None).unwrap().encoder_lrs, vec![1e-3, 1e-4]);
        let bad = KeyValues::parse("task=slid\nencoder_lrs=0.01\n", "t").unwrap();
        assert!(FinetuneConfig::from_kv(&bad, None).is_err());
        let bad = KeyValues::parse("task=asr\nseeds=1,2\n", "t").unwrap();
        assert!(FinetuneConfig::from_kv(&bad, None).is_err());
        let cfg = FinetuneConfig::new(Task::Asr);
        let back = FinetuneConfig::from_kv(&KeyValues::parse(&cfg.to_kv_string(), "t").unwrap(), Some(Task::Asr)).unwrap();
        assert_eq!(back, cfg);
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.hidden, cfg.head_lr), (30, 16, 1024, 1.0));
    }
}
