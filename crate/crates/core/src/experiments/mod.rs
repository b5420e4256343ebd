//! Desk-scale study designs driven by recipes: the three-variant comparison,
//! cross-corpus evaluation, low-resource fine-tuning and multi-dialect ASR.

pub mod recipe;
pub mod reference;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::langs::african_allowlist;
use crate::corpus::{read_manifest, read_store_audio, read_transcripts, write_manifest, write_transcripts, write_wav, ManifestEntry, Split, Transcripts, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::heads::data::{cap_slid_data, load_labeled, sample_asr_hours, LabeledUtterance};
use crate::heads::finetune::{asr_report_of, finetune_grid, language_set, predict_with, write_grid, FinetuneConfig, GridResult, Prediction, TaskData, Task};
use crate::heads::vocab::{build_char_vocab, CharVocab};
use crate::metrics::{mean, AsrReport};
use crate::rng::derive_seed;
use crate::ssl::{check_mode_contract, train_ssl, write_run, Checkpoint, Mode, SslData, TrainRunConfig};
use crate::synth::{add_noise, generate, SynthConfig};
use crate::textio::{fmt_sig, write_atomic, KeyValues};
use crate::units::{
    assign_all, extract_manifest_features, sample_kmeans_corpus, stack_frames, train_kmeans, Codebook, FeatureKind, FrameFeatures, KMeansConfig,
    TargetSequence, DEFAULT_TEACHER_LAYER, KMEANS_CAP_SEC,
};

pub use recipe::{CorpusRef, ExperimentKind, Recipe, StageDecl};
pub use reference::{reference_block, reference_values, ReferenceValue, REFERENCE_LABEL};

pub const LOW_RESOURCE_MINUTES: [f64; 2] = [10.0, 30.0];
pub const DIALECT_VOCAB_SIZE: usize = 63;

/// First 16 hex digits of the SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn opt_pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), pct)
}

fn num(x: f64) -> String {
    fmt_sig(x, 10)
}

fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    rows.into_iter().map(|r| serde_json::to_string(&r).expect("plain data serializes") + "\n").collect()
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub store: PathBuf,
    pub manifest: Vec<ManifestEntry>,
    pub transcripts: Transcripts,
}

impl LoadedCorpus {
    pub fn split(&self, split: Split) -> Vec<ManifestEntry> {
        self.manifest.iter().filter(|e| e.split == split).cloned().collect()
    }
}

/// Settings for the synthetic corpus generators.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSettings {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Training utterances of the scarce dialect (dialect fixture only).
    pub scarce_train: usize,
    pub max_words: usize,
    pub max_word_len: usize,
}

impl CorpusSettings {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known(&["train", "valid", "test", "scarce_train", "max_words", "max_word_len"])?;
        let train = kv.get_or("train", 60)?;
        let s = Self {
            train,
            valid: kv.get_or("valid", 8)?,
            test: kv.get_or("test", 10)?,
            scarce_train: kv.get_or("scarce_train", train / 4)?,
            max_words: kv.get_or("max_words", 3)?,
            max_word_len: kv.get_or("max_word_len", 3)?,
        };
        if s.train == 0 || s.valid == 0 || s.test == 0 || s.scarce_train == 0 {
            return Err(Error::Config("corpus split sizes must be positive".into()));
        }
        Ok(s)
    }

    pub fn synth_config(&self, fixture: &str, seed: u64) -> Result<SynthConfig> {
        let base = match fixture {
            "three_languages" => SynthConfig::three_languages(self.train, self.valid, self.test, seed),
            "yoruba_dialects" => SynthConfig::yoruba_dialects(self.train, self.scarce_train, self.valid, self.test, seed),
            other => return Err(Error::Config(format!("unknown synthetic corpus `{other}`"))),
        };
        Ok(SynthConfig { max_words: self.max_words, max_word_len: self.max_word_len, ..base })
    }
}

pub fn load_corpus_dir(dir: &Path) -> Result<LoadedCorpus> {
    let manifest = read_manifest(&dir.join("manifest.tsv"))?;
    let tpath = dir.join("transcripts.tsv");
    let transcripts = if tpath.is_file() { read_transcripts(&tpath)? } else { Transcripts::new() };
    Ok(LoadedCorpus { store: dir.to_path_buf(), manifest, transcripts })
}

/// Copies the test split of `corpus` into `store` with white noise at `snr_db`.
pub fn noisy_copy(corpus: &LoadedCorpus, snr_db: f64, seed: u64, store: &Path) -> Result<LoadedCorpus> {
    let mut manifest = Vec::new();
    let mut transcripts = Transcripts::new();
    for e in corpus.manifest.iter().filter(|e| e.split == Split::Test) {
        let rec = read_store_audio(&corpus.store.join(&e.path), &e.id, &e.lang, &e.source)?;
        let noisy = add_noise(&rec.samples, snr_db, derive_seed(seed, &format!("noise/{}", e.id)));
        write_wav(&store.join(&e.path), &noisy, SAMPLE_RATE)?;
        manifest.push(e.clone());
        if let Some(t) = corpus.transcripts.get(&e.id) {
            transcripts.insert(e.id.clone(), t.clone());
        }
    }
    write_manifest(&store.join("manifest.tsv"), &manifest)?;
    write_transcripts(&store.join("transcripts.tsv"), &transcripts)?;
    Ok(LoadedCorpus { store: store.to_path_buf(), manifest, transcripts })
}

/// Vocabulary over `texts`; `size = None` makes it exactly as large as needed.
pub fn vocab_for<'a>(texts: impl IntoIterator<Item = &'a str> + Clone, size: Option<usize>, min_count: usize) -> Result<CharVocab> {
    let size = match size {
        Some(s) => s,
        None => {
            let chars: BTreeSet<char> = texts.clone().into_iter().flat_map(|t| crate::heads::vocab::normalize_text(t).chars().collect::<Vec<_>>()).collect();
            chars.len() + 1
        }
    };
    build_char_vocab(texts, size, min_count)
}

struct Run<'a> {
    recipe: &'a Recipe,
    out: PathBuf,
}

impl Run<'_> {
    fn stage<T>(&self, name: &str, f: impl FnOnce(KeyValues) -> Result<T>) -> Result<T> {
        let (kv, text) = self.recipe.stage_config(name).map_err(|e| e.in_stage(name))?;
        log::info!("stage {name} config_hash={}", config_hash(&text));
        write_atomic(&self.out.join("configs").join(format!("{name}.txt")), text.as_bytes()).map_err(|e| e.in_stage(name))?;
        f(kv).map_err(|e| e.in_stage(name))
    }

    fn seed(&self, label: &str) -> u64 {
        derive_seed(self.recipe.seed, label)
    }

    fn corpus(&self, r: &CorpusRef, kv: &KeyValues) -> Result<LoadedCorpus> {
        match r {
            CorpusRef::Synthetic(name) => {
                let settings = CorpusSettings::from_kv(kv)?;
                let store = self.out.join("corpus").join(name);
                let c = generate(&settings.synth_config(name, self.seed("corpus"))?, &store)?;
                Ok(LoadedCorpus { store, manifest: c.manifest, transcripts: c.transcripts })
            }
            CorpusRef::Dir(dir) => load_corpus_dir(dir),
            CorpusRef::Noisy(_) => Err(Error::Config("a noisy copy cannot be the training corpus".into())),
        }
    }

    fn train_config(&self, kv: &mut KeyValues, mode: Mode, label: &str) -> Result<TrainRunConfig> {
        kv.set_default("mode", mode.to_string());
        kv.set_default("seed", self.seed(label).to_string());
        let cfg = TrainRunConfig::from_kv(kv)?;
        if cfg.mode != mode {
            return Err(Error::Config(format!("{label} runs in {mode} mode, config says {}", cfg.mode)));
        }
        Ok(cfg)
    }

    fn pretrain(&self, cfg: &TrainRunConfig, corpus: &LoadedCorpus, targets: &[TargetSequence], init: Option<&Checkpoint>, codebook: &Codebook, dir: &Path) -> Result<Checkpoint> {
        let data = SslData::load(&corpus.split(Split::Train), &corpus.split(Split::Valid), &corpus.store, targets)?;
        let outcome = train_ssl(cfg, &data, init, codebook, Some(dir))?;
        write_run(dir, cfg, &outcome)?;
        log::info!(
            "{} pretraining: selected step {}, train loss {:?} -> {:?}",
            cfg.mode,
            outcome.selected_step,
            outcome.initial_train_loss(),
            outcome.final_train_loss()
        );
        Ok(outcome.best)
    }

    /// Units config: k-means settings plus `features`, `layer` and `cap_sec`.
    fn units_settings(kv: &KeyValues) -> Result<(KMeansConfig, Option<FeatureKind>, usize, f64)> {
        let mut known: Vec<&str> = KMeansConfig::KEYS.to_vec();
        known.extend(["features", "layer", "cap_sec"]);
        kv.check_known(&known)?;
        let kind = kv.get_str("features").map(FeatureKind::parse).transpose()?;
        Ok((KMeansConfig::from_kv(kv)?, kind, kv.get_or("layer", DEFAULT_TEACHER_LAYER)?, kv.get_or("cap_sec", KMEANS_CAP_SEC)?))
    }

    fn learn_codebook(&self, corpus: &LoadedCorpus, features: &[FrameFeatures], kcfg: &KMeansConfig, cap: f64, label: &str) -> Result<Codebook> {
        let sample: BTreeSet<String> = sample_kmeans_corpus(&corpus.split(Split::Train), cap, self.seed(label)).into_iter().map(|e| e.id).collect();
        let chosen: Vec<FrameFeatures> = features.iter().filter(|f| sample.contains(&f.segment_id)).cloned().collect();
        let matrix = stack_frames(&chosen)?;
        let kind = chosen.first().map_or(FeatureKind::LogMel, |f| f.kind);
        let kcfg = KMeansConfig { seed: derive_seed(kcfg.seed, label), ..kcfg.clone() };
        Ok(train_kmeans(matrix.view(), kind, &kcfg)?.codebook)
    }

    fn ssl_entries(corpus: &LoadedCorpus) -> Vec<ManifestEntry> {
        corpus.manifest.iter().filter(|e| e.split != Split::Test).cloned().collect()
    }

    /// Units on spectral features and one scratch pretraining run.
    fn scratch_encoder(&self, corpus: &LoadedCorpus) -> Result<Checkpoint> {
        if let Some(p) = &self.recipe.encoder {
            return Checkpoint::load(p);
        }
        let (codebook, targets) = self.stage("units", |kv| {
            let (kcfg, kind, _, cap) = Self::units_settings(&kv)?;
            let kind = kind.unwrap_or(FeatureKind::LogMel);
            if matches!(kind, FeatureKind::TeacherLayer(_)) {
                return Err(Error::Config("units for a scratch encoder need spectral features".into()));
            }
            let feats = extract_manifest_features(&Self::ssl_entries(corpus), &corpus.store, kind, None)?;
            let codebook = self.learn_codebook(corpus, &feats, &kcfg, cap, "units")?;
            codebook.save(&self.out.join("units").join("codebook.bin"))?;
            let targets = assign_all(&feats, &codebook)?;
            Ok((codebook, targets))
        })?;
        self.stage("pretrain", |mut kv| {
            let cfg = self.train_config(&mut kv, Mode::Scratch, "pretrain")?;
            self.pretrain(&cfg, corpus, &targets, None, &codebook, &self.out.join("pretrain").join("scratch"))
        })
    }

    fn labeled(&self, corpus: &LoadedCorpus, entries: &[ManifestEntry], with_text: bool) -> Result<Vec<LabeledUtterance>> {
        load_labeled(entries, &corpus.store, with_text.then_some(&corpus.transcripts))
    }

    fn finetune_config(kv: &KeyValues, task: Task) -> Result<FinetuneConfig> {
        if kv.keys().next().is_none() {
            return Ok(FinetuneConfig::new(task));
        }
        let mut kv = kv.clone();
        kv.set_default("task", task.to_string());
        FinetuneConfig::from_kv(&kv, Some(task))
    }

    fn check_outputs(&self) -> Result<()> {
        for o in &self.recipe.outputs {
            if !self.out.join(o).is_file() {
                return Err(Error::Data(format!("recipe promises output {o}, which was not produced")));
            }
        }
        Ok(())
    }
}

fn african_present(languages: &[String]) -> BTreeSet<String> {
    let allow = african_allowlist();
    languages.iter().filter(|l| allow.contains(*l)).cloned().collect()
}

/// ASR training data: transcripts required, per-language hour budget applied.
fn asr_training_entries(corpus: &LoadedCorpus, hours: f64, seed: u64) -> Vec<ManifestEntry> {
    sample_asr_hours(&corpus.split(Split::Train), hours, seed)
}

// ---------------------------------------------------------------- variants

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantRow {
    pub model: String,
    pub slid_f1_avg_star: f64,
    pub slid_f1_avg: Option<f64>,
    pub asr_wer_avg_star: f64,
    pub asr_wer_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantReport {
    pub rows: Vec<VariantRow>,
}

impl VariantReport {
    pub const COLUMNS: [&'static str; 4] = ["slid_f1_avg_star", "slid_f1_avg", "asr_wer_avg_star", "asr_wer_avg"];

    pub fn to_tsv(&self) -> String {
        let mut s = format!("model\t{}\n", Self::COLUMNS.join("\t"));
        for r in &self.rows {
            s += &format!("{}\t{}\t{}\t{}\t{}\n", r.model, num(r.slid_f1_avg_star), opt_num(r.slid_f1_avg), num(r.asr_wer_avg_star), opt_num(r.asr_wer_avg));
        }
        s
    }

    pub fn to_jsonl(&self) -> String {
        jsonl(&self.rows)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<14} {:>9} {:>9} {:>9} {:>9}\n", "model", "F1 avg*", "F1 avg", "WER avg*", "WER avg");
        for r in &self.rows {
            s += &format!(
                "{:<14} {:>9} {:>9} {:>9} {:>9}\n",
                r.model,
                pct(r.slid_f1_avg_star),
                opt_pct(r.slid_f1_avg),
                pct(r.asr_wer_avg_star),
                opt_pct(r.asr_wer_avg)
            );
        }
        s + &reference_block("variant_comparison")
    }
}

/// Everything a variant comparison produces, for callers that want more than the report.
#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub report: VariantReport,
    pub ssl: BTreeMap<Mode, Checkpoint>,
    pub slid: BTreeMap<Mode, GridResult>,
    pub asr: BTreeMap<Mode, GridResult>,
    pub vocab: CharVocab,
}

pub fn run_variant_comparison(recipe: &Recipe, out: &Path) -> Result<VariantOutcome> {
    let run = Run { recipe, out: out.to_path_buf() };
    let corpus = run.stage("corpus", |kv| run.corpus(&recipe.train_corpus, &kv))?;
    let ssl_entries = Run::ssl_entries(&corpus);

    // Teacher: one scratch iteration on spectral units.
    let (units_kv, _) = recipe.stage_config("units").map_err(|e| e.in_stage("units"))?;
    let (kcfg, _, layer, cap) = Run::units_settings(&units_kv).map_err(|e| e.in_stage("units"))?;
    let (teacher, spectral) = run.stage("bootstrap", |mut kv| {
        let k = kv.remove("k").map(|k| k.parse::<usize>().map_err(|_| Error::Config(format!("bootstrap k `{k}` is not an integer")))).transpose()?;
        let cfg = run.train_config(&mut kv, Mode::Scratch, "bootstrap")?;
        let feats = extract_manifest_features(&ssl_entries, &corpus.store, FeatureKind::LogMel, None)?;
        let kc = KMeansConfig { k: k.unwrap_or(kcfg.k), ..kcfg.clone() };
        let codebook = run.learn_codebook(&corpus, &feats, &kc, cap, "bootstrap-units")?;
        codebook.save(&out.join("bootstrap").join("codebook.bin"))?;
        let targets = assign_all(&feats, &codebook)?;
        let teacher = run.pretrain(&cfg, &corpus, &targets, None, &codebook, &out.join("bootstrap"))?;
        Ok((teacher, feats))
    })?;

    let (original, original_targets, new, new_targets) = run.stage("units", |_| {
        let original = Codebook::load(&out.join("bootstrap").join("codebook.bin"))?;
        let original_targets = assign_all(&spectral, &original)?;
        let feats = extract_manifest_features(&ssl_entries, &corpus.store, FeatureKind::TeacherLayer(layer), Some(&teacher))?;
        let new = run.learn_codebook(&corpus, &feats, &kcfg, cap, "units")?;
        new.save(&out.join("units").join("codebook.bin"))?;
        let new_targets = assign_all(&feats, &new)?;
        Ok((original, original_targets, new, new_targets))
    })?;

    let ssl = run.stage("pretrain", |kv| {
        if kv.get_str("mode").is_some() {
            return Err(Error::Config("pretrain runs every mode; drop `mode` from its config".into()));
        }
        let mut models = BTreeMap::new();
        let mut metas = Vec::new();
        for mode in Mode::ALL {
            let mut kv = kv.clone();
            if mode != Mode::Scratch {
                kv.set_default("init_checkpoint", out.join("bootstrap").join("best.ckpt").display().to_string());
            }
            let stage_dir = if mode == Mode::MaftOriginal { "bootstrap" } else { "units" };
            kv.set_default("codebook", out.join(stage_dir).join("codebook.bin").display().to_string());
            let mut cfg = run.train_config(&mut kv, mode, &format!("pretrain/{mode}"))?;
            if !crate::ssl::EncoderConfig::KEYS.iter().any(|k| kv.get_str(k).is_some()) {
                cfg.encoder = teacher.encoder.clone();
            }
            let dir = out.join("pretrain").join(mode.to_string());
            let best = match mode {
                Mode::MaftOriginal => run.pretrain(&cfg, &corpus, &original_targets, Some(&teacher), &original, &dir)?,
                Mode::MaftNew => run.pretrain(&cfg, &corpus, &new_targets, Some(&teacher), &new, &dir)?,
                Mode::Scratch => run.pretrain(&cfg, &corpus, &new_targets, None, &new, &dir)?,
            };
            metas.push(best.meta.clone());
            models.insert(mode, best);
        }
        check_mode_contract(&metas)?;
        Ok(models)
    })?;

    let test = run.labeled(&corpus, &corpus.split(Split::Test), true)?;
    let valid = run.labeled(&corpus, &corpus.split(Split::Valid), true)?;
    let slid = run.stage("slid", |kv| {
        let cfg = Run::finetune_config(&kv, Task::Slid)?;
        let train = run.labeled(&corpus, &cap_slid_data(&corpus.split(Split::Train), cfg.slid_cap, run.seed("slid-cap")), false)?;
        let languages = language_set(&train);
        let african = african_present(&languages);
        let data = TaskData { train: &train, valid: &valid, test: &test, languages: &languages, vocab: None };
        let mut grids = BTreeMap::new();
        for (mode, ck) in &ssl {
            let grid = finetune_grid(ck, &data, &cfg)?;
            write_grid(&out.join("slid").join(mode.to_string()), &cfg, &grid, &african)?;
            grids.insert(*mode, grid);
        }
        Ok(grids)
    })?;
    let (asr, vocab) = run.stage("asr", |kv| {
        let cfg = Run::finetune_config(&kv, Task::Asr)?;
        let train = run.labeled(&corpus, &asr_training_entries(&corpus, cfg.asr_hours, run.seed("asr-hours")), true)?;
        let vocab = vocab_for(train.iter().map(|u| u.text.as_str()), None, 1)?;
        vocab.save(&out.join("asr").join("vocab.txt"))?;
        let languages = language_set(&train);
        let african = african_present(&languages);
        let data = TaskData { train: &train, valid: &valid, test: &test, languages: &languages, vocab: Some(&vocab) };
        let mut grids = BTreeMap::new();
        for (mode, ck) in &ssl {
            let grid = finetune_grid(ck, &data, &cfg)?;
            write_grid(&out.join("asr").join(mode.to_string()), &cfg, &grid, &african)?;
            grids.insert(*mode, grid);
        }
        Ok((grids, vocab))
    })?;

    let report = run.stage("report", |_| {
        let mut rows = Vec::new();
        for mode in Mode::ALL {
            let (s, a) = (&slid[&mode], &asr[&mode]);
            let f1 = s.slid_report(&african_present(&s.languages))?;
            let wer = a.asr_report(&african_present(&a.languages))?;
            rows.push(VariantRow {
                model: mode.to_string(),
                slid_f1_avg_star: f1.avg_star,
                slid_f1_avg: f1.avg,
                asr_wer_avg_star: wer.avg_star_wer,
                asr_wer_avg: wer.avg_wer,
            });
        }
        let report = VariantReport { rows };
        write_atomic(&out.join("report.tsv"), report.to_tsv().as_bytes())?;
        write_atomic(&out.join("report.jsonl"), report.to_jsonl().as_bytes())?;
        write_atomic(&out.join("report.txt"), report.to_table().as_bytes())?;
        Ok(report)
    })?;
    run.check_outputs()?;
    Ok(VariantOutcome { report, ssl, slid, asr, vocab })
}

// ------------------------------------------------------------ cross corpus

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossRow {
    pub corpus: String,
    pub lang: String,
    pub trained: bool,
    pub cer: Option<f64>,
    pub wer: Option<f64>,
    pub utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCorpusTable {
    pub corpus: String,
    pub rows: Vec<CrossRow>,
    /// Means over trained languages.
    pub avg_cer: Option<f64>,
    pub avg_wer: Option<f64>,
}

/// Scores every model (one per seed) on `eval` and averages; languages the
/// models never saw get an `untrained` row.
pub fn run_cross_corpus(label: &str, models: &[Checkpoint], vocab: &CharVocab, trained: &[String], eval: &[LabeledUtterance]) -> Result<CrossCorpusTable> {
    let trained_set: BTreeSet<&str> = trained.iter().map(String::as_str).collect();
    let scored: Vec<LabeledUtterance> = eval.iter().filter(|u| trained_set.contains(u.lang.as_str())).cloned().collect();
    let mut reports: Vec<AsrReport> = Vec::new();
    if !scored.is_empty() {
        for m in models {
            reports.push(asr_report_of(&predict_with(m, &scored, Some(vocab))?, &BTreeSet::new())?);
        }
    }
    let merged = crate::heads::finetune::mean_asr_reports(&reports);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for u in eval {
        *counts.entry(u.lang.as_str()).or_default() += 1;
    }
    let rows: Vec<CrossRow> = counts
        .iter()
        .map(|(lang, &n)| {
            let score = merged.per_language.iter().find(|s| s.lang == *lang);
            CrossRow {
                corpus: label.to_string(),
                lang: lang.to_string(),
                trained: trained_set.contains(lang),
                cer: score.map(|s| s.cer),
                wer: score.map(|s| s.wer),
                utterances: n,
            }
        })
        .collect();
    let trained_rows: Vec<&CrossRow> = rows.iter().filter(|r| r.cer.is_some()).collect();
    Ok(CrossCorpusTable {
        corpus: label.to_string(),
        avg_cer: mean(trained_rows.iter().filter_map(|r| r.cer)),
        avg_wer: mean(trained_rows.iter().filter_map(|r| r.wer)),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorpusReport {
    /// In-domain table first, then one per evaluation corpus.
    pub tables: Vec<CrossCorpusTable>,
}

impl CrossCorpusReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("corpus\tlang\tstatus\tcer\twer\tutterances\n");
        for t in &self.tables {
            for r in &t.rows {
                let status = if r.trained { "trained" } else { "untrained" };
                s += &format!("{}\t{}\t{status}\t{}\t{}\t{}\n", t.corpus, r.lang, opt_num(r.cer), opt_num(r.wer), r.utterances);
            }
            s += &format!("{}\tavg\t\t{}\t{}\t\n", t.corpus, opt_num(t.avg_cer), opt_num(t.avg_wer));
        }
        s
    }

    pub fn to_jsonl(&self) -> String {
        jsonl(&self.tables)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for t in &self.tables {
            let langs: Vec<&str> = t.rows.iter().map(|r| r.lang.as_str()).collect();
            s += &format!("{}\n{:<5}", t.corpus, "");
            for l in &langs {
                s += &format!(" {l:>9}");
            }
            s += &format!(" {:>9}\n", "Avg");
            for (name, pick) in [("CER", true), ("WER", false)] {
                s += &format!("{name:<5}");
                for r in &t.rows {
                    let v = if pick { r.cer } else { r.wer };
                    s += &format!(" {:>9}", if r.trained { opt_pct(v) } else { "untrained".to_string() });
                }
                s += &format!(" {:>9}\n", opt_pct(if pick { t.avg_cer } else { t.avg_wer }));
            }
            s += "\n";
        }
        s + &reference_block("cross_corpus")
    }
}

pub fn run_cross_corpus_recipe(recipe: &Recipe, out: &Path) -> Result<CrossCorpusReport> {
    let run = Run { recipe, out: out.to_path_buf() };
    let corpus = run.stage("corpus", |kv| run.corpus(&recipe.train_corpus, &kv))?;
    let encoder = run.scratch_encoder(&corpus)?;
    let test = run.labeled(&corpus, &corpus.split(Split::Test), true)?;
    let (grid, vocab) = run.stage("asr", |kv| asr_grid(&run, &corpus, &encoder, &kv, None, &test, &out.join("asr")))?;
    let models: Vec<Checkpoint> = grid.best_runs().map(|r| r.model.clone()).collect();
    let report = run.stage("evaluate", |_| {
        let mut tables = vec![run_cross_corpus("in_domain", &models, &vocab, &grid.languages, &test)?];
        for (i, r) in recipe.eval_corpora.iter().enumerate() {
            let eval_corpus = match r {
                CorpusRef::Noisy(db) => noisy_copy(&corpus, *db, run.seed(&format!("eval/{i}")), &out.join("eval").join(format!("noisy_{db}db")))?,
                CorpusRef::Dir(dir) => load_corpus_dir(dir)?,
                CorpusRef::Synthetic(name) => {
                    let c = generate(&CorpusSettings::from_kv(&KeyValues::default())?.synth_config(name, run.seed(&format!("eval/{i}")))?, &out.join("eval").join(name))?;
                    LoadedCorpus { store: out.join("eval").join(name), manifest: c.manifest, transcripts: c.transcripts }
                }
            };
            let entries: Vec<ManifestEntry> = if eval_corpus.manifest.iter().any(|e| e.split == Split::Test) {
                eval_corpus.split(Split::Test)
            } else {
                eval_corpus.manifest.clone()
            };
            let eval = run.labeled(&eval_corpus, &entries, true)?;
            tables.push(run_cross_corpus(&r.label(), &models, &vocab, &grid.languages, &eval)?);
        }
        Ok(CrossCorpusReport { tables })
    })?;
    run.stage("report", |_| {
        write_atomic(&out.join("report.tsv"), report.to_tsv().as_bytes())?;
        write_atomic(&out.join("report.jsonl"), report.to_jsonl().as_bytes())?;
        write_atomic(&out.join("report.txt"), report.to_table().as_bytes())
    })?;
    run.check_outputs()?;
    Ok(report)
}

/// ASR fine-tuning grid on the training split (after `entries_override`, if given).
fn asr_grid(
    run: &Run,
    corpus: &LoadedCorpus,
    encoder: &Checkpoint,
    kv: &KeyValues,
    shared_vocab: Option<&CharVocab>,
    test: &[LabeledUtterance],
    dir: &Path,
) -> Result<(GridResult, CharVocab)> {
    let cfg = Run::finetune_config(kv, Task::Asr)?;
    let train = run.labeled(corpus, &asr_training_entries(corpus, cfg.asr_hours, run.seed("asr-hours")), true)?;
    asr_grid_on(run, corpus, encoder, &cfg, &train, shared_vocab, test, dir)
}

#[allow(clippy::too_many_arguments)]
fn asr_grid_on(
    run: &Run,
    corpus: &LoadedCorpus,
    encoder: &Checkpoint,
    cfg: &FinetuneConfig,
    train: &[LabeledUtterance],
    shared_vocab: Option<&CharVocab>,
    test: &[LabeledUtterance],
    dir: &Path,
) -> Result<(GridResult, CharVocab)> {
    let vocab = match shared_vocab {
        Some(v) => v.clone(),
        None => {
            let v = vocab_for(train.iter().map(|u| u.text.as_str()), None, 1)?;
            v.save(&dir.join("vocab.txt"))?;
            v
        }
    };
    let valid = run.labeled(corpus, &corpus.split(Split::Valid), true)?;
    let languages = language_set(train);
    let data = TaskData { train, valid: &valid, test, languages: &languages, vocab: Some(&vocab) };
    let grid = finetune_grid(encoder, &data, cfg)?;
    write_grid(dir, cfg, &grid, &african_present(&languages))?;
    Ok((grid, vocab))
}

// ------------------------------------------------------------ low resource

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowResourceRow {
    pub model: String,
    pub budget_min: f64,
    pub lang: String,
    pub wer: f64,
    pub cer: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LowResourceReport {
    /// Per-language rows plus one `avg` row per budget.
    pub rows: Vec<LowResourceRow>,
    /// Languages whose training data fell short of a budget: `(budget_min, lang, seconds available)`.
    pub short: Vec<(f64, String, f64)>,
}

pub const LOW_RESOURCE_CSV_HEADER: &str = "model,budget_min,lang,wer,cer";

impl LowResourceReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{LOW_RESOURCE_CSV_HEADER}\n");
        for r in &self.rows {
            s += &format!("{},{},{},{},{}\n", r.model, r.budget_min, r.lang, num(r.wer), num(r.cer));
        }
        s
    }

    pub fn to_jsonl(&self) -> String {
        jsonl(&self.rows)
    }

    pub fn avg_wer(&self, budget_min: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.budget_min == budget_min && r.lang == "avg").map(|r| r.wer)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<10} {:>7} {:<6} {:>8} {:>8}\n", "model", "budget", "lang", "WER", "CER");
        for r in &self.rows {
            s += &format!("{:<10} {:>7} {:<6} {:>8} {:>8}\n", r.model, r.budget_min, r.lang, pct(r.wer), pct(r.cer));
        }
        for (b, lang, secs) in &self.short {
            s += &format!("note: {lang} has {secs:.1} s of training audio, under the {b}-minute budget\n");
        }
        s + &reference_block("low_resource")
    }
}

pub fn parse_low_resource_csv(text: &str) -> Result<LowResourceReport> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(LOW_RESOURCE_CSV_HEADER) {
        return Err(Error::parse("low-resource csv", format!("header must be `{LOW_RESOURCE_CSV_HEADER}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let [model, budget, lang, wer, cer] = f[..] else {
            return Err(Error::parse("low-resource csv", format!("line {}: expected 5 fields", i + 2)));
        };
        let p = |v: &str| v.parse::<f64>().map_err(|_| Error::parse("low-resource csv", format!("line {}: bad number `{v}`", i + 2)));
        rows.push(LowResourceRow { model: model.into(), budget_min: p(budget)?, lang: lang.into(), wer: p(wer)?, cer: p(cer)? });
    }
    Ok(LowResourceReport { rows, short: Vec::new() })
}

pub fn run_low_resource(recipe: &Recipe, out: &Path) -> Result<LowResourceReport> {
    let run = Run { recipe, out: out.to_path_buf() };
    let budgets: Vec<f64> = match recipe.setting("budgets_min") {
        Some(s) => s.split(',').map(|b| b.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad budget `{b}`")))).collect::<Result<_>>()?,
        None => LOW_RESOURCE_MINUTES.to_vec(),
    };
    if budgets.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::Config("budgets must be positive minutes".into()));
    }
    let corpus = run.stage("corpus", |kv| run.corpus(&recipe.train_corpus, &kv))?;
    let encoder = run.scratch_encoder(&corpus)?;
    let model = encoder.meta.get("mode").cloned().unwrap_or_else(|| "encoder".to_string());
    let test = run.labeled(&corpus, &corpus.split(Split::Test), true)?;
    let report = run.stage("asr", |kv| {
        let cfg = Run::finetune_config(&kv, Task::Asr)?;
        let all_train = corpus.split(Split::Train);
        // One vocabulary for every budget, so the two runs differ only in data.
        let vocab = vocab_for(all_train.iter().filter_map(|e| corpus.transcripts.get(&e.id)).map(String::as_str), None, 1)?;
        vocab.save(&out.join("asr").join("vocab.txt"))?;
        let mut report = LowResourceReport::default();
        for &b in &budgets {
            let entries = sample_asr_hours(&all_train, b / 60.0, run.seed(&format!("low-resource/{b}")));
            let mut by_lang: BTreeMap<&str, f64> = BTreeMap::new();
            for e in &all_train {
                *by_lang.entry(&e.lang).or_default() += e.duration;
            }
            for (lang, secs) in by_lang {
                if secs < b * 60.0 {
                    log::warn!("{lang}: {secs:.1} s available, under the {b}-minute budget; using all of it");
                    report.short.push((b, lang.to_string(), secs));
                }
            }
            let train = run.labeled(&corpus, &entries, true)?;
            let (grid, _) = asr_grid_on(&run, &corpus, &encoder, &cfg, &train, Some(&vocab), &test, &out.join("asr").join(format!("{b}min")))?;
            let r = grid.asr_report(&african_present(&grid.languages))?;
            for s in &r.per_language {
                report.rows.push(LowResourceRow { model: model.clone(), budget_min: b, lang: s.lang.clone(), wer: s.wer, cer: s.cer });
            }
            report.rows.push(LowResourceRow {
                model: model.clone(),
                budget_min: b,
                lang: "avg".into(),
                wer: r.avg_wer.unwrap_or(r.avg_star_wer),
                cer: r.avg_cer.unwrap_or(r.avg_star_cer),
            });
        }
        Ok(report)
    })?;
    run.stage("report", |_| {
        write_atomic(&out.join("report.csv"), report.to_csv().as_bytes())?;
        write_atomic(&out.join("report.jsonl"), report.to_jsonl().as_bytes())?;
        write_atomic(&out.join("report.txt"), report.to_table().as_bytes())
    })?;
    run.check_outputs()?;
    Ok(report)
}

// ------------------------------------------------------------ multidialect

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DialectScore {
    pub dialect: String,
    pub cer: f64,
    pub wer: f64,
    pub utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DialectReport {
    pub dialects: Vec<DialectScore>,
    pub avg_cer: f64,
    pub avg_wer: f64,
    /// The one vocabulary file every dialect was decoded with.
    pub vocab: String,
    pub vocab_size: usize,
}

impl DialectReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("dialect\tcer\twer\tutterances\n");
        for d in &self.dialects {
            s += &format!("{}\t{}\t{}\t{}\n", d.dialect, num(d.cer), num(d.wer), d.utterances);
        }
        s + &format!("avg\t{}\t{}\t\n", num(self.avg_cer), num(self.avg_wer))
    }

    pub fn to_jsonl(&self) -> String {
        jsonl([self])
    }

    pub fn to_table(&self) -> String {
        let mut head = String::new();
        let mut sub = String::new();
        let mut vals = String::new();
        for d in &self.dialects {
            head += &format!(" {:^17}", d.dialect);
            sub += &format!(" {:>8} {:>8}", "CER", "WER");
            vals += &format!(" {:>8} {:>8}", pct(d.cer), pct(d.wer));
        }
        format!(
            "{head} {:^17}\n{sub} {:>8} {:>8}\n{vals} {:>8} {:>8}\nvocab {} ({} symbols)\n",
            "Avg",
            "CER",
            "WER",
            pct(self.avg_cer),
            pct(self.avg_wer),
            self.vocab,
            self.vocab_size
        ) + &reference_block("multidialect")
    }
}

pub fn run_multidialect(recipe: &Recipe, out: &Path) -> Result<DialectReport> {
    let run = Run { recipe, out: out.to_path_buf() };
    let dialects: Vec<String> = recipe
        .setting("dialects")
        .unwrap_or("standard,ife,ilaje")
        .split(',')
        .map(|d| d.trim().to_string())
        .filter(|d| !d.is_empty())
        .collect();
    let corpus = run.stage("corpus", |kv| {
        let c = run.corpus(&recipe.train_corpus, &kv)?;
        for e in &c.manifest {
            if !dialects.contains(&e.source) {
                return Err(Error::Data(format!("utterance {} has unknown dialect label `{}`", e.id, e.source)));
            }
        }
        Ok(c)
    })?;
    let vocab = run.stage("vocab", |kv| {
        kv.check_known(&["size", "min_count"])?;
        let size = kv.get_or("size", DIALECT_VOCAB_SIZE)?;
        let train = corpus.split(Split::Train);
        let v = vocab_for(train.iter().filter_map(|e| corpus.transcripts.get(&e.id)).map(String::as_str), Some(size), kv.get_or("min_count", 1)?)?;
        v.save(&out.join("vocab.txt"))?;
        Ok(v)
    })?;
    let encoder = run.scratch_encoder(&corpus)?;
    let test = run.labeled(&corpus, &corpus.split(Split::Test), true)?;
    let grid = run.stage("asr", |kv| Ok(asr_grid(&run, &corpus, &encoder, &kv, Some(&vocab), &test, &out.join("asr"))?.0))?;
    let report = run.stage("report", |_| {
        let source: BTreeMap<&str, &str> = test.iter().map(|u| (u.id.as_str(), u.source.as_str())).collect();
        let reports: Vec<AsrReport> = grid
            .best_runs()
            .map(|r| {
                let by_dialect: Vec<Prediction> = r.test_predictions.iter().map(|p| Prediction { lang: source[p.id.as_str()].to_string(), ..p.clone() }).collect();
                asr_report_of(&by_dialect, &BTreeSet::new())
            })
            .collect::<Result<_>>()?;
        let merged = crate::heads::finetune::mean_asr_reports(&reports);
        let scores: Vec<DialectScore> = dialects
            .iter()
            .filter_map(|d| merged.per_language.iter().find(|s| s.lang == *d))
            .map(|s| DialectScore { dialect: s.lang.clone(), cer: s.cer, wer: s.wer, utterances: s.utterances })
            .collect();
        let report = DialectReport {
            avg_cer: mean(scores.iter().map(|s| s.cer)).unwrap_or(0.0),
            avg_wer: mean(scores.iter().map(|s| s.wer)).unwrap_or(0.0),
            dialects: scores,
            vocab: "vocab.txt".into(),
            vocab_size: vocab.size(),
        };
        write_atomic(&out.join("report.tsv"), report.to_tsv().as_bytes())?;
        write_atomic(&out.join("report.jsonl"), report.to_jsonl().as_bytes())?;
        write_atomic(&out.join("report.txt"), report.to_table().as_bytes())?;
        Ok(report)
    })?;
    run.check_outputs()?;
    Ok(report)
}

/// Runs whichever experiment the recipe names and returns the report files written.
pub fn run_recipe(recipe: &Recipe, out: &Path) -> Result<Vec<PathBuf>> {
    write_atomic(&out.join("recipe.txt"), recipe.text.as_bytes())?;
    log::info!("experiment {} ({}) config_hash={}", recipe.name, recipe.kind, config_hash(&recipe.text));
    match recipe.kind {
        ExperimentKind::VariantComparison => run_variant_comparison(recipe, out).map(|_| ()),
        ExperimentKind::CrossCorpus => run_cross_corpus_recipe(recipe, out).map(|_| ()),
        ExperimentKind::LowResource => run_low_resource(recipe, out).map(|_| ()),
        ExperimentKind::Multidialect => run_multidialect(recipe, out).map(|_| ()),
    }?;
    Ok(recipe.outputs.iter().map(|o| out.join(o)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_resource_csv_round_trips() {
        let r = LowResourceReport {
            rows: vec![LowResourceRow { model: "scratch".into(), budget_min: 10.0, lang: "hau".into(), wer: 0.25, cer: 0.125 }],
            short: vec![],
        };
        let csv = r.to_csv();
        assert!(csv.starts_with("model,budget_min,lang,wer,cer\n"));
        assert_eq!(parse_low_resource_csv(&csv).unwrap().rows, r.rows);
        assert!(parse_low_resource_csv("a,b\n").is_err());
    }

    #[test]
    fn variant_report_has_three_rows_and_four_metrics() {
        let row = |m: &str| VariantRow { model: m.into(), slid_f1_avg_star: 0.9, slid_f1_avg: Some(0.9), asr_wer_avg_star: 0.1, asr_wer_avg: None };
        let r = VariantReport { rows: Mode::ALL.iter().map(|m| row(&m.to_string())).collect() };
        let tsv = r.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.split('\t').count() == 5));
        assert!(r.to_table().contains(REFERENCE_LABEL));
    }

    #[test]
    fn untrained_languages_get_their_own_rows() {
        let utt = |lang: &str| LabeledUtterance { id: format!("{lang}1"), lang: lang.into(), source: "s".into(), wave: vec![0.1; 3200], text: "a".into() };
        let eval = vec![utt("hau"), utt("zul")];
        let vocab = build_char_vocab(["a"], 2, 1).unwrap();
        let t = run_cross_corpus("x", &[], &vocab, &["hau".to_string()], &eval[1..]).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(!t.rows[0].trained && t.rows[0].wer.is_none());
        assert_eq!(t.avg_wer, None);
    }
}
