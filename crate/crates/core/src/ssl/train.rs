//! Masked-prediction pretraining loop, checkpoint selection and run records.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::corpus::{read_store_audio, ManifestEntry};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Grads, Graph, LrSchedule, ParamId, ParamSet, Var};
use crate::rng::{derive_seed, stage_rng, StageRng};
use crate::ssl::checkpoint::Checkpoint;
use crate::ssl::encoder::{normalize_waveform, Encoder, EncoderConfig};
use crate::ssl::mask::{sample_mask, MaskSpec, DEFAULT_MASK_PROB, DEFAULT_MASK_SPAN};
use crate::textio::{fmt_sig, write_atomic, KeyValues};
use crate::units::{base_id, Codebook, TargetSequence};

pub const SCRATCH_PEAK_LR: f64 = 5e-3;
pub const MAFT_PEAK_LR: f64 = 5e-5;
const MASK_ATTEMPTS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    MaftOriginal,
    MaftNew,
    Scratch,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::MaftOriginal, Mode::MaftNew, Mode::Scratch];

    pub fn suffix(self) -> &'static str {
        match self {
            Mode::MaftOriginal => "o",
            Mode::MaftNew => "n",
            Mode::Scratch => "s",
        }
    }

    pub fn default_peak_lr(self) -> f64 {
        match self {
            Mode::Scratch => SCRATCH_PEAK_LR,
            _ => MAFT_PEAK_LR,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::MaftOriginal => "maft_original",
            Mode::MaftNew => "maft_new",
            Mode::Scratch => "scratch",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maft_original" | "o" => Ok(Mode::MaftOriginal),
            "maft_new" | "n" => Ok(Mode::MaftNew),
            "scratch" | "s" => Ok(Mode::Scratch),
            _ => Err(Error::Config(format!("unknown mode '{s}' (expected maft_original, maft_new or scratch)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRunConfig {
    pub mode: Mode,
    pub init_checkpoint: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    /// Waveform samples per batch.
    pub max_batch_tokens: usize,
    pub update_frequency: usize,
    pub seed: u64,
    pub valid_every: u64,
    pub mask_prob: f64,
    pub mask_span: usize,
    pub grad_clip: f64,
    /// Architecture for scratch runs; MAFT runs inherit the teacher's.
    pub encoder: EncoderConfig,
}

impl TrainRunConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            init_checkpoint: None,
            codebook: None,
            total_steps: 2000,
            warmup_steps: 200,
            peak_lr: mode.default_peak_lr(),
            max_batch_tokens: 64_000,
            update_frequency: 1,
            seed: 0,
            valid_every: 100,
            mask_prob: DEFAULT_MASK_PROB,
            mask_span: DEFAULT_MASK_SPAN,
            grad_clip: 10.0,
            encoder: EncoderConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        match (self.mode, &self.init_checkpoint) {
            (Mode::Scratch, Some(_)) => return fail("scratch mode starts from random weights; remove init_checkpoint"),
            (Mode::MaftOriginal | Mode::MaftNew, None) => return fail("maft modes require init_checkpoint"),
            _ => {}
        }
        if self.warmup_steps > self.total_steps {
            return fail("warmup_steps must not exceed total_steps");
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return fail("peak_lr must be positive");
        }
        if self.max_batch_tokens == 0 || self.update_frequency == 0 || self.valid_every == 0 {
            return fail("max_batch_tokens, update_frequency and valid_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.mask_prob) || self.mask_span == 0 {
            return fail("mask_prob must lie in [0, 1] and mask_span be positive");
        }
        if self.mask_prob == 0.0 {
            return fail("mask_prob 0 never produces a training signal");
        }
        if !(self.grad_clip > 0.0) {
            return fail("grad_clip must be positive");
        }
        self.encoder.validate()
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut known = vec![
            "mode", "init_checkpoint", "codebook", "total_steps", "warmup_steps", "peak_lr", "max_batch_tokens",
            "update_frequency", "seed", "valid_every", "mask_prob", "mask_span", "grad_clip",
        ];
        known.extend(EncoderConfig::KEYS);
        kv.check_known(&known)?;
        let mode: Mode = kv.get_str("mode").ok_or_else(|| Error::Config("missing field `mode`".into()))?.parse()?;
        let d = Self::new(mode);
        let cfg = Self {
            mode,
            init_checkpoint: kv.get_str("init_checkpoint").map(PathBuf::from),
            codebook: kv.get_str("codebook").map(PathBuf::from),
            total_steps: kv.get_or("total_steps", d.total_steps)?,
            warmup_steps: kv.get_or("warmup_steps", d.warmup_steps)?,
            peak_lr: kv.get_or("peak_lr", d.peak_lr)?,
            max_batch_tokens: kv.get_or("max_batch_tokens", d.max_batch_tokens)?,
            update_frequency: kv.get_or("update_frequency", d.update_frequency)?,
            seed: kv.get_or("seed", d.seed)?,
            valid_every: kv.get_or("valid_every", d.valid_every)?,
            mask_prob: kv.get_or("mask_prob", d.mask_prob)?,
            mask_span: kv.get_or("mask_span", d.mask_span)?,
            grad_clip: kv.get_or("grad_clip", d.grad_clip)?,
            encoder: EncoderConfig::from_kv(kv, &d.encoder)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = format!("mode={}\n", self.mode);
        if let Some(p) = &self.init_checkpoint {
            s += &format!("init_checkpoint={}\n", p.display());
        }
        if let Some(p) = &self.codebook {
            s += &format!("codebook={}\n", p.display());
        }
        s += &format!(
            "total_steps={}\nwarmup_steps={}\npeak_lr={}\nmax_batch_tokens={}\nupdate_frequency={}\nseed={}\nvalid_every={}\nmask_prob={}\nmask_span={}\ngrad_clip={}\n",
            self.total_steps,
            self.warmup_steps,
            self.peak_lr,
            self.max_batch_tokens,
            self.update_frequency,
            self.seed,
            self.valid_every,
            self.mask_prob,
            self.mask_span,
            self.grad_clip
        );
        s + &self.encoder.to_kv_lines()
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { peak: self.peak_lr, warmup: self.warmup_steps, total: self.total_steps }
    }
}

/// One utterance ready for training: normalized waveform and unit targets.
#[derive(Debug, Clone)]
pub struct SslUtterance {
    pub id: String,
    pub wave: Vec<f32>,
    pub targets: Vec<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct SslData {
    pub utterances: Vec<SslUtterance>,
    /// Training stream as indices into `utterances`, one per manifest row
    /// (repetitions from upsampling included).
    pub train_order: Vec<usize>,
    pub valid: Vec<usize>,
}

impl SslData {
    pub fn load(train: &[ManifestEntry], valid: &[ManifestEntry], store: &Path, targets: &[TargetSequence]) -> Result<Self> {
        let by_id: HashMap<&str, &TargetSequence> = targets.iter().map(|t| (t.segment_id.as_str(), t)).collect();
        let mut data = SslData::default();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut intern = |e: &ManifestEntry, data: &mut SslData| -> Result<usize> {
            let id = base_id(&e.id).to_string();
            if let Some(&i) = index.get(&id) {
                return Ok(i);
            }
            let t = by_id.get(id.as_str()).ok_or_else(|| Error::Data(format!("no targets for segment {id}")))?;
            let rec = read_store_audio(&store.join(&e.path), &id, &e.lang, &e.source)?;
            data.push(SslUtterance { id: id.clone(), wave: rec.samples, targets: t.labels.clone() })?;
            index.insert(id, data.utterances.len() - 1);
            Ok(data.utterances.len() - 1)
        };
        for e in train {
            let i = intern(e, &mut data)?;
            data.train_order.push(i);
        }
        for e in valid {
            let i = intern(e, &mut data)?;
            data.valid.push(i);
        }
        Ok(data)
    }

    /// Adds an utterance (raw samples) after checking its target length.
    pub fn push(&mut self, mut utt: SslUtterance) -> Result<()> {
        let frames = utt.wave.len() / crate::units::HOP;
        if frames == 0 || utt.targets.len() != frames {
            return Err(Error::Data(format!(
                "segment {}: {} targets for {frames} frames",
                utt.id,
                utt.targets.len()
            )));
        }
        utt.wave = normalize_waveform(&utt.wave);
        self.utterances.push(utt);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub step: u64,
    pub train_loss: Option<f64>,
    pub valid_loss: Option<f64>,
    pub lr: f64,
}

pub fn history_to_csv(history: &[HistoryRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| fmt_sig(x, 10)).unwrap_or_default();
    let mut s = String::from("step,train_loss,valid_loss,lr\n");
    for h in history {
        s += &format!("{},{},{},{}\n", h.step, opt(h.train_loss), opt(h.valid_loss), fmt_sig(h.lr, 10));
    }
    s
}

/// Reads the `(step, valid_loss)` pairs of a loss CSV.
pub fn parse_validation_history(text: &str, context: &str) -> Result<Vec<(u64, f64)>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(context, "empty history"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let step_col = cols.iter().position(|&c| c == "step").ok_or_else(|| Error::parse(context, "missing step column"))?;
    let loss_col = cols
        .iter()
        .position(|&c| c == "valid_loss" || c == "validation_loss")
        .ok_or_else(|| Error::parse(context, "missing valid_loss column"))?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |c: usize| f.get(c).copied().unwrap_or("");
        if get(loss_col).is_empty() {
            continue;
        }
        let step = get(step_col).parse().map_err(|_| Error::parse(context, format!("line {}: bad step", i + 2)))?;
        let loss = get(loss_col).parse().map_err(|_| Error::parse(context, format!("line {}: bad loss", i + 2)))?;
        out.push((step, loss));
    }
    Ok(out)
}

/// Step with the lowest validation loss; the earliest such step on ties.
pub fn select_checkpoint(history: &[(u64, f64)]) -> Option<u64> {
    let mut best: Option<(u64, f64)> = None;
    for &(step, loss) in history {
        match best {
            Some((bs, bl)) if loss > bl || (loss == bl && step >= bs) || loss.is_nan() => {}
            _ => best = Some((step, loss)),
        }
    }
    best.map(|(s, _)| s)
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<HistoryRow>,
    pub selected_step: u64,
    pub meta: BTreeMap<String, String>,
}

impl TrainOutcome {
    pub fn initial_train_loss(&self) -> Option<f64> {
        self.history.iter().find_map(|h| h.train_loss)
    }

    /// Mean train loss over the last tenth of updates (at least one).
    pub fn final_train_loss(&self) -> Option<f64> {
        let losses: Vec<f64> = self.history.iter().filter_map(|h| h.train_loss).collect();
        let n = (losses.len() / 10).max(1);
        (!losses.is_empty()).then(|| losses[losses.len() - n..].iter().sum::<f64>() / n as f64)
    }

    pub fn validation_history(&self) -> Vec<(u64, f64)> {
        self.history.iter().filter_map(|h| h.valid_loss.map(|v| (h.step, v))).collect()
    }
}

pub fn codebook_hash(cb: &Codebook) -> String {
    let mut c = cb.clone();
    c.provenance.clear();
    Sha256::digest(c.to_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn starting_point(cfg: &TrainRunConfig, init: Option<&Checkpoint>, codebook: &Codebook) -> Result<Checkpoint> {
    match cfg.mode {
        Mode::Scratch => Checkpoint::random(&cfg.encoder, codebook.k(), derive_seed(cfg.seed, "scratch-init")),
        Mode::MaftOriginal => {
            let init = init.ok_or_else(|| Error::Config("maft_original requires an init checkpoint".into()))?;
            if !codebook.is_loaded() {
                return Err(Error::Config("maft_original must use the teacher's original codebook, loaded from disk".into()));
            }
            if init.meta.get("codebook_hash").is_some_and(|h| *h != codebook_hash(codebook)) {
                return Err(Error::Config("maft_original codebook differs from the one the teacher was trained on".into()));
            }
            if codebook.k() != init.k {
                return Err(Error::Config(format!("codebook k {} != teacher head k {}", codebook.k(), init.k)));
            }
            Ok(Checkpoint { step: 0, validation_loss: f64::NAN, meta: BTreeMap::new(), ..init.clone() })
        }
        Mode::MaftNew => {
            let init = init.ok_or_else(|| Error::Config("maft_new requires an init checkpoint".into()))?;
            if init.meta.get("codebook_hash").is_some_and(|h| *h == codebook_hash(codebook)) {
                return Err(Error::Config("maft_new needs a newly trained codebook, not the teacher's".into()));
            }
            Ok(init.with_new_head(codebook.k(), derive_seed(cfg.seed, "maft-new-head")))
        }
    }
}

fn nonempty_mask(frames: usize, cfg: &TrainRunConfig, label: &str) -> Option<MaskSpec> {
    (0..MASK_ATTEMPTS)
        .map(|a| sample_mask(frames, cfg.mask_prob, cfg.mask_span, derive_seed(cfg.seed, &format!("{label}#{a}"))))
        .find(|m| !m.is_empty())
}

struct Batch<'d> {
    data: &'d SslData,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
    max_tokens: usize,
}

impl<'d> Batch<'d> {
    fn reshuffle(&mut self) {
        self.order = self.data.train_order.clone();
        self.order.shuffle(&mut stage_rng(self.seed, &format!("ssl-epoch/{}", self.epoch)));
        self.cursor = 0;
        self.epoch += 1;
    }

    fn next(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.reshuffle();
        }
        let mut out = Vec::new();
        let mut tokens = 0;
        while self.cursor < self.order.len() {
            let u = self.order[self.cursor];
            let len = self.data.utterances[u].wave.len();
            if !out.is_empty() && tokens + len > self.max_tokens {
                break;
            }
            out.push(u);
            tokens += len;
            self.cursor += 1;
        }
        out
    }
}

fn head(ck: &Checkpoint) -> Result<(ParamId, ParamId)> {
    ck.head_ids()
}

/// Masked cross-entropy of one utterance as a graph node, divided by `denom`
/// instead of the utterance's own masked-frame count when given.
pub fn masked_loss_var(
    enc: &Encoder,
    head: (ParamId, ParamId),
    g: &mut Graph,
    wave: &[f32],
    targets: &[u32],
    mask: &MaskSpec,
    denom: Option<f64>,
    dropout: Option<&mut StageRng>,
) -> Result<Var> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let out = enc.forward(g, wave, Some(&mask.masked), None, dropout)?;
    if targets.len() != out.frames {
        return Err(Error::Data(format!("{} targets for {} frames", targets.len(), out.frames)));
    }
    let logits = g.linear(out.output, head.0, head.1);
    let rows: Vec<(usize, usize)> = mask.masked_indices().into_iter().map(|t| (t, targets[t] as usize)).collect();
    Ok(g.cross_entropy(logits, &rows, denom.unwrap_or(rows.len() as f64)))
}

/// Mean masked cross-entropy over the validation utterances with fixed masks.
pub fn validation_loss(ck: &Checkpoint, data: &SslData, cfg: &TrainRunConfig) -> Result<f64> {
    let enc = ck.bind()?;
    let (w, b) = head(ck)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for &u in &data.valid {
        let utt = &data.utterances[u];
        let frames = utt.targets.len();
        let Some(mask) = nonempty_mask(frames, cfg, &format!("valid-mask/{}", utt.id)) else { continue };
        let mut g = Graph::new(&ck.params);
        let loss = masked_loss_var(&enc, (w, b), &mut g, &utt.wave, &utt.targets, &mask, Some(1.0), None)?;
        total += g.scalar(loss);
        count += mask.count();
    }
    if count == 0 {
        return Err(Error::Data("validation set is empty".into()));
    }
    Ok(total / count as f64)
}

fn check_targets(data: &SslData, k: usize) -> Result<()> {
    for u in &data.utterances {
        if let Some(bad) = u.targets.iter().find(|&&l| l as usize >= k) {
            return Err(Error::Data(format!("segment {} has label {bad} outside codebook k={k}", u.id)));
        }
    }
    Ok(())
}

fn dump_divergence(dir: Option<&Path>, step: u64, params: &ParamSet, detail: &str, start: &Checkpoint) -> String {
    let Some(dir) = dir else { return detail.to_string() };
    let ck = Checkpoint { params: params.clone(), step, ..start.clone() };
    let ck_path = dir.join(format!("divergence_step{step}.ckpt"));
    let txt_path = dir.join(format!("divergence_step{step}.txt"));
    let written = ck.save(&ck_path).and_then(|_| write_atomic(&txt_path, format!("step={step}\n{detail}\n").as_bytes()));
    match written {
        Ok(()) => format!("{detail}; state dumped to {}", txt_path.display()),
        Err(e) => format!("{detail}; state dump failed: {e}"),
    }
}

/// Runs masked-prediction training and returns the checkpoint with the lowest
/// validation loss (validation happens at step 0, every `valid_every` updates
/// and after the last update).
pub fn train_ssl(
    cfg: &TrainRunConfig,
    data: &SslData,
    init: Option<&Checkpoint>,
    codebook: &Codebook,
    dump_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train_order.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    check_targets(data, codebook.k())?;
    let start = starting_point(cfg, init, codebook)?;
    let mut meta = BTreeMap::new();
    meta.insert("mode".to_string(), cfg.mode.to_string());
    meta.insert("init".to_string(), init.map_or("random".to_string(), Checkpoint::encoder_hash));
    meta.insert("init_encoder_hash".to_string(), start.encoder_hash());
    meta.insert("codebook_provenance".to_string(), codebook.provenance.clone());
    meta.insert("codebook_hash".to_string(), codebook_hash(codebook));
    let origin = match cfg.mode {
        Mode::MaftOriginal => "original",
        _ => "new",
    };
    meta.insert("codebook_origin".to_string(), origin.to_string());
    meta.insert("peak_lr".to_string(), cfg.peak_lr.to_string());
    meta.insert("k".to_string(), codebook.k().to_string());
    meta.insert("seed".to_string(), cfg.seed.to_string());

    let mut params = start.params.clone();
    let enc = start.bind()?;
    let (w, b) = head(&start)?;
    let schedule = cfg.schedule();
    let mut adam = Adam::new(&params, AdamConfig { beta1: 0.9, beta2: 0.98, eps: 1e-6, weight_decay: 0.0 }, |_| true);
    let mut batches = Batch { data, order: Vec::new(), cursor: 0, epoch: 0, seed: cfg.seed, max_tokens: cfg.max_batch_tokens };

    let v0 = validation_loss(&start, data, cfg)?;
    let mut history = vec![HistoryRow { step: 0, train_loss: None, valid_loss: Some(v0), lr: schedule.at(0) }];
    let mut best = (0u64, v0, params.clone());

    for step in 0..cfg.total_steps {
        let lr = schedule.at(step);
        let mut grads = Grads::zeros_like(&params);
        let mut step_loss = 0.0;
        let mut dropout_rng = stage_rng(cfg.seed, &format!("ssl-dropout/{step}"));
        for micro in 0..cfg.update_frequency {
            let batch = batches.next();
            let masks: Vec<Option<MaskSpec>> = batch
                .iter()
                .enumerate()
                .map(|(j, &u)| nonempty_mask(data.utterances[u].targets.len(), cfg, &format!("ssl-mask/{step}/{micro}/{j}")))
                .collect();
            let denom = masks.iter().flatten().map(MaskSpec::count).sum::<usize>() as f64;
            if denom == 0.0 {
                continue;
            }
            for (&u, mask) in batch.iter().zip(&masks) {
                let Some(mask) = mask else { continue };
                let utt = &data.utterances[u];
                let mut g = Graph::new(&params);
                let loss =
                    masked_loss_var(&enc, (w, b), &mut g, &utt.wave, &utt.targets, mask, Some(denom), Some(&mut dropout_rng))?;
                step_loss += g.scalar(loss);
                grads.merge(&g.backward(loss));
            }
        }
        let uf = cfg.update_frequency as f64;
        step_loss /= uf;
        grads.scale(1.0 / uf);
        if !step_loss.is_finite() || !grads.is_finite() {
            let detail = format!("loss={step_loss} lr={lr} grad_norm={}", grads.global_norm());
            let detail = dump_divergence(dump_dir, step, &params, &detail, &start);
            return Err(Error::Divergence { step, detail });
        }
        grads.clip_norm(cfg.grad_clip);
        adam.step(&mut params, &grads, lr);
        let done = step + 1;
        let mut row = HistoryRow { step: done, train_loss: Some(step_loss), valid_loss: None, lr };
        if done % cfg.valid_every == 0 || done == cfg.total_steps {
            let snapshot = Checkpoint { params: params.clone(), ..start.clone() };
            let v = validation_loss(&snapshot, data, cfg)?;
            if !v.is_finite() {
                let detail = dump_divergence(dump_dir, done, &params, &format!("validation loss {v}"), &start);
                return Err(Error::Divergence { step: done, detail });
            }
            if v < best.1 {
                best = (done, v, snapshot.params);
            }
            row.valid_loss = Some(v);
        }
        history.push(row);
    }

    let selected = select_checkpoint(&history.iter().filter_map(|h| h.valid_loss.map(|v| (h.step, v))).collect::<Vec<_>>())
        .expect("history holds step 0");
    debug_assert_eq!(selected, best.0);
    meta.insert("selected_step".to_string(), selected.to_string());
    let best_ck = Checkpoint { params: best.2, step: best.0, validation_loss: best.1, meta: meta.clone(), ..start };
    Ok(TrainOutcome { best: best_ck, history, selected_step: selected, meta })
}

/// Writes `best.ckpt`, `loss.csv`, `config.txt` and `run_meta.txt` into `dir`.
pub fn write_run(dir: &Path, cfg: &TrainRunConfig, outcome: &TrainOutcome) -> Result<()> {
    outcome.best.save(&dir.join("best.ckpt"))?;
    write_atomic(&dir.join("loss.csv"), history_to_csv(&outcome.history).as_bytes())?;
    write_atomic(&dir.join("config.txt"), cfg.to_kv_string().as_bytes())?;
    let meta: String = outcome.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write_atomic(&dir.join("run_meta.txt"), meta.as_bytes())
}

/// Checks the relations the three modes must satisfy: the two MAFT runs share
/// their initialization and differ in codebook provenance; maft_new and
/// scratch share the codebook and differ in initialization and peak lr.
pub fn check_mode_contract(runs: &[BTreeMap<String, String>]) -> Result<()> {
    let find = |m: Mode| runs.iter().find(|r| r.get("mode").map(String::as_str) == Some(&m.to_string()[..]));
    let field = |r: &BTreeMap<String, String>, k: &str| r.get(k).cloned().unwrap_or_default();
    let violation = |m: String| Err(Error::Config(format!("mode contract violated: {m}")));
    let (o, n, s) = (find(Mode::MaftOriginal), find(Mode::MaftNew), find(Mode::Scratch));
    if let (Some(o), Some(n)) = (o, n) {
        if field(o, "init") != field(n, "init") {
            return violation("maft_original and maft_new start from different weights".into());
        }
        if field(o, "codebook_provenance") == field(n, "codebook_provenance") {
            return violation("maft_original and maft_new share codebook provenance".into());
        }
        if field(o, "codebook_hash") == field(n, "codebook_hash") {
            return violation("maft_original and maft_new use the same codebook".into());
        }
        if !field(o, "codebook_provenance").starts_with("loaded:") || field(o, "codebook_origin") != "original" {
            return violation("maft_original codebook is not the loaded original".into());
        }
        if !field(n, "codebook_provenance").contains("trained:") || field(n, "codebook_origin") != "new" {
            return violation("maft_new codebook was not newly trained".into());
        }
    }
    if let (Some(n), Some(s)) = (n, s) {
        if field(n, "codebook_hash") != field(s, "codebook_hash") {
            return violation("maft_new and scratch use different codebooks".into());
        }
        if field(n, "init") == field(s, "init") || field(s, "init") != "random" {
            return violation("scratch must start from random weights".into());
        }
        let lr = |r| field(r, "peak_lr").parse::<f64>().unwrap_or(f64::NAN);
        if lr(s) != SCRATCH_PEAK_LR || lr(n) != MAFT_PEAK_LR {
            return violation(format!("peak lr scratch={} maft_new={}", lr(s), lr(n)));
        }
    }
    Ok(())
}
