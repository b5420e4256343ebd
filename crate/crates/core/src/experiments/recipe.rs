//! Declarative experiment recipes: `key=value` settings plus a stage DAG.
//!
//! ```text
//! name = lowres
//! experiment = low_resource
//! seed = 3
//! train_corpus = synthetic:three_languages
//! stage.corpus =
//! stage.units = corpus
//! stage.pretrain = units
//! stage.asr = pretrain
//! stage.report = asr
//! config.asr = asr.txt
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::textio::{read_text, KeyValues};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    VariantComparison,
    CrossCorpus,
    LowResource,
    Multidialect,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::VariantComparison => "variant_comparison",
            ExperimentKind::CrossCorpus => "cross_corpus",
            ExperimentKind::LowResource => "low_resource",
            ExperimentKind::Multidialect => "multidialect",
        }
    }

    /// Stages the runner executes, each with the stages it reads from.
    pub fn stage_graph(self, has_encoder: bool) -> Vec<(&'static str, Vec<&'static str>)> {
        let mut g: Vec<(&str, Vec<&str>)> = vec![("corpus", vec![])];
        match self {
            ExperimentKind::VariantComparison => {
                g.push(("bootstrap", vec!["corpus"]));
                g.push(("units", vec!["bootstrap"]));
                g.push(("pretrain", vec!["units"]));
                g.push(("slid", vec!["pretrain"]));
                g.push(("asr", vec!["pretrain"]));
                g.push(("report", vec!["slid", "asr"]));
            }
            kind => {
                let upstream = if has_encoder {
                    "corpus"
                } else {
                    g.push(("units", vec!["corpus"]));
                    g.push(("pretrain", vec!["units"]));
                    "pretrain"
                };
                if kind == ExperimentKind::Multidialect {
                    g.push(("vocab", vec!["corpus"]));
                    g.push(("asr", vec![upstream, "vocab"]));
                } else {
                    g.push(("asr", vec![upstream]));
                }
                if kind == ExperimentKind::CrossCorpus {
                    g.push(("evaluate", vec!["asr"]));
                    g.push(("report", vec!["evaluate"]));
                } else {
                    g.push(("report", vec!["asr"]));
                }
            }
        }
        g
    }

    pub fn default_outputs(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::LowResource => &["report.csv", "report.jsonl", "report.txt"],
            _ => &["report.tsv", "report.jsonl", "report.txt"],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            ExperimentKind::VariantComparison,
            ExperimentKind::CrossCorpus,
            ExperimentKind::LowResource,
            ExperimentKind::Multidialect,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusRef {
    /// Named generator fixture: `three_languages` or `yoruba_dialects`.
    Synthetic(String),
    /// Test split of the training corpus with white noise at this SNR (dB).
    Noisy(f64),
    /// Directory holding `manifest.tsv` and `transcripts.tsv`.
    Dir(PathBuf),
}

pub const SYNTHETIC_FIXTURES: [&str; 2] = ["three_languages", "yoruba_dialects"];

impl CorpusRef {
    pub fn parse(s: &str, base: &Path) -> Result<Self> {
        if let Some(name) = s.strip_prefix("synthetic:") {
            if !SYNTHETIC_FIXTURES.contains(&name) {
                return Err(Error::Config(format!("unknown synthetic corpus `{name}`")));
            }
            return Ok(CorpusRef::Synthetic(name.to_string()));
        }
        if let Some(db) = s.strip_prefix("noisy:") {
            let db: f64 = db.parse().map_err(|_| Error::Config(format!("bad SNR in `{s}`")))?;
            return Ok(CorpusRef::Noisy(db));
        }
        let path = base.join(s);
        if !path.join("manifest.tsv").is_file() {
            return Err(Error::Config(format!("corpus directory {} has no manifest.tsv", path.display())));
        }
        Ok(CorpusRef::Dir(path))
    }

    pub fn label(&self) -> String {
        match self {
            CorpusRef::Synthetic(n) => format!("synthetic:{n}"),
            CorpusRef::Noisy(db) => format!("noisy:{db}"),
            CorpusRef::Dir(p) => p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageDecl {
    pub name: String,
    pub deps: Vec<String>,
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Recipe {
    pub name: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub train_corpus: CorpusRef,
    pub eval_corpora: Vec<CorpusRef>,
    /// Pretrained encoder checkpoint replacing the units and pretrain stages.
    pub encoder: Option<PathBuf>,
    /// Topologically ordered.
    pub stages: Vec<StageDecl>,
    pub outputs: Vec<String>,
    /// Experiment-specific settings (`budgets_min`, `dialects`, `scarce_dialect`).
    pub settings: BTreeMap<String, String>,
    pub text: String,
}

const TOP_KEYS: [&str; 7] = ["name", "experiment", "seed", "train_corpus", "eval_corpora", "encoder", "outputs"];
const SETTING_KEYS: [&str; 3] = ["budgets_min", "dialects", "scarce_dialect"];

impl Recipe {
    pub fn parse(text: &str, base: &Path, context: &str) -> Result<Self> {
        let kv = KeyValues::parse(text, context)?;
        let mut stage_deps: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut configs: BTreeMap<String, PathBuf> = BTreeMap::new();
        let mut settings = BTreeMap::new();
        for key in kv.keys() {
            let value = kv.get_str(key).unwrap_or_default();
            if let Some(stage) = key.strip_prefix("stage.") {
                let deps = value.split(',').map(str::trim).filter(|d| !d.is_empty()).map(str::to_string).collect();
                stage_deps.insert(stage.to_string(), deps);
            } else if let Some(stage) = key.strip_prefix("config.") {
                let path = base.join(value);
                if !path.is_file() {
                    return Err(Error::Config(format!("{context}: config for stage {stage} not found: {}", path.display())));
                }
                configs.insert(stage.to_string(), path);
            } else if SETTING_KEYS.contains(&key) {
                settings.insert(key.to_string(), value.to_string());
            } else if !TOP_KEYS.contains(&key) {
                return Err(Error::Config(format!("{context}: unknown field `{key}`")));
            }
        }
        let need = |k: &str| kv.get_str(k).ok_or_else(|| Error::Config(format!("{context}: missing field `{k}`")));
        let kind: ExperimentKind = need("experiment")?.parse()?;
        let encoder = kv.get_str("encoder").map(|p| base.join(p));
        if let Some(p) = &encoder {
            if !p.is_file() {
                return Err(Error::Config(format!("{context}: encoder checkpoint not found: {}", p.display())));
            }
        }
        for stage in configs.keys() {
            if !stage_deps.contains_key(stage) {
                return Err(Error::Config(format!("{context}: config given for undeclared stage {stage}")));
            }
        }
        let stages = topological_order(&stage_deps, &configs, context)?;
        check_against(kind, encoder.is_some(), &stages, context)?;
        let eval_corpora = match kv.get_str("eval_corpora") {
            Some(s) => s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| CorpusRef::parse(s, base)).collect::<Result<_>>()?,
            None => Vec::new(),
        };
        if kind == ExperimentKind::CrossCorpus && eval_corpora.is_empty() {
            return Err(Error::Config(format!("{context}: cross_corpus needs eval_corpora")));
        }
        let outputs = match kv.get_str("outputs") {
            Some(s) => s.split(',').map(|o| o.trim().to_string()).filter(|o| !o.is_empty()).collect(),
            None => kind.default_outputs().iter().map(|s| s.to_string()).collect(),
        };
        Ok(Self {
            name: need("name")?.to_string(),
            kind,
            seed: kv.get_or("seed", 0u64)?,
            train_corpus: CorpusRef::parse(need("train_corpus")?, base)?,
            eval_corpora,
            encoder,
            stages,
            outputs,
            settings,
            text: text.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, &path.display().to_string())
    }

    pub fn stage(&self, name: &str) -> Option<&StageDecl> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// The stage's config file, or an empty one.
    pub fn stage_config(&self, name: &str) -> Result<(KeyValues, String)> {
        match self.stage(name).and_then(|s| s.config.as_ref()) {
            Some(p) => {
                let text = read_text(p)?;
                Ok((KeyValues::parse(&text, &p.display().to_string())?, text))
            }
            None => Ok((KeyValues::default(), String::new())),
        }
    }

    pub fn setting(&self, key: &str) -> Option<&str> {
        self.settings.get(key).map(String::as_str)
    }
}

fn topological_order(deps: &BTreeMap<String, Vec<String>>, configs: &BTreeMap<String, PathBuf>, context: &str) -> Result<Vec<StageDecl>> {
    for (stage, ds) in deps {
        for d in ds {
            if !deps.contains_key(d) {
                return Err(Error::Config(format!("{context}: stage {stage} depends on undeclared stage {d}")));
            }
        }
    }
    let mut done: BTreeSet<&str> = BTreeSet::new();
    let mut order = Vec::new();
    while order.len() < deps.len() {
        let ready: Vec<&String> = deps
            .iter()
            .filter(|(s, ds)| !done.contains(s.as_str()) && ds.iter().all(|d| done.contains(d.as_str())))
            .map(|(s, _)| s)
            .collect();
        if ready.is_empty() {
            let stuck: Vec<&str> = deps.keys().map(String::as_str).filter(|s| !done.contains(s)).collect();
            return Err(Error::Config(format!("{context}: stages form a cycle among {}", stuck.join(", "))));
        }
        for s in ready {
            done.insert(s);
            order.push(StageDecl { name: s.clone(), deps: deps[s].clone(), config: configs.get(s).cloned() });
        }
    }
    Ok(order)
}

fn ancestors<'a>(stages: &'a [StageDecl], name: &str) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::new();
    let mut todo = vec![name];
    while let Some(n) = todo.pop() {
        if let Some(s) = stages.iter().find(|s| s.name == n) {
            for d in &s.deps {
                if seen.insert(d.as_str()) {
                    todo.push(d);
                }
            }
        }
    }
    seen
}

/// Every stage the runner needs is declared, nothing else is, and each one
/// is ordered after the stages it reads from.
fn check_against(kind: ExperimentKind, has_encoder: bool, stages: &[StageDecl], context: &str) -> Result<()> {
    let graph = kind.stage_graph(has_encoder);
    for s in stages {
        if !graph.iter().any(|(n, _)| *n == s.name) {
            return Err(Error::Config(format!("{context}: stage {} is not part of a {kind} run", s.name)));
        }
    }
    for (name, reads) in &graph {
        if !stages.iter().any(|s| s.name == *name) {
            return Err(Error::Config(format!("{context}: {kind} needs stage {name}")));
        }
        let up = ancestors(stages, name);
        for r in reads {
            if !up.contains(r) {
                return Err(Error::Config(format!("{context}: stage {name} must come after {r}")));
            }
        }
    }
    Ok(())
}
