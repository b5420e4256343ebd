use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::langs::is_valid_language;
use crate::error::{Error, Result};
use crate::textio::{parse_field, read_text, tsv_fields, write_atomic};

pub const MANIFEST_HEADER: &str = "id\tpath\tlang\tduration_sec\tsource\tsplit";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::parse("split", format!("unknown split `{other}`"))),
        }
    }
}

/// Round to the manifest's 6-decimal resolution.
pub fn canonical_duration(seconds: f64) -> f64 {
    micros_to_secs(secs_to_micros(seconds))
}

pub fn secs_to_micros(seconds: f64) -> i64 {
    (seconds * 1e6).round() as i64
}

pub fn micros_to_secs(us: i64) -> f64 {
    us as f64 / 1e6
}

/// One audio segment in a corpus store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the store root.
    pub path: String,
    pub lang: String,
    pub duration: f64,
    pub source: String,
    pub split: Split,
}

impl ManifestEntry {
    pub fn new(
        id: impl Into<String>,
        path: impl Into<String>,
        lang: impl Into<String>,
        duration: f64,
        source: impl Into<String>,
        split: Split,
    ) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            lang: lang.into(),
            duration: canonical_duration(duration),
            source: source.into(),
            split,
        }
    }

    pub fn micros(&self) -> i64 {
        secs_to_micros(self.duration)
    }

    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.6}\t{}\t{}",
            self.id, self.path, self.lang, self.duration, self.source, self.split
        )
    }
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> String {
    let mut out = String::with_capacity(64 * (entries.len() + 1));
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    out
}

pub fn parse_manifest(text: &str, context: &str) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
        _ => return Err(Error::parse(context, "missing manifest header row")),
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let n = i + 1;
        let f = tsv_fields(line, 6, context, n)?;
        if !is_valid_language(f[2]) {
            return Err(Error::parse(context, format!("line {n}: bad language `{}`", f[2])));
        }
        let duration: f64 = parse_field(f[3], "duration", context, n)?;
        if !seen.insert(f[0].to_string()) {
            return Err(Error::parse(context, format!("line {n}: duplicate id `{}`", f[0])));
        }
        out.push(ManifestEntry {
            id: f[0].to_string(),
            path: f[1].to_string(),
            lang: f[2].to_string(),
            duration,
            source: f[4].to_string(),
            split: f[5].parse().map_err(|_| Error::parse(context, format!("line {n}: bad split")))?,
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    parse_manifest(&read_text(path)?, &path.display().to_string())
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    write_atomic(path, manifest_to_string(entries).as_bytes())
}

/// Keep exactly the entries whose language is in `allowlist`, in order.
pub fn filter_languages(manifest: &[ManifestEntry], allowlist: &BTreeSet<String>) -> Vec<ManifestEntry> {
    manifest
        .iter()
        .filter(|e| allowlist.contains(&e.lang))
        .cloned()
        .collect()
}
