//! Audio ingestion into a normalized 16 kHz mono store, manifests and duration bookkeeping.

pub mod audio;
pub mod durations;
pub mod langs;
pub mod manifest;
pub mod resample;
pub mod transcripts;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use audio::{ingest_audio, read_store_audio, write_wav, AudioRecord, SAMPLE_RATE};
pub use durations::{compute_durations, DurationTable};
pub use transcripts::{read_transcripts, write_transcripts, Transcripts};
pub use manifest::{filter_languages, micros_to_secs, parse_manifest, secs_to_micros, read_manifest, write_manifest, ManifestEntry, Split};

use crate::error::{Error, Result};
use crate::textio::read_text;

/// Maps path prefixes (relative to the input directory) to a language and source.
#[derive(Debug, Clone, Default)]
pub struct LangMap {
    rules: Vec<(String, String, String)>,
}

impl LangMap {
    /// Lines: `prefix<TAB>lang[<TAB>source]`; `#` comments allowed.
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() < 2 || f.len() > 3 {
                return Err(Error::parse(context, format!("line {}: expected prefix, lang[, source]", i + 1)));
            }
            if !langs::is_valid_language(f[1]) {
                return Err(Error::parse(context, format!("line {}: bad language `{}`", i + 1, f[1])));
            }
            let source = f.get(2).copied().unwrap_or("unknown");
            rules.push((f[0].trim_matches('/').to_string(), f[1].to_string(), source.to_string()));
        }
        Ok(Self { rules })
    }

    /// Longest component-wise prefix match; unmatched files get `und`.
    pub fn lookup(&self, rel: &str) -> (String, String) {
        self.rules
            .iter()
            .filter(|(prefix, _, _)| {
                prefix.is_empty()
                    || rel == prefix
                    || rel.strip_prefix(prefix.as_str()).is_some_and(|rest| rest.starts_with('/'))
            })
            .max_by_key(|(prefix, _, _)| prefix.len())
            .map(|(_, l, s)| (l.clone(), s.clone()))
            .unwrap_or_else(|| (langs::UNDETERMINED.to_string(), "unknown".to_string()))
    }
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for ent in rd {
        let ent = ent.map_err(|e| Error::io(dir, e))?;
        let p = ent.path();
        if p.is_dir() {
            collect_wavs(&p, out)?;
        } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    Ok(())
}

/// Store-safe id from a relative path: separators become `__`, extension dropped.
pub fn id_from_relative(rel: &str) -> String {
    let stem = rel.strip_suffix(".wav").or_else(|| rel.strip_suffix(".WAV")).unwrap_or(rel);
    stem.split('/')
        .map(|part| {
            part.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("__")
}

/// Ingest every `.wav` under `input` into `store/audio/` and return the manifest
/// (sorted by id, all entries in the train split).
pub fn ingest_directory(input: &Path, lang_map: &LangMap, store: &Path) -> Result<Vec<ManifestEntry>> {
    let mut files = Vec::new();
    collect_wavs(input, &mut files)?;
    let mut entries: Vec<ManifestEntry> = files
        .par_iter()
        .map(|path| {
            let rel = path
                .strip_prefix(input)
                .unwrap_or(path)
                .to_string_lossy()
                .replace('\\', "/");
            let (lang, source) = lang_map.lookup(&rel);
            let id = id_from_relative(&rel);
            let rec = ingest_audio(path, &id, &lang, &source)?;
            let stored = format!("audio/{id}.wav");
            write_wav(&store.join(&stored), &rec.samples, rec.sample_rate)?;
            Ok(ManifestEntry::new(id, stored, lang, rec.duration(), source, Split::Train))
        })
        .collect::<Result<_>>()?;
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Data(format!("two input files map to id `{}`", w[0].id)));
    }
    Ok(entries)
}

pub fn read_lang_map(path: &Path) -> Result<LangMap> {
    LangMap::parse(&read_text(path)?, &path.display().to_string())
}
