//! Labeled fine-tuning data and the per-language balancing rules.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::corpus::{read_store_audio, secs_to_micros, ManifestEntry, Split, Transcripts};
use crate::error::{Error, Result};
use crate::rng::stage_rng;
use crate::ssl::normalize_waveform;

pub const SLID_CAP: usize = 1030;
pub const ASR_HOURS: f64 = 3.0;

fn by_language(entries: &[ManifestEntry]) -> BTreeMap<&str, Vec<&ManifestEntry>> {
    let mut m: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in entries {
        m.entry(e.lang.as_str()).or_default().push(e);
    }
    for v in m.values_mut() {
        v.sort_by(|a, b| a.id.cmp(&b.id));
    }
    m
}

/// Languages with more than `cap` utterances are reduced to a seeded subset of `cap`.
pub fn cap_slid_data(entries: &[ManifestEntry], cap: usize, seed: u64) -> Vec<ManifestEntry> {
    let mut out = Vec::new();
    for (lang, mut v) in by_language(entries) {
        if v.len() > cap {
            v.shuffle(&mut stage_rng(seed, &format!("slid-cap/{lang}")));
            v.truncate(cap);
        }
        out.extend(v.into_iter().cloned());
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// Per language, walks a seeded shuffle and keeps every utterance that still
/// fits under `hours`; languages under budget are kept whole.
pub fn sample_asr_hours(entries: &[ManifestEntry], hours: f64, seed: u64) -> Vec<ManifestEntry> {
    let budget = secs_to_micros(hours * 3600.0);
    let mut out = Vec::new();
    for (lang, mut v) in by_language(entries) {
        let total: i64 = v.iter().map(|e| e.micros()).sum();
        if total > budget {
            v.shuffle(&mut stage_rng(seed, &format!("asr-hours/{lang}")));
            let mut used = 0;
            v.retain(|e| {
                if used + e.micros() <= budget {
                    used += e.micros();
                    true
                } else {
                    false
                }
            });
        }
        out.extend(v.into_iter().cloned());
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub id: String,
    pub lang: String,
    /// Manifest `source` column (dialect label for dialect corpora).
    pub source: String,
    pub wave: Vec<f32>,
    pub text: String,
}

#[derive(Debug, Clone, Default)]
pub struct LabeledSplits {
    pub train: Vec<LabeledUtterance>,
    pub valid: Vec<LabeledUtterance>,
    pub test: Vec<LabeledUtterance>,
}

pub fn load_labeled(entries: &[ManifestEntry], store: &Path, transcripts: Option<&Transcripts>) -> Result<Vec<LabeledUtterance>> {
    entries
        .iter()
        .map(|e| {
            let rec = read_store_audio(&store.join(&e.path), &e.id, &e.lang, &e.source)?;
            let text = match transcripts {
                Some(t) => t.get(&e.id).cloned().ok_or_else(|| Error::Data(format!("no transcript for {}", e.id)))?,
                None => String::new(),
            };
            Ok(LabeledUtterance { id: e.id.clone(), lang: e.lang.clone(), source: e.source.clone(), wave: normalize_waveform(&rec.samples), text })
        })
        .collect()
}

/// Splits a manifest by its split column and loads the audio.
pub fn load_splits(entries: &[ManifestEntry], store: &Path, transcripts: Option<&Transcripts>) -> Result<LabeledSplits> {
    let pick = |s: Split| entries.iter().filter(|e| e.split == s).cloned().collect::<Vec<_>>();
    Ok(LabeledSplits {
        train: load_labeled(&pick(Split::Train), store, transcripts)?,
        valid: load_labeled(&pick(Split::Valid), store, transcripts)?,
        test: load_labeled(&pick(Split::Test), store, transcripts)?,
    })
}
