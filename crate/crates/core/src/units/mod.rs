//! Discrete unit discovery: frame features, k-means codebooks, label assignment.

pub mod codebook;
pub mod kmeans;
pub mod spectral;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::corpus::{read_store_audio, AudioRecord, ManifestEntry};
use crate::error::{Error, Result};
use crate::rng::stage_rng;
use crate::ssl::Checkpoint;
use crate::textio::{tsv_fields, write_atomic};

pub use codebook::Codebook;
pub use kmeans::{train_kmeans, KMeansConfig, KMeansRun};
pub use spectral::{mfcc_from_log_mel, LogMel, HOP};

pub const KMEANS_CAP_SEC: f64 = 3600.0;
pub const DEFAULT_TEACHER_LAYER: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Output of encoder block `n` (1-based).
    TeacherLayer(usize),
    LogMel,
    Mfcc,
}

impl FeatureKind {
    pub fn code(self) -> (u32, u32) {
        match self {
            FeatureKind::TeacherLayer(l) => (0, l as u32),
            FeatureKind::LogMel => (1, 0),
            FeatureKind::Mfcc => (2, 0),
        }
    }

    pub fn from_code(kind: u32, layer: u32) -> Option<Self> {
        match kind {
            0 => Some(FeatureKind::TeacherLayer(layer as usize)),
            1 => Some(FeatureKind::LogMel),
            2 => Some(FeatureKind::Mfcc),
            _ => None,
        }
    }

    /// Parses `log_mel`, `mfcc`, `teacher_layer` or `teacher_layer:N`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "log_mel" => Ok(FeatureKind::LogMel),
            "mfcc" => Ok(FeatureKind::Mfcc),
            "teacher_layer" => Ok(FeatureKind::TeacherLayer(DEFAULT_TEACHER_LAYER)),
            _ => s
                .strip_prefix("teacher_layer:")
                .and_then(|n| n.parse().ok())
                .filter(|&n: &usize| n >= 1)
                .map(FeatureKind::TeacherLayer)
                .ok_or_else(|| Error::Config(format!("unknown feature kind '{s}'"))),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::TeacherLayer(l) => write!(f, "teacher_layer:{l}"),
            FeatureKind::LogMel => f.write_str("log_mel"),
            FeatureKind::Mfcc => f.write_str("mfcc"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub segment_id: String,
    pub data: Array2<f32>,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSequence {
    pub segment_id: String,
    pub labels: Vec<u32>,
}

/// Strips the repetition suffix (`@k`) added by upsampling.
pub fn base_id(id: &str) -> &str {
    id.split_once('@').map_or(id, |(b, _)| b)
}

/// Frame count for `samples` waveform samples at 50 frames per second.
pub fn frame_count(samples: usize) -> usize {
    samples / HOP
}

pub fn extract_features(audio: &AudioRecord, kind: FeatureKind, teacher: Option<&Checkpoint>) -> Result<FrameFeatures> {
    let data = match kind {
        FeatureKind::LogMel => LogMel::new().compute(&audio.samples)?,
        FeatureKind::Mfcc => mfcc_from_log_mel(&LogMel::new().compute(&audio.samples)?),
        FeatureKind::TeacherLayer(layer) => {
            let teacher = teacher.ok_or_else(|| Error::Config("teacher_layer features need a teacher checkpoint".into()))?;
            teacher.layer_features(&audio.samples, layer)?
        }
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite features for {}", audio.id)));
    }
    Ok(FrameFeatures { segment_id: audio.id.clone(), data: data.mapv(|v| v as f32), kind })
}

/// Extracts features for every distinct base segment of `manifest`, in id order.
pub fn extract_manifest_features(
    manifest: &[ManifestEntry],
    store: &Path,
    kind: FeatureKind,
    teacher: Option<&Checkpoint>,
) -> Result<Vec<FrameFeatures>> {
    let mut unique: BTreeMap<&str, &ManifestEntry> = BTreeMap::new();
    for e in manifest {
        unique.entry(base_id(&e.id)).or_insert(e);
    }
    unique
        .into_par_iter()
        .map(|(id, e)| {
            let rec = read_store_audio(&store.join(&e.path), id, &e.lang, &e.source)?;
            extract_features(&rec, kind, teacher)
        })
        .collect()
}

/// Per language, a seeded shuffle of the segments taken in order until the
/// next one would push the language past `cap` seconds.
pub fn sample_kmeans_corpus(manifest: &[ManifestEntry], cap: f64, seed: u64) -> Vec<ManifestEntry> {
    let mut by_lang: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in manifest {
        by_lang.entry(e.lang.as_str()).or_default().push(e);
    }
    let cap_us = crate::corpus::secs_to_micros(cap);
    let mut out = Vec::new();
    for (lang, mut entries) in by_lang {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        entries.shuffle(&mut stage_rng(seed, &format!("kmeans-corpus/{lang}")));
        let mut total = 0i64;
        for e in entries {
            if total + e.micros() > cap_us {
                break;
            }
            total += e.micros();
            out.push(e.clone());
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// Row-stacks every frame of `features`.
pub fn stack_frames(features: &[FrameFeatures]) -> Result<Array2<f32>> {
    let dim = features.first().map_or(0, |f| f.data.ncols());
    if features.iter().any(|f| f.data.ncols() != dim) {
        return Err(Error::Data("feature dims differ across segments".into()));
    }
    let views: Vec<_> = features.iter().map(|f| f.data.view()).collect();
    if views.is_empty() {
        return Ok(Array2::zeros((0, dim)));
    }
    ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::Data(e.to_string()))
}

pub fn assign_all(features: &[FrameFeatures], codebook: &Codebook) -> Result<Vec<TargetSequence>> {
    features.par_iter().map(|f| codebook.assign(f)).collect()
}

pub fn targets_to_string(targets: &[TargetSequence]) -> String {
    let mut s = String::new();
    for t in targets {
        s.push_str(&t.segment_id);
        s.push('\t');
        let labels: Vec<String> = t.labels.iter().map(u32::to_string).collect();
        s.push_str(&labels.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_targets(text: &str, context: &str) -> Result<Vec<TargetSequence>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f = tsv_fields(line, 2, context, i + 1)?;
        let labels = f[1]
            .split_whitespace()
            .map(|v| v.parse::<u32>().map_err(|e| Error::parse(context, format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        out.push(TargetSequence { segment_id: f[0].to_string(), labels });
    }
    Ok(out)
}

pub fn write_targets(path: &Path, targets: &[TargetSequence]) -> Result<()> {
    write_atomic(path, targets_to_string(targets).as_bytes())
}

pub fn read_targets(path: &Path) -> Result<Vec<TargetSequence>> {
    parse_targets(&crate::textio::read_text(path)?, &path.display().to_string())
}

const FEATURE_MAGIC: &[u8; 4] = b"MFFT";

pub fn features_to_bytes(features: &[FrameFeatures]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(FEATURE_MAGIC);
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&(features.len() as u64).to_le_bytes());
    for f in features {
        b.extend_from_slice(&(f.segment_id.len() as u32).to_le_bytes());
        b.extend_from_slice(f.segment_id.as_bytes());
        let (k, l) = f.kind.code();
        b.extend_from_slice(&k.to_le_bytes());
        b.extend_from_slice(&l.to_le_bytes());
        b.extend_from_slice(&(f.data.nrows() as u32).to_le_bytes());
        b.extend_from_slice(&(f.data.ncols() as u32).to_le_bytes());
        for v in f.data.iter() {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

pub fn features_from_bytes(bytes: &[u8], context: &str) -> Result<Vec<FrameFeatures>> {
    let mut r = codebook::Reader::new(bytes, context);
    if r.take(4)? != FEATURE_MAGIC || r.u32()? != 1 {
        return Err(Error::parse(context, "not a feature file"));
    }
    let n = r.u64()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let segment_id = r.string()?;
        let kind = FeatureKind::from_code(r.u32()?, r.u32()?).ok_or_else(|| Error::parse(context, "bad feature kind"))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let data = Array2::from_shape_vec((rows, cols), r.f32s(rows * cols)?).map_err(|e| Error::parse(context, e.to_string()))?;
        out.push(FrameFeatures { segment_id, data, kind });
    }
    Ok(out)
}

pub fn write_features(path: &Path, features: &[FrameFeatures]) -> Result<()> {
    write_atomic(path, &features_to_bytes(features))
}

pub fn read_features(path: &Path) -> Result<Vec<FrameFeatures>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    features_from_bytes(&bytes, &path.display().to_string())
}
