//! Browser bindings for three self-contained pieces of the pipeline. Build with
//! `wasm-pack build crates/demo --target web` and serve `www/`.

use std::collections::BTreeSet;

use maftlab_core::corpus::{AudioRecord, DurationTable};
use maftlab_core::sampler::compute_sampling_probs;
use maftlab_core::segmenter::{vad_segment, VadConfig};
use maftlab_core::units::{train_kmeans, FeatureKind, FrameFeatures, KMeansConfig};
use ndarray::Array2;
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Temperature-sampled proportions q, in the order of `langs`
/// (comma-separated codes). Excluded languages come back as NaN.
#[wasm_bindgen]
pub fn sampling_probs(langs: &str, hours: &[f64], alpha: f64, exclude: &str) -> Result<Vec<f64>, String> {
    let codes: Vec<&str> = langs.split(',').map(str::trim).collect();
    if codes.len() != hours.len() {
        return Err(format!("{} languages but {} durations", codes.len(), hours.len()));
    }
    if codes.iter().collect::<BTreeSet<_>>().len() != codes.len() {
        return Err("language codes must be distinct".into());
    }
    let table = DurationTable::from_language_seconds(codes.iter().copied().zip(hours.iter().map(|h| h * 3600.0)));
    let excluded: BTreeSet<String> = exclude.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    let plan = compute_sampling_probs(&table, alpha, &excluded).map_err(err)?;
    Ok(codes.iter().map(|c| plan.q(c).unwrap_or(f64::NAN)).collect())
}

/// Clusters row-major `points` (`dim` columns) and returns one label per row.
#[wasm_bindgen]
pub fn kmeans_labels(points: &[f32], dim: usize, k: usize, seed: u32) -> Result<Vec<u32>, String> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(format!("{} values do not form rows of width {dim}", points.len()));
    }
    let data = Array2::from_shape_vec((points.len() / dim, dim), points.to_vec()).map_err(err)?;
    let cfg = KMeansConfig { k, seed: u64::from(seed), standardize: false, ..KMeansConfig::default() };
    let run = train_kmeans(data.view(), FeatureKind::Mfcc, &cfg).map_err(err)?;
    let feats = FrameFeatures { segment_id: "demo".into(), data, kind: FeatureKind::Mfcc };
    Ok(run.codebook.assign(&feats).map_err(err)?.labels)
}

/// Speech regions of 16 kHz mono audio as flat `[start, end, start, end, ...]` seconds.
#[wasm_bindgen]
pub fn vad_regions(samples: &[f32], energy_threshold_db: f64, min_silence_ms: u32) -> Result<Vec<f64>, String> {
    let rec = AudioRecord::new("demo", samples.to_vec(), "und", "demo").map_err(err)?;
    let cfg = VadConfig { energy_threshold_db, min_silence_ms, ..VadConfig::default() };
    Ok(vad_segment(&rec, &cfg).map_err(err)?.iter().flat_map(|s| [s.start, s.end]).collect())
}
