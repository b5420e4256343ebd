use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stage_rng;

pub const DEFAULT_MASK_PROB: f64 = 0.08;
pub const DEFAULT_MASK_SPAN: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub mask_start_prob: f64,
    pub span_length: usize,
    pub masked: Vec<bool>,
    pub seed: u64,
}

impl MaskSpec {
    pub fn masked_indices(&self) -> Vec<usize> {
        self.masked.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    pub fn count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn none(frames: usize) -> Self {
        Self { mask_start_prob: 0.0, span_length: 0, masked: vec![false; frames], seed: 0 }
    }
}

/// Every frame independently starts a span of `span` frames with probability
/// `p`; spans may overlap and are cut at the end.
pub fn sample_mask(frames: usize, p: f64, span: usize, seed: u64) -> MaskSpec {
    let mut rng = stage_rng(seed, "mask");
    let mut masked = vec![false; frames];
    for t in 0..frames {
        if rng.random::<f64>() < p {
            for m in masked.iter_mut().skip(t).take(span) {
                *m = true;
            }
        }
    }
    MaskSpec { mask_start_prob: p, span_length: span, masked, seed }
}

/// Mean cross-entropy of `logits` (`T x k`) against `targets` over masked frames.
pub fn masked_prediction_loss(logits: &ndarray::Array2<f64>, targets: &[u32], mask: &MaskSpec) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if targets.len() != logits.nrows() || mask.masked.len() != logits.nrows() {
        return Err(Error::Data(format!(
            "{} logit frames, {} targets, {} mask entries",
            logits.nrows(),
            targets.len(),
            mask.masked.len()
        )));
    }
    let mut total = 0.0;
    for t in mask.masked_indices() {
        let row = logits.row(t);
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[targets[t] as usize];
    }
    Ok(total / mask.count() as f64)
}
