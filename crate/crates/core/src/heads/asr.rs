//! Feed-forward CTC head and greedy decoding.

use crate::error::{Error, Result};
use crate::heads::slid::LEAKY_SLOPE;
use crate::heads::vocab::CharVocab;
use crate::nn::{Graph, Mat, ParamId, ParamSet, Var};
use crate::rng::StageRng;

pub const ASR_HIDDEN: usize = 1024;
pub const ASR_LAYERS: usize = 3;

pub struct AsrHead {
    hidden: Vec<(ParamId, ParamId)>,
    out: (ParamId, ParamId),
}

impl AsrHead {
    pub fn init(params: &mut ParamSet, model_dim: usize, hidden: usize, outputs: usize, rng: &mut StageRng) -> Self {
        let mut lin = |name: String, i: usize, o: usize| {
            (params.add_xavier(format!("{name}.w"), i, o, rng), params.add_const(format!("{name}.b"), 1, o, 0.0))
        };
        let layers = (0..ASR_LAYERS).map(|l| lin(format!("asr.ff{l}"), if l == 0 { model_dim } else { hidden }, hidden)).collect();
        let out = lin("asr.out".to_string(), hidden, outputs);
        Self { hidden: layers, out }
    }

    pub fn bind(params: &ParamSet) -> Result<Self> {
        let pair = |name: &str| -> Result<(ParamId, ParamId)> {
            let f = |s: &str| params.find(&format!("{name}.{s}")).ok_or_else(|| Error::Config(format!("model lacks {name}.{s}")));
            Ok((f("w")?, f("b")?))
        };
        let hidden = (0..ASR_LAYERS).map(|l| pair(&format!("asr.ff{l}"))).collect::<Result<_>>()?;
        Ok(Self { hidden, out: pair("asr.out")? })
    }

    pub fn outputs(&self, params: &ParamSet) -> usize {
        params.get(self.out.0).ncols()
    }

    /// Frame logits (`T x outputs`); output 0 is the CTC blank.
    pub fn forward(&self, g: &mut Graph, reps: Var) -> Var {
        let mut h = reps;
        for &(w, b) in &self.hidden {
            h = g.linear(h, w, b);
            h = g.leaky_relu(h, LEAKY_SLOPE);
        }
        g.linear(h, self.out.0, self.out.1)
    }
}

/// Merges runs of equal outputs and removes blanks (0).
pub fn ctc_collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != 0 {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Shortest frame path for a label sequence: labels with a blank between each.
pub fn canonical_path(labels: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * labels.len());
    for (i, &l) in labels.iter().enumerate() {
        if i > 0 {
            out.push(0);
        }
        out.push(l);
    }
    out
}

pub fn argmax_path(logits: &Mat) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| r.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0)
        .collect()
}

pub fn decode_ctc_greedy(logits: &Mat, vocab: &CharVocab) -> String {
    let text = vocab.decode(&ctc_collapse(&argmax_path(logits)));
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::vocab::build_char_vocab;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn one_hot(path: &[usize], classes: usize) -> Mat {
        Array2::from_shape_fn((path.len(), classes), |(t, c)| if path[t] == c { 5.0 } else { 0.0 })
    }

    #[test]
    fn collapse_examples() {
        let v = build_char_vocab(["ab"], 3, 1).unwrap();
        let a = v.encode("a").unwrap()[0];
        let b = v.encode("b").unwrap()[0];
        let k = v.outputs();
        assert_eq!(decode_ctc_greedy(&one_hot(&[0, a, a, 0, b], k), &v), "ab");
        assert_eq!(decode_ctc_greedy(&one_hot(&[0, 0, 0], k), &v), "");
        assert_eq!(decode_ctc_greedy(&one_hot(&[a, 0, a], k), &v), "aa");
    }

    proptest! {
        #[test]
        fn collapse_is_idempotent_on_its_canonical_path(path in proptest::collection::vec(0usize..4, 0..30)) {
            let once = ctc_collapse(&path);
            prop_assert!(!once.contains(&0));
            prop_assert_eq!(ctc_collapse(&canonical_path(&once)), once);
        }
    }
}
