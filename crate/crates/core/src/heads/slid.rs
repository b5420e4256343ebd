//! Attentive-pooling language classifier.

use crate::error::{Error, Result};
use crate::nn::{Graph, Mat, ParamId, ParamSet, Var};
use crate::rng::StageRng;

pub const SLID_HIDDEN: usize = 512;
pub const LEAKY_SLOPE: f64 = 0.01;

/// `sum_t softmax(scores)_t * reps[t]`.
pub fn attentive_pool(reps: &Mat, scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    (0..reps.ncols()).map(|j| (0..reps.nrows()).map(|t| e[t] / z * reps[[t, j]]).sum()).collect()
}

pub struct SlidHead {
    att: (ParamId, ParamId),
    fc: (ParamId, ParamId),
    out: (ParamId, ParamId),
    pub languages: usize,
}

fn pair(p: &ParamSet, name: &str) -> Result<(ParamId, ParamId)> {
    let f = |s: &str| p.find(&format!("{name}.{s}")).ok_or_else(|| Error::Config(format!("model lacks {name}.{s}")));
    Ok((f("w")?, f("b")?))
}

impl SlidHead {
    pub fn init(params: &mut ParamSet, model_dim: usize, hidden: usize, languages: usize, rng: &mut StageRng) -> Self {
        let mut lin = |name: &str, i: usize, o: usize| {
            (params.add_xavier(format!("{name}.w"), i, o, rng), params.add_const(format!("{name}.b"), 1, o, 0.0))
        };
        let att = lin("slid.att", model_dim, 1);
        let fc = lin("slid.fc", model_dim, hidden);
        let out = lin("slid.out", hidden, languages);
        Self { att, fc, out, languages }
    }

    pub fn bind(params: &ParamSet) -> Result<Self> {
        let out = pair(params, "slid.out")?;
        Ok(Self { att: pair(params, "slid.att")?, fc: pair(params, "slid.fc")?, languages: params.get(out.0).ncols(), out })
    }

    /// Attention weights (`1 x T`) and pooled vector (`1 x model_dim`).
    pub fn pool(&self, g: &mut Graph, reps: Var) -> (Var, Var) {
        let scores = g.linear(reps, self.att.0, self.att.1);
        let row = g.transpose(scores);
        let t = g.value(row).ncols();
        let weights = g.softmax_rows(row, t);
        let pooled = g.matmul(weights, reps);
        (weights, pooled)
    }

    /// Language logits (`1 x L`) for frame representations `reps` (`T x d`).
    pub fn forward(&self, g: &mut Graph, reps: Var) -> Var {
        let (_, pooled) = self.pool(g, reps);
        let h = g.linear(pooled, self.fc.0, self.fc.1);
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        g.linear(h, self.out.0, self.out.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stage_rng;
    use ndarray::Array2;

    #[test]
    fn uniform_scores_give_mean_and_saturation_picks_frame() {
        let reps = Array2::from_shape_fn((4, 3), |(t, j)| (t * 3 + j) as f64);
        let mean = attentive_pool(&reps, &[0.0; 4]);
        assert!((mean[0] - 4.5).abs() < 1e-12);
        let sat = attentive_pool(&reps, &[0.0, 100.0, 0.0, 0.0]);
        assert!((sat[2] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn graph_pool_matches_scalar_loop() {
        let mut rng = stage_rng(3, "slid");
        let mut p = ParamSet::new();
        let head = SlidHead::init(&mut p, 4, 6, 3, &mut rng);
        p.get_mut(head.att.1)[[0, 0]] = 0.0;
        let reps = Array2::from_shape_fn((5, 4), |(t, j)| ((t * 4 + j) as f64 * 0.7).sin());
        let scores: Vec<f64> = (0..5).map(|t| (0..4).map(|j| reps[[t, j]] * p.get(head.att.0)[[j, 0]]).sum()).collect();
        let want = attentive_pool(&reps, &scores);
        let mut g = Graph::new(&p);
        let r = g.input(reps);
        let (w, pooled) = head.pool(&mut g, r);
        assert!((g.value(w).sum() - 1.0).abs() < 1e-12);
        for (a, b) in g.value(pooled).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
