//! Connectionist temporal classification loss with blank at index 0.

use ndarray::Array2;

use crate::nn::params::Mat;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_softmax_rows(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|a| (a - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|a| a - lse);
    }
    out
}

/// Negative log-likelihood of `labels` under `logits` (`T x C`, unnormalized)
/// and its gradient w.r.t. the logits. `None` when the labels cannot be
/// aligned in `T` frames.
pub fn ctc_loss_and_grad(logits: &Mat, labels: &[usize]) -> Option<(f64, Mat)> {
    let t_len = logits.nrows();
    let lp = log_softmax_rows(logits);
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(0);
    for &l in labels {
        ext.push(l);
        ext.push(0);
    }
    let s_len = ext.len();
    if t_len == 0 {
        return None;
    }
    let skip = |s: usize| s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = Array2::from_elem((t_len, s_len), ninf);
    alpha[[0, 0]] = lp[[0, ext[0]]];
    if s_len > 1 {
        alpha[[0, 1]] = lp[[0, ext[1]]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[[t - 1, s]];
            if s >= 1 {
                a = log_add(a, alpha[[t - 1, s - 1]]);
            }
            if skip(s) {
                a = log_add(a, alpha[[t - 1, s - 2]]);
            }
            if a != ninf {
                alpha[[t, s]] = a + lp[[t, ext[s]]];
            }
        }
    }
    let mut log_p = alpha[[t_len - 1, s_len - 1]];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[[t_len - 1, s_len - 2]]);
    }
    if !log_p.is_finite() {
        return None;
    }

    let mut beta = Array2::from_elem((t_len, s_len), ninf);
    beta[[t_len - 1, s_len - 1]] = lp[[t_len - 1, ext[s_len - 1]]];
    if s_len > 1 {
        beta[[t_len - 1, s_len - 2]] = lp[[t_len - 1, ext[s_len - 2]]];
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[[t + 1, s]];
            if s + 1 < s_len {
                b = log_add(b, beta[[t + 1, s + 1]]);
            }
            if s + 2 < s_len && skip(s + 2) {
                b = log_add(b, beta[[t + 1, s + 2]]);
            }
            if b != ninf {
                beta[[t, s]] = b + lp[[t, ext[s]]];
            }
        }
    }

    let classes = logits.ncols();
    let mut grad = lp.mapv(f64::exp);
    for t in 0..t_len {
        let mut occ = vec![ninf; classes];
        for s in 0..s_len {
            let v = alpha[[t, s]] + beta[[t, s]] - lp[[t, ext[s]]];
            occ[ext[s]] = log_add(occ[ext[s]], v);
        }
        for (k, o) in occ.into_iter().enumerate() {
            if o != ninf {
                grad[[t, k]] -= (o - log_p).exp();
            }
        }
    }
    Some((-log_p, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Sum over every frame-level path that collapses to `labels`.
    fn brute_force(logits: &Mat, labels: &[usize]) -> f64 {
        let lp = log_softmax_rows(logits);
        let (t_len, c) = lp.dim();
        let mut total = 0.0;
        let mut path = vec![0usize; t_len];
        loop {
            let mut collapsed = Vec::new();
            let mut prev = usize::MAX;
            for &k in &path {
                if k != prev && k != 0 {
                    collapsed.push(k);
                }
                prev = k;
            }
            if collapsed == labels {
                total += path.iter().enumerate().map(|(t, &k)| lp[[t, k]]).sum::<f64>().exp();
            }
            let mut i = 0;
            while i < t_len {
                path[i] += 1;
                if path[i] < c {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
            if i == t_len {
                break;
            }
        }
        -total.ln()
    }

    #[test]
    fn matches_path_enumeration() {
        let logits = Array2::from_shape_fn((5, 3), |(t, k)| ((t * 3 + k) as f64 * 0.37).sin() * 2.0);
        for labels in [vec![], vec![1], vec![1, 2], vec![2, 2], vec![1, 2, 1]] {
            let (nll, _) = ctc_loss_and_grad(&logits, &labels).unwrap();
            let want = brute_force(&logits, &labels);
            assert!((nll - want).abs() < 1e-10, "{labels:?}: {nll} vs {want}");
        }
    }

    #[test]
    fn impossible_alignment_is_none() {
        let logits = Array2::zeros((2, 3));
        assert!(ctc_loss_and_grad(&logits, &[1, 1]).is_none());
        assert!(ctc_loss_and_grad(&logits, &[1, 2]).is_some());
    }
}
