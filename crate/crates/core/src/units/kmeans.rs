//! Mini-batch k-means with k-means++ seeding over standardized frame features.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::textio::KeyValues;
use crate::rng::{stage_rng, StageRng};
use crate::units::codebook::Codebook;
use crate::units::FeatureKind;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Rows per update; `>= rows` runs plain Lloyd iterations over the full matrix.
    pub batch_size: usize,
    pub standardize: bool,
    /// Stop when the mean centroid shift falls below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 32,
            seed: 0,
            max_iters: 100,
            batch_size: 1024,
            standardize: true,
            tol: 1e-6,
        }
    }
}

impl KMeansConfig {
    pub const KEYS: [&'static str; 6] = ["k", "seed", "max_iters", "batch_size", "standardize", "tol"];

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            k: kv.get_or("k", d.k)?,
            seed: kv.get_or("seed", d.seed)?,
            max_iters: kv.get_or("max_iters", d.max_iters)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            standardize: kv.get_or("standardize", d.standardize)?,
            tol: kv.get_or("tol", d.tol)?,
        };
        if cfg.k == 0 || cfg.max_iters == 0 || cfg.batch_size == 0 {
            return Err(Error::Config("k, max_iters and batch_size must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "k={}\nseed={}\nmax_iters={}\nbatch_size={}\nstandardize={}\ntol={}\n",
            self.k, self.seed, self.max_iters, self.batch_size, self.standardize, self.tol
        )
    }
}

#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub codebook: Codebook,
    /// Inertia of the k-means++ seeding followed by one entry per full-batch
    /// iteration (empty for mini-batch runs beyond the seeding entry).
    pub inertia_history: Vec<f64>,
    pub init_inertia: f64,
}

pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid index and its squared distance; ties go to the lower index.
pub(crate) fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn inertia(data: &Array2<f64>, centroids: &Array2<f64>) -> f64 {
    data.rows().into_iter().map(|r| nearest(r, centroids).1).sum()
}

fn kmeans_pp(data: &Array2<f64>, k: usize, rng: &mut StageRng) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut d2: Vec<f64> = data.rows().into_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, r) in data.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centroids.row(c)));
        }
    }
    centroids
}

/// Per-dimension mean and standard deviation (1 where the spread is zero).
pub fn standardization(data: ArrayView2<f32>) -> (Vec<f64>, Vec<f64>) {
    let n = data.nrows().max(1) as f64;
    let dims = data.ncols();
    let mut mean = vec![0.0; dims];
    for row in data.rows() {
        for (m, &v) in mean.iter_mut().zip(row.iter()) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dims];
    for row in data.rows() {
        for ((s, &v), m) in var.iter_mut().zip(row.iter()).zip(&mean) {
            *s += (f64::from(v) - m).powi(2);
        }
    }
    let std = var.iter().map(|s| {
        let sd = (s / n).sqrt();
        if sd > 1e-12 { sd } else { 1.0 }
    });
    (mean, std.collect())
}

pub fn train_kmeans(features: ArrayView2<f32>, kind: FeatureKind, cfg: &KMeansConfig) -> Result<KMeansRun> {
    if cfg.k < 2 {
        return Err(Error::Config(format!("k must be at least 2 (got {})", cfg.k)));
    }
    let n = features.nrows();
    let distinct: HashSet<Vec<u32>> = features.rows().into_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
    if n < cfg.k || distinct.len() < cfg.k {
        return Err(Error::InsufficientData { rows: distinct.len().min(n), k: cfg.k });
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("k-means input features".into()));
    }
    let (mean, std) = if cfg.standardize {
        standardization(features)
    } else {
        (vec![0.0; features.ncols()], vec![1.0; features.ncols()])
    };
    let data = Array2::from_shape_fn(features.dim(), |(i, j)| (f64::from(features[[i, j]]) - mean[j]) / std[j]);
    let mut rng = stage_rng(cfg.seed, "kmeans");
    let mut centroids = kmeans_pp(&data, cfg.k, &mut rng);
    let init_inertia = inertia(&data, &centroids);
    let mut history = vec![init_inertia];

    if cfg.batch_size >= n {
        let mut labels = vec![usize::MAX; n];
        for _ in 0..cfg.max_iters {
            let mut sums = Array2::<f64>::zeros(centroids.dim());
            let mut counts = vec![0usize; cfg.k];
            let mut changed = false;
            for (i, r) in data.rows().into_iter().enumerate() {
                let (c, _) = nearest(r, &centroids);
                changed |= labels[i] != c;
                labels[i] = c;
                counts[c] += 1;
                sums.row_mut(c).scaled_add(1.0, &r);
            }
            for c in 0..cfg.k {
                if counts[c] > 0 {
                    let row = &sums.row(c) / counts[c] as f64;
                    centroids.row_mut(c).assign(&row);
                }
            }
            history.push(inertia(&data, &centroids));
            if !changed {
                break;
            }
        }
    } else {
        let mut counts = vec![0usize; cfg.k];
        let mut calm = 0;
        for _ in 0..cfg.max_iters {
            let batch: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..n)).collect();
            let assigned: Vec<usize> = batch.iter().map(|&i| nearest(data.row(i), &centroids).0).collect();
            let before = centroids.clone();
            for (&i, &c) in batch.iter().zip(&assigned) {
                counts[c] += 1;
                let eta = 1.0 / counts[c] as f64;
                let mut row = centroids.row_mut(c);
                row *= 1.0 - eta;
                row.scaled_add(eta, &data.row(i));
            }
            let shift = (&centroids - &before).mapv(|v| v * v).sum() / cfg.k as f64;
            calm = if shift < cfg.tol { calm + 1 } else { 0 };
            if calm >= 3 {
                break;
            }
        }
    }

    let centroids_f32 = centroids.mapv(|v| v as f32);
    let rounded = centroids_f32.mapv(f64::from);
    let training_inertia = inertia(&data, &rounded);
    let codebook = Codebook {
        centroids: centroids_f32,
        feature_kind: kind,
        seed: cfg.seed,
        training_inertia,
        mean: mean.iter().map(|&v| v as f32).collect(),
        std: std.iter().map(|&v| v as f32).collect(),
        provenance: format!("trained:k={},rows={n}", cfg.k),
    };
    Ok(KMeansRun {
        codebook,
        inertia_history: history,
        init_inertia,
    })
}
