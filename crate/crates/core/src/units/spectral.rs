//! Log-mel and MFCC front-ends aligned to 50 frames per second.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const HOP: usize = 320;
pub const WINDOW: usize = 400;
pub const N_FFT: usize = 512;
pub const N_MELS: usize = 80;
pub const N_MFCC: usize = 13;
const LOG_FLOOR: f64 = 1e-10;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-style filters, `n_mels x (n_fft/2 + 1)`.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Array2<f64> {
    let bins = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate / 2.0);
    let points: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let bin_hz = |b: usize| b as f64 * sample_rate / n_fft as f64;
    Array2::from_shape_fn((n_mels, bins), |(m, b)| {
        let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
        let f = bin_hz(b);
        if f <= lo || f >= hi {
            0.0
        } else if f <= mid {
            (f - lo) / (mid - lo)
        } else {
            (hi - f) / (hi - mid)
        }
    })
}

pub struct LogMel {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Array2<f64>,
}

impl Default for LogMel {
    fn default() -> Self {
        Self::new()
    }
}

impl LogMel {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        let window = (0..WINDOW)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / WINDOW as f64).cos())
            .collect();
        Self {
            fft,
            window,
            filters: mel_filterbank(N_MELS, N_FFT, 16_000.0),
        }
    }

    /// `floor(len / 320) x 80`; frame `t` covers samples `[320 t, 320 t + 400)`, zero padded.
    pub fn compute(&self, samples: &[f32]) -> Result<Array2<f64>> {
        if samples.len() < WINDOW {
            return Err(Error::EmptyFeature {
                samples: samples.len(),
                window: WINDOW,
            });
        }
        let frames = samples.len() / HOP;
        let bins = N_FFT / 2 + 1;
        let mut out = Array2::zeros((frames, N_MELS));
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut power = vec![0.0; bins];
        for t in 0..frames {
            for (i, slot) in buf.iter_mut().enumerate() {
                let idx = t * HOP + i;
                let v = if i < WINDOW && idx < samples.len() {
                    f64::from(samples[idx]) * self.window[i]
                } else {
                    0.0
                };
                *slot = Complex::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            for (b, p) in power.iter_mut().enumerate() {
                *p = buf[b].norm_sqr();
            }
            for m in 0..N_MELS {
                let e: f64 = self.filters.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
                out[[t, m]] = e.max(LOG_FLOOR).ln();
            }
        }
        Ok(out)
    }
}

/// Orthonormal DCT-II of each log-mel row, first [`N_MFCC`] coefficients.
pub fn mfcc_from_log_mel(log_mel: &Array2<f64>) -> Array2<f64> {
    let n = log_mel.ncols();
    let basis = Array2::from_shape_fn((n, N_MFCC), |(i, k)| {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        scale * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n as f64).cos()
    });
    log_mel.dot(&basis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_is_fifty_per_second() {
        let lm = LogMel::new().compute(&vec![0.01; 32_000]).unwrap();
        assert_eq!(lm.dim(), (100, N_MELS));
    }

    #[test]
    fn silence_is_stationary() {
        let lm = LogMel::new().compute(&vec![0.0; 16_000]).unwrap();
        let first = lm.row(0).to_owned();
        for row in lm.rows() {
            for (a, b) in row.iter().zip(first.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tone_peaks_in_the_right_band() {
        let x: Vec<f32> = (0..16_000).map(|i| (2.0 * std::f32::consts::PI * 1000.0 * i as f32 / 16_000.0).sin()).collect();
        let lm = LogMel::new().compute(&x).unwrap();
        let row = lm.row(25);
        let argmax = (0..N_MELS).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let fb = mel_filterbank(N_MELS, N_FFT, 16_000.0);
        let bin_1k = (1000.0 * N_FFT as f64 / 16_000.0) as usize;
        assert!(fb[[argmax, bin_1k]] > 0.0);
    }

    #[test]
    fn too_short() {
        assert!(matches!(LogMel::new().compute(&[0.0; 399]), Err(Error::EmptyFeature { .. })));
    }

    #[test]
    fn mfcc_shape() {
        let lm = LogMel::new().compute(&vec![0.01; 8_000]).unwrap();
        assert_eq!(mfcc_from_log_mel(&lm).dim(), (25, N_MFCC));
    }
}
