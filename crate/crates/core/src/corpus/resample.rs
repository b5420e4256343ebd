//! Polyphase windowed-sinc resampler for rational rate ratios.

use num_integer::Integer;

const ZERO_CROSSINGS: f64 = 32.0;
const ROLLOFF: f64 = 0.945;
const KAISER_BETA: f64 = 8.6;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    half: isize,
    /// `phases[p][i]` multiplies input sample `n0 - half + 1 + i` for output phase `p`.
    phases: Vec<Vec<f64>>,
}

impl Resampler {
    pub fn new(from_rate: u32, to_rate: u32) -> Self {
        let g = from_rate.gcd(&to_rate);
        let up = (to_rate / g) as usize;
        let down = (from_rate / g) as usize;
        // cutoff relative to the input Nyquist
        let cutoff = ROLLOFF * (up as f64 / down as f64).min(1.0);
        let half = (ZERO_CROSSINGS / cutoff).ceil() as isize;
        let norm = bessel_i0(KAISER_BETA);
        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                let mut taps: Vec<f64> = (-half + 1..=half)
                    .map(|k| {
                        let tau = k as f64 - frac;
                        let r = tau / half as f64;
                        let w = if r.abs() >= 1.0 {
                            0.0
                        } else {
                            bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm
                        };
                        cutoff * sinc(cutoff * tau) * w
                    })
                    .collect();
                let dc: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|t| *t /= dc);
                taps
            })
            .collect();
        Self {
            up,
            down,
            half,
            phases,
        }
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up).div_ceil(self.down)
    }

    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        if self.up == 1 && self.down == 1 {
            return input.to_vec();
        }
        let n = input.len() as isize;
        (0..self.output_len(input.len()))
            .map(|j| {
                let pos = j * self.down;
                let n0 = (pos / self.up) as isize;
                let phase = &self.phases[pos % self.up];
                let start = n0 - self.half + 1;
                let mut acc = 0.0f64;
                for (i, c) in phase.iter().enumerate() {
                    let idx = start + i as isize;
                    if idx >= 0 && idx < n {
                        acc += c * f64::from(input[idx as usize]);
                    }
                }
                acc as f32
            })
            .collect()
    }
}

pub fn resample(input: &[f32], from_rate: u32, to_rate: u32) -> Vec<f32> {
    if from_rate == to_rate {
        return input.to_vec();
    }
    Resampler::new(from_rate, to_rate).process(input)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, secs: f64) -> Vec<f32> {
        let n = (secs * f64::from(rate)) as usize;
        (0..n)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(rate)).sin()) as f32)
            .collect()
    }

    fn interior_peak(x: &[f32]) -> f32 {
        let skip = x.len() / 10;
        x[skip..x.len() - skip].iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    #[test]
    fn tone_amplitude_survives_44k1_to_16k() {
        let x = tone(1000.0, 44_100, 1.0);
        let y = resample(&x, 44_100, 16_000);
        assert_eq!(y.len(), 16_000);
        let rel = (interior_peak(&y) - 0.5).abs() / 0.5;
        assert!(rel < 0.01, "relative amplitude error {rel}");
    }

    #[test]
    fn upsampling_keeps_tone() {
        let x = tone(1000.0, 8_000, 0.5);
        let y = resample(&x, 8_000, 16_000);
        assert_eq!(y.len(), 8_000);
        let expect = tone(1000.0, 16_000, 0.5);
        let err = y[800..7200]
            .iter()
            .zip(&expect[800..7200])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(err < 0.005, "{err}");
    }

    #[test]
    fn rate_arithmetic() {
        assert_eq!(Resampler::new(48_000, 16_000).output_len(144_000), 48_000);
        assert_eq!(resample(&[0.25, -0.5], 16_000, 16_000), vec![0.25, -0.5]);
    }
}
