//! Deterministic synthetic speech-like corpora.
//!
//! Every voice (a language, or a dialect of one) hums a steady drone at its own
//! pitch and renders each transcript character as a short tone whose harmonic
//! mix is voice specific. A space is a pure high tone of its own. Characters
//! are separated by a short gap, so repeated characters stay distinguishable.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{write_manifest, write_transcripts, write_wav, ManifestEntry, Split, Transcripts, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::{stage_rng, StageRng};

pub const DEFAULT_ALPHABET: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
pub const YORUBA_ALPHABET: [char; 7] = ['a', 'e', 'ẹ', 'i', 'o', 'ọ', 'u'];
pub const YORUBA_DIALECTS: [&str; 3] = ["standard", "ife", "ilaje"];
const TONE_HZ: [f64; 8] = [520.0, 820.0, 1250.0, 1800.0, 2600.0, 3300.0, 4100.0, 5000.0];
const CHAR_SEC: f64 = 0.12;
const CHAR_GAP_SEC: f64 = 0.04;
const SPACE_HZ: f64 = 6200.0;
const EDGE_SEC: f64 = 0.1;
const MIN_SEC: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Voice {
    pub lang: String,
    /// Stored in the manifest `source` column (dialect name for dialect corpora).
    pub source: String,
    pub drone_hz: f64,
    pub harmonics: [f64; 3],
    /// Multiplies every tone frequency.
    pub pitch_scale: f64,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Voice {
    /// The `i`-th stock voice; stock voices are pairwise easy to tell apart.
    pub fn stock(i: usize, lang: &str, train: usize, valid: usize, test: usize) -> Self {
        const DRONES: [f64; 6] = [110.0, 175.0, 260.0, 345.0, 150.0, 220.0];
        const MIXES: [[f64; 3]; 6] = [
            [1.0, 0.0, 0.0],
            [0.6, 0.4, 0.0],
            [0.5, 0.0, 0.5],
            [0.4, 0.3, 0.3],
            [0.7, 0.0, 0.3],
            [0.5, 0.5, 0.0],
        ];
        Self {
            lang: lang.to_string(),
            source: "synth".to_string(),
            drone_hz: DRONES[i % DRONES.len()],
            harmonics: MIXES[i % MIXES.len()],
            pitch_scale: 1.0,
            train,
            valid,
            test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub voices: Vec<Voice>,
    pub alphabet: Vec<char>,
    pub min_words: usize,
    pub max_words: usize,
    pub max_word_len: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// Three languages with separable signatures over the five-tone alphabet.
    pub fn three_languages(train: usize, valid: usize, test: usize, seed: u64) -> Self {
        let voices = ["hau", "swh", "yor"].iter().enumerate().map(|(i, l)| Voice::stock(i, l, train, valid, test)).collect();
        Self { voices, alphabet: DEFAULT_ALPHABET.to_vec(), min_words: 1, max_words: 3, max_word_len: 3, seed }
    }

    /// One language, three dialect voices. `scarce_train` replaces the
    /// training count of the second dialect.
    pub fn yoruba_dialects(train: usize, scarce_train: usize, valid: usize, test: usize, seed: u64) -> Self {
        let voices = YORUBA_DIALECTS
            .iter()
            .enumerate()
            .map(|(i, d)| Voice {
                source: d.to_string(),
                pitch_scale: [1.0, 1.08, 0.93][i],
                train: if i == 1 { scarce_train } else { train },
                ..Voice::stock(i, "yor", train, valid, test)
            })
            .collect();
        Self { voices, alphabet: YORUBA_ALPHABET.to_vec(), min_words: 1, max_words: 3, max_word_len: 3, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.alphabet.is_empty() || self.alphabet.len() > TONE_HZ.len() {
            return Err(Error::Config(format!("synthetic alphabet needs 1..={} characters", TONE_HZ.len())));
        }
        if self.min_words == 0 || self.min_words > self.max_words || self.max_word_len == 0 {
            return Err(Error::Config("synthetic word counts must satisfy 1 <= min_words <= max_words".into()));
        }
        if self.voices.is_empty() {
            return Err(Error::Config("synthetic corpus needs at least one voice".into()));
        }
        Ok(())
    }
}

fn random_text(cfg: &SynthConfig, rng: &mut StageRng) -> String {
    let words = rng.random_range(cfg.min_words..=cfg.max_words);
    (0..words)
        .map(|_| {
            let len = rng.random_range(1..=cfg.max_word_len);
            (0..len).map(|_| cfg.alphabet[rng.random_range(0..cfg.alphabet.len())]).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn secs(n: f64) -> usize {
    (n * f64::from(SAMPLE_RATE)).round() as usize
}

fn envelope(i: usize, n: usize) -> f64 {
    (std::f64::consts::PI * i as f64 / n as f64).sin().powf(0.5)
}

/// Renders `text` in `voice`. Characters outside `alphabet` are silent.
pub fn render(voice: &Voice, alphabet: &[char], text: &str, rng: &mut StageRng) -> Vec<f32> {
    let sr = f64::from(SAMPLE_RATE);
    let mut out = vec![0.0f64; secs(EDGE_SEC)];
    let mut first_word = true;
    for word in text.split_whitespace() {
        if !first_word {
            out.extend(std::iter::repeat_n(0.0, secs(CHAR_GAP_SEC)));
            let n = secs(CHAR_SEC);
            let f = SPACE_HZ * voice.pitch_scale;
            let phase = rng.random_range(0.0..TAU);
            out.extend((0..n).map(|i| 0.3 * envelope(i, n) * (TAU * f * i as f64 / sr + phase).sin()));
            out.extend(std::iter::repeat_n(0.0, secs(CHAR_GAP_SEC)));
        }
        first_word = false;
        for (ci, ch) in word.chars().enumerate() {
            if ci > 0 {
                out.extend(std::iter::repeat_n(0.0, secs(CHAR_GAP_SEC)));
            }
            let n = secs(CHAR_SEC);
            let Some(pos) = alphabet.iter().position(|&a| a == ch) else {
                out.extend(std::iter::repeat_n(0.0, n));
                continue;
            };
            let f = TONE_HZ[pos] * voice.pitch_scale;
            let phase = rng.random_range(0.0..TAU);
            for i in 0..n {
                let t = i as f64 / sr;
                let env = envelope(i, n);
                let s: f64 = voice
                    .harmonics
                    .iter()
                    .enumerate()
                    .map(|(h, &w)| w * ((h + 1) as f64 * TAU * f * t + phase).sin())
                    .sum();
                out.push(0.5 * env * s);
            }
        }
    }
    out.extend(std::iter::repeat_n(0.0, secs(EDGE_SEC)));
    if out.len() < secs(MIN_SEC) {
        out.resize(secs(MIN_SEC), 0.0);
    }
    let noise = Normal::new(0.0, 0.003).expect("valid sigma");
    let phase = rng.random_range(0.0..TAU);
    out.iter()
        .enumerate()
        .map(|(i, &s)| {
            let drone = 0.15 * (TAU * voice.drone_hz * i as f64 / sr + phase).sin();
            (s + drone + noise.sample(rng)) as f32
        })
        .collect()
}

/// Adds white Gaussian noise at `snr_db` relative to the signal's mean power.
pub fn add_noise(samples: &[f32], snr_db: f64, seed: u64) -> Vec<f32> {
    let power = samples.iter().map(|&s| f64::from(s).powi(2)).sum::<f64>() / samples.len().max(1) as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    if sigma == 0.0 {
        return samples.to_vec();
    }
    let noise = Normal::new(0.0, sigma).expect("valid sigma");
    let mut rng = stage_rng(seed, "noise");
    samples.iter().map(|&s| (f64::from(s) + noise.sample(&mut rng)) as f32).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub manifest: Vec<ManifestEntry>,
    pub transcripts: Transcripts,
}

/// Writes `audio/<id>.wav` under `store` plus `manifest.tsv` and
/// `transcripts.tsv`, returning both tables.
pub fn generate(cfg: &SynthConfig, store: &Path) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut manifest = Vec::new();
    let mut transcripts = Transcripts::new();
    for voice in &cfg.voices {
        let splits = [(Split::Train, voice.train), (Split::Valid, voice.valid), (Split::Test, voice.test)];
        for (split, count) in splits {
            for i in 0..count {
                let id = format!("{}_{}_{}{:04}", voice.lang, voice.source, split, i);
                let mut rng = stage_rng(cfg.seed, &format!("synth/{id}"));
                let text = random_text(cfg, &mut rng);
                let mut wave = render(voice, &cfg.alphabet, &text, &mut rng);
                crate::corpus::audio::quantize_samples(&mut wave);
                let rel = format!("audio/{id}.wav");
                write_wav(&store.join(&rel), &wave, SAMPLE_RATE)?;
                let dur = wave.len() as f64 / f64::from(SAMPLE_RATE);
                manifest.push(ManifestEntry::new(&id, rel, &voice.lang, dur, &voice.source, split));
                transcripts.insert(id, text);
            }
        }
    }
    manifest.sort_by(|a, b| a.id.cmp(&b.id));
    write_manifest(&store.join("manifest.tsv"), &manifest)?;
    write_transcripts(&store.join("transcripts.tsv"), &transcripts)?;
    Ok(SynthCorpus { manifest, transcripts })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic_and_long_enough() {
        let v = Voice::stock(0, "hau", 1, 0, 0);
        let a = render(&v, &DEFAULT_ALPHABET, "ae i", &mut stage_rng(1, "r"));
        let b = render(&v, &DEFAULT_ALPHABET, "ae i", &mut stage_rng(1, "r"));
        assert_eq!(a, b);
        assert!(a.len() >= 16000);
        assert!(a.iter().all(|s| s.abs() < 1.0));
    }

    #[test]
    fn noise_hits_requested_snr() {
        let v = Voice::stock(1, "swh", 1, 0, 0);
        let clean = render(&v, &DEFAULT_ALPHABET, "aeiou aeiou", &mut stage_rng(2, "r"));
        let noisy = add_noise(&clean, 10.0, 3);
        let ps: f64 = clean.iter().map(|&s| f64::from(s).powi(2)).sum();
        let pn: f64 = clean.iter().zip(&noisy).map(|(&a, &b)| f64::from(b - a).powi(2)).sum();
        let snr = 10.0 * (ps / pn).log10();
        assert!((snr - 10.0).abs() < 0.3, "snr {snr}");
    }

    #[test]
    fn generate_writes_store() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::three_languages(2, 1, 1, 7);
        let c = generate(&cfg, dir.path()).unwrap();
        assert_eq!(c.manifest.len(), 12);
        assert_eq!(c.transcripts.len(), 12);
        assert!(c.manifest.iter().all(|e| e.duration >= 1.0));
        assert_eq!(crate::corpus::read_manifest(&dir.path().join("manifest.tsv")).unwrap(), c.manifest);
    }
}
