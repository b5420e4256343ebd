use std::path::Path;

use crate::corpus::langs::is_valid_language;
use crate::corpus::resample::resample;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Normalized mono audio at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioRecord {
    pub id: String,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub language: String,
    pub source: String,
}

impl AudioRecord {
    pub fn new(
        id: impl Into<String>,
        samples: Vec<f32>,
        language: impl Into<String>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let id = id.into();
        let language = language.into();
        if samples.is_empty() {
            return Err(Error::EmptyAudio(id));
        }
        if !is_valid_language(&language) {
            return Err(Error::Config(format!("`{language}` is not an ISO-639-3 code")));
        }
        Ok(Self {
            id,
            samples,
            sample_rate: SAMPLE_RATE,
            language,
            source: source.into(),
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Sub-record covering `[start, end)` seconds, clamped to the record.
    pub fn slice(&self, id: impl Into<String>, start: f64, end: f64) -> Result<Self> {
        let sr = f64::from(self.sample_rate);
        let a = ((start * sr).round().max(0.0) as usize).min(self.samples.len());
        let b = ((end * sr).round().max(0.0) as usize).min(self.samples.len());
        AudioRecord::new(id, self.samples[a..b].to_vec(), &self.language, &self.source)
    }
}

/// Raw decoded audio before normalization.
#[derive(Debug, Clone)]
pub struct DecodedAudio {
    pub sample_rate: u32,
    pub channels: usize,
    /// Interleaved samples in [-1, 1].
    pub interleaved: Vec<f32>,
}

pub fn decode_wav(path: &Path) -> Result<DecodedAudio> {
    let ingest_err = |reason: String| Error::Ingest {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| ingest_err(e.to_string()))?;
    let spec = reader.spec();
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| ingest_err(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| ingest_err(e.to_string()))?
        }
    };
    Ok(DecodedAudio {
        sample_rate: spec.sample_rate,
        channels: usize::from(spec.channels),
        interleaved,
    })
}

/// Arithmetic mean over channels.
pub fn downmix(interleaved: &[f32], channels: usize) -> Vec<f32> {
    if channels <= 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect()
}

/// Decode, downmix and resample to 16 kHz mono.
pub fn ingest_audio(path: &Path, id: &str, language: &str, source: &str) -> Result<AudioRecord> {
    let decoded = decode_wav(path)?;
    normalize_decoded(decoded, id, language, source)
}

pub fn normalize_decoded(
    decoded: DecodedAudio,
    id: &str,
    language: &str,
    source: &str,
) -> Result<AudioRecord> {
    let mono = downmix(&decoded.interleaved, decoded.channels);
    if mono.is_empty() {
        return Err(Error::EmptyAudio(id.to_string()));
    }
    let samples = resample(&mono, decoded.sample_rate, SAMPLE_RATE);
    AudioRecord::new(id, samples, language, source)
}

/// 16-bit PCM mono WAV at the record's rate.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        w.write_sample(quantize_i16(s)).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

pub fn quantize_i16(s: f32) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Round samples to the 16-bit grid so in-memory audio matches what a store read returns.
pub fn quantize_samples(samples: &mut [f32]) {
    for s in samples {
        *s = f32::from(quantize_i16(*s)) / 32768.0;
    }
}

pub fn read_store_audio(path: &Path, id: &str, language: &str, source: &str) -> Result<AudioRecord> {
    ingest_audio(path, id, language, source)
}
