//! Energy-based voice activity segmentation and the corpus duration/scarcity filters.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::audio::{read_store_audio, write_wav, AudioRecord};
use crate::corpus::durations::compute_durations;
use crate::corpus::manifest::{secs_to_micros, ManifestEntry};
use crate::error::{Error, Result};
use crate::textio::KeyValues;

pub const MIN_SEGMENT_SEC: f64 = 1.0;
pub const MAX_SEGMENT_SEC: f64 = 30.0;
/// Languages with less than 20 minutes are dropped.
pub const MIN_LANGUAGE_SEC: f64 = 1200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VadConfig {
    pub frame_ms: u32,
    /// Frame energy threshold in dB relative to the recording's mean power.
    pub energy_threshold_db: f64,
    /// Frames a segment stays open after the last speech frame.
    pub hangover_frames: usize,
    /// Gaps at least this long close a segment; shorter gaps are merged.
    pub min_silence_ms: u32,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_ms: 30,
            energy_threshold_db: -35.0,
            hangover_frames: 0,
            min_silence_ms: 300,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<()> {
        if ![10, 20, 30].contains(&self.frame_ms) {
            return Err(Error::Config(format!("frame_ms must be 10, 20 or 30 (got {})", self.frame_ms)));
        }
        if !self.energy_threshold_db.is_finite() {
            return Err(Error::Config("energy_threshold_db must be finite".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known(&["frame_ms", "energy_threshold_db", "hangover_frames", "min_silence_ms"])?;
        let d = Self::default();
        let cfg = Self {
            frame_ms: kv.get_or("frame_ms", d.frame_ms)?,
            energy_threshold_db: kv.get_or("energy_threshold_db", d.energy_threshold_db)?,
            hangover_frames: kv.get_or("hangover_frames", d.hangover_frames)?,
            min_silence_ms: kv.get_or("min_silence_ms", d.min_silence_ms)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub parent_id: String,
    pub start: f64,
    pub end: f64,
    pub language: String,
    pub source: String,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Per-frame speech decisions before smoothing.
pub fn speech_frames(samples: &[f32], sample_rate: u32, cfg: &VadConfig) -> Vec<bool> {
    let frame = (sample_rate * cfg.frame_ms / 1000) as usize;
    let mean_power = samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum::<f64>() / samples.len().max(1) as f64;
    if mean_power <= 0.0 {
        return vec![false; samples.len().div_ceil(frame)];
    }
    let floor = mean_power * 10f64.powf(cfg.energy_threshold_db / 10.0);
    samples
        .chunks(frame)
        .map(|c| {
            let e = c.iter().map(|&s| f64::from(s) * f64::from(s)).sum::<f64>() / c.len() as f64;
            e > floor
        })
        .collect()
}

pub fn vad_segment(rec: &AudioRecord, cfg: &VadConfig) -> Result<Vec<Segment>> {
    cfg.validate()?;
    let frame = (rec.sample_rate * cfg.frame_ms / 1000) as usize;
    let speech = speech_frames(&rec.samples, rec.sample_rate, cfg);
    let min_gap = (cfg.min_silence_ms as usize).div_ceil(cfg.frame_ms as usize);

    // runs of speech frames, [start, end)
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut f = 0;
    while f < speech.len() {
        if speech[f] {
            let s = f;
            while f < speech.len() && speech[f] {
                f += 1;
            }
            match runs.last_mut() {
                Some(last) if s - last.1 < min_gap => last.1 = f,
                _ => runs.push((s, f)),
            }
        } else {
            f += 1;
        }
    }

    let sr = f64::from(rec.sample_rate);
    let n = rec.samples.len();
    let segs = runs
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            let mut end_frame = e + cfg.hangover_frames;
            if let Some(&(next, _)) = runs.get(i + 1) {
                end_frame = end_frame.min(next);
            }
            Segment {
                parent_id: rec.id.clone(),
                start: (s * frame) as f64 / sr,
                end: (end_frame * frame).min(n) as f64 / sr,
                language: rec.language.clone(),
                source: rec.source.clone(),
            }
        })
        .collect();
    Ok(segs)
}

fn length_in_range(micros: i64, min_dur: f64, max_dur: f64) -> bool {
    micros >= secs_to_micros(min_dur) && micros <= secs_to_micros(max_dur)
}

/// Keep segments with `min_dur <= length <= max_dur` (both ends inclusive).
pub fn apply_duration_filter(segments: &[Segment], min_dur: f64, max_dur: f64) -> Vec<Segment> {
    segments
        .iter()
        .filter(|s| length_in_range(secs_to_micros(s.end) - secs_to_micros(s.start), min_dur, max_dur))
        .cloned()
        .collect()
}

/// Manifest-level form of [`apply_duration_filter`].
pub fn filter_entry_durations(manifest: &[ManifestEntry], min_dur: f64, max_dur: f64) -> Vec<ManifestEntry> {
    manifest
        .iter()
        .filter(|e| length_in_range(e.micros(), min_dur, max_dur))
        .cloned()
        .collect()
}

/// Remove every language whose total is strictly below `min_total` seconds.
pub fn drop_scarce_languages(manifest: &[ManifestEntry], min_total: f64) -> Vec<ManifestEntry> {
    let table = compute_durations(manifest);
    let keep: BTreeSet<&str> = table
        .languages()
        .filter(|(_, secs)| secs_to_micros(*secs) >= secs_to_micros(min_total))
        .map(|(l, _)| l)
        .collect();
    manifest.iter().filter(|e| keep.contains(e.lang.as_str())).cloned().collect()
}

/// Duration filter first, then the scarcity filter over what survived.
pub fn apply_corpus_rules(manifest: &[ManifestEntry]) -> Vec<ManifestEntry> {
    let kept = filter_entry_durations(manifest, MIN_SEGMENT_SEC, MAX_SEGMENT_SEC);
    drop_scarce_languages(&kept, MIN_LANGUAGE_SEC)
}

/// Segment every recording of `manifest` (audio under `store`), write segment audio
/// to `out_store/segments/`, and return the filtered segment manifest.
pub fn run_segmenter(
    manifest: &[ManifestEntry],
    store: &Path,
    out_store: &Path,
    cfg: &VadConfig,
) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    let per_rec: Vec<Vec<ManifestEntry>> = manifest
        .par_iter()
        .map(|e| {
            let rec = read_store_audio(&store.join(&e.path), &e.id, &e.lang, &e.source)?;
            let segs = apply_duration_filter(&vad_segment(&rec, cfg)?, MIN_SEGMENT_SEC, MAX_SEGMENT_SEC);
            segs.iter()
                .enumerate()
                .map(|(i, s)| {
                    let id = format!("{}_s{i:04}", e.id);
                    let clip = rec.slice(&id, s.start, s.end)?;
                    let rel = format!("segments/{id}.wav");
                    write_wav(&out_store.join(&rel), &clip.samples, clip.sample_rate)?;
                    Ok(ManifestEntry::new(id, rel, &e.lang, clip.duration(), &e.source, e.split))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<ManifestEntry> = per_rec.into_iter().flatten().collect();
    all.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(apply_corpus_rules(&all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::manifest::Split;

    fn tone(secs: f64, amp: f32) -> Vec<f32> {
        (0..(secs * 16_000.0) as usize)
            .map(|i| amp * (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 16_000.0).sin())
            .collect()
    }

    fn silence(secs: f64) -> Vec<f32> {
        vec![0.0; (secs * 16_000.0) as usize]
    }

    fn rec(parts: &[Vec<f32>]) -> AudioRecord {
        AudioRecord::new("r", parts.concat(), "yor", "test").unwrap()
    }

    #[test]
    fn single_speech_region() {
        let r = rec(&[silence(2.0), tone(3.0, 0.5), silence(2.0)]);
        let segs = vad_segment(&r, &VadConfig::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert!((segs[0].start - 2.0).abs() <= 0.03, "{:?}", segs[0]);
        assert!((segs[0].end - 5.0).abs() <= 0.03, "{:?}", segs[0]);
    }

    #[test]
    fn all_silence_is_empty() {
        assert!(vad_segment(&rec(&[silence(10.0)]), &VadConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn short_gap_is_merged_long_gap_splits() {
        let cfg = VadConfig::default();
        let merged = vad_segment(&rec(&[silence(0.5), tone(1.5, 0.5), silence(0.05), tone(1.5, 0.5), silence(0.5)]), &cfg).unwrap();
        assert_eq!(merged.len(), 1);
        let split = vad_segment(&rec(&[silence(0.5), tone(1.5, 0.5), silence(0.6), tone(1.5, 0.5), silence(0.5)]), &cfg).unwrap();
        assert_eq!(split.len(), 2);
        assert!(split[0].end <= split[1].start);
    }

    #[test]
    fn trailing_silence_does_not_move_segments() {
        let cfg = VadConfig::default();
        let base = vad_segment(&rec(&[silence(1.0), tone(2.0, 0.3), silence(1.0), tone(1.2, 0.3)]), &cfg).unwrap();
        let padded = vad_segment(&rec(&[silence(1.0), tone(2.0, 0.3), silence(1.0), tone(1.2, 0.3), silence(5.0)]), &cfg).unwrap();
        assert_eq!(base.len(), padded.len());
        for (a, b) in base.iter().zip(&padded) {
            assert!((a.start - b.start).abs() <= 0.03 && (a.end - b.end).abs() <= 0.03);
        }
    }

    #[test]
    fn config_validation() {
        let kv = KeyValues::parse("frame_ms=25\n", "t").unwrap();
        assert!(VadConfig::from_kv(&kv).is_err());
        let kv = KeyValues::parse("frame_ms=10\nmin_silence_ms=200\n", "t").unwrap();
        assert_eq!(VadConfig::from_kv(&kv).unwrap().frame_ms, 10);
    }

    #[test]
    fn duration_filter_is_inclusive() {
        let segs: Vec<Segment> = [0.5, 1.0, 15.0, 30.0, 31.0]
            .iter()
            .map(|&l| Segment { parent_id: "p".into(), start: 2.0, end: 2.0 + l, language: "yor".into(), source: "s".into() })
            .collect();
        let kept: Vec<f64> = apply_duration_filter(&segs, 1.0, 30.0).iter().map(Segment::length).collect();
        assert_eq!(kept, vec![1.0, 15.0, 30.0]);
        assert!(apply_duration_filter(&[], 1.0, 30.0).is_empty());
    }

    #[test]
    fn scarcity_threshold() {
        let mk = |lang: &str, mins: f64| -> Vec<ManifestEntry> {
            let n = (mins * 2.0) as usize;
            (0..n).map(|i| ManifestEntry::new(format!("{lang}{i}"), "p", lang, 30.0, "s", Split::Train)).collect()
        };
        let m = [mk("aaa", 19.0), mk("bbb", 21.0), mk("ccc", 20.0)].concat();
        let langs: BTreeSet<String> = drop_scarce_languages(&m, MIN_LANGUAGE_SEC).into_iter().map(|e| e.lang).collect();
        assert_eq!(langs, ["bbb", "ccc"].iter().map(|s| s.to_string()).collect());
        let single = mk("bbb", 21.0);
        assert_eq!(drop_scarce_languages(&single, MIN_LANGUAGE_SEC), single);
    }
}
