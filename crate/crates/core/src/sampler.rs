//! Validation carve-out and temperature-based upsampling of the training mixture.
//!
//! Language probabilities follow `p_i = d_i / sum_j d_j` and the flattened
//! sampling distribution `q_i = p_i^alpha / sum_j p_j^alpha`, computed over the
//! included languages only. Excluded languages stay in the training manifest
//! once, at their natural duration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::corpus::durations::{compute_durations, DurationTable};
use crate::corpus::manifest::{secs_to_micros, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::rng::stage_rng;
use crate::textio::{fmt_sig, parse_field, read_text, write_atomic};

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const SHORT_LANGUAGE_SEC: f64 = 7200.0;
pub const SHORT_VALID_QUOTA_SEC: f64 = 600.0;
pub const LONG_VALID_QUOTA_SEC: f64 = 1800.0;

/// Languages left out of the temperature distribution by default.
pub const DEFAULT_EXCLUDED: [&str; 4] = ["eng", "ara", "fra", "por"];

/// Neumaier-compensated sum.
pub fn stable_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRow {
    pub lang: String,
    pub d_sec: f64,
    /// `None` for excluded languages.
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub repetition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub alpha: f64,
    pub rows: Vec<PlanRow>,
    pub target_total: f64,
    /// Training manifest the plan was computed from, when known.
    pub manifest: Option<PathBuf>,
}

impl SamplingPlan {
    pub fn q(&self, lang: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.lang == lang).and_then(|r| r.q)
    }

    pub fn p(&self, lang: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.lang == lang).and_then(|r| r.p)
    }

    pub fn excluded(&self) -> BTreeSet<&str> {
        self.rows.iter().filter(|r| r.q.is_none()).map(|r| r.lang.as_str()).collect()
    }

    pub fn included(&self) -> impl Iterator<Item = &PlanRow> {
        self.rows.iter().filter(|r| r.q.is_some())
    }

    /// Smallest target under which no included language is downsampled.
    pub fn minimal_target(&self) -> f64 {
        self.included()
            .filter(|r| r.d_sec > 0.0)
            .map(|r| r.d_sec / r.q.unwrap_or(1.0))
            .fold(0.0, f64::max)
    }

    /// Re-express repetition factors for a new included-language target.
    pub fn with_target(&self, target_total: f64) -> Self {
        let mut plan = self.clone();
        plan.target_total = target_total;
        for r in &mut plan.rows {
            r.repetition = match r.q {
                Some(q) if r.d_sec > 0.0 => q * target_total / r.d_sec,
                Some(_) => 0.0,
                None => 1.0,
            };
        }
        plan
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# alpha={}\n# target_total_sec={}\n", fmt_sig(self.alpha, 12), fmt_sig(self.target_total, 12));
        if let Some(m) = &self.manifest {
            out.push_str(&format!("# manifest={}\n", m.display()));
        }
        out.push_str("lang\td_sec\tp\tq\trepetition_factor\n");
        let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| fmt_sig(v, 12));
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.lang,
                fmt_sig(r.d_sec, 12),
                opt(r.p),
                opt(r.q),
                fmt_sig(r.repetition, 12)
            ));
        }
        out
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut alpha = None;
        let mut target_total = None;
        let mut manifest = None;
        let mut rows = Vec::new();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    match k.trim() {
                        "alpha" => alpha = Some(parse_field::<f64>(v.trim(), "alpha", context, n)?),
                        "target_total_sec" => target_total = Some(parse_field::<f64>(v.trim(), "target", context, n)?),
                        "manifest" => manifest = Some(PathBuf::from(v.trim())),
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if !header_seen {
                if line != "lang\td_sec\tp\tq\trepetition_factor" {
                    return Err(Error::parse(context, "missing plan header row"));
                }
                header_seen = true;
                continue;
            }
            let f = crate::textio::tsv_fields(line, 5, context, n)?;
            let opt = |s: &str, what: &str| -> Result<Option<f64>> {
                if s == "-" {
                    Ok(None)
                } else {
                    parse_field(s, what, context, n).map(Some)
                }
            };
            rows.push(PlanRow {
                lang: f[0].to_string(),
                d_sec: parse_field(f[1], "d_sec", context, n)?,
                p: opt(f[2], "p")?,
                q: opt(f[3], "q")?,
                repetition: parse_field(f[4], "repetition_factor", context, n)?,
            });
        }
        Ok(Self {
            alpha: alpha.ok_or_else(|| Error::parse(context, "missing `# alpha=` line"))?,
            rows,
            target_total: target_total.unwrap_or(0.0),
            manifest,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

pub fn compute_sampling_probs(durations: &DurationTable, alpha: f64, excluded: &BTreeSet<String>) -> Result<SamplingPlan> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive (got {alpha})")));
    }
    let included: Vec<(&str, f64)> = durations.languages().filter(|(l, _)| !excluded.contains(*l)).collect();
    let total = stable_sum(included.iter().map(|(_, d)| *d));
    if total <= 0.0 {
        return Err(Error::DegenerateDistribution);
    }
    let p: BTreeMap<&str, f64> = included.iter().map(|&(l, d)| (l, d / total)).collect();
    let powered: BTreeMap<&str, f64> = p.iter().map(|(&l, &pi)| (l, if pi > 0.0 { pi.powf(alpha) } else { 0.0 })).collect();
    let z = stable_sum(powered.values().copied());
    let rows = durations
        .languages()
        .map(|(lang, d)| PlanRow {
            lang: lang.to_string(),
            d_sec: d,
            p: p.get(lang).copied(),
            q: if alpha == 1.0 { p.get(lang).copied() } else { powered.get(lang).map(|w| w / z) },
            repetition: 1.0,
        })
        .collect();
    let plan = SamplingPlan {
        alpha,
        rows,
        target_total: 0.0,
        manifest: None,
    };
    let target = plan.minimal_target();
    Ok(plan.with_target(target))
}

fn shuffled_by_language<'a>(entries: &[&'a ManifestEntry], seed: u64, stage: &str) -> BTreeMap<&'a str, Vec<&'a ManifestEntry>> {
    let mut by_lang: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in entries {
        by_lang.entry(e.lang.as_str()).or_default().push(e);
    }
    for (lang, list) in by_lang.iter_mut() {
        list.sort_by(|a, b| a.id.cmp(&b.id));
        list.shuffle(&mut stage_rng(seed, &format!("{stage}/{lang}")));
    }
    by_lang
}

/// Hold out a validation set per language: 10 minutes for languages under
/// 2 hours, 30 minutes otherwise. A language whose total does not exceed its
/// quota gives at most half of its audio to validation.
pub fn carve_validation(manifest: &[ManifestEntry], seed: u64) -> (Vec<ManifestEntry>, Vec<ManifestEntry>) {
    let refs: Vec<&ManifestEntry> = manifest.iter().collect();
    let by_lang = shuffled_by_language(&refs, seed, "carve_validation");
    let mut valid_ids = BTreeSet::new();
    for list in by_lang.values() {
        let total_us: i64 = list.iter().map(|e| e.micros()).sum();
        let quota_us = if total_us < secs_to_micros(SHORT_LANGUAGE_SEC) {
            secs_to_micros(SHORT_VALID_QUOTA_SEC)
        } else {
            secs_to_micros(LONG_VALID_QUOTA_SEC)
        };
        let mut acc = 0i64;
        if total_us <= quota_us {
            for e in list {
                if 2 * (acc + e.micros()) > total_us {
                    break;
                }
                acc += e.micros();
                valid_ids.insert(e.id.as_str());
            }
        } else {
            for e in list {
                if acc >= quota_us {
                    break;
                }
                acc += e.micros();
                valid_ids.insert(e.id.as_str());
            }
        }
    }
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for e in manifest {
        if valid_ids.contains(e.id.as_str()) {
            valid.push(ManifestEntry { split: Split::Valid, ..e.clone() });
        } else {
            train.push(e.clone());
        }
    }
    (train, valid)
}

/// Materialize the temperature-sampled training manifest. Each included language
/// receives about `q_i * target_total` seconds by cycling through its shuffled
/// segments until twenty longest-segment lengths of quota remain, then filling
/// that tail with the multiset of its segments whose total lands closest to
/// it. Repeated copies get an `@k` id suffix.
pub fn build_upsampled_manifest(
    train: &[ManifestEntry],
    plan: &SamplingPlan,
    target_total: f64,
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    let excluded = plan.excluded();
    let known: BTreeSet<&str> = plan.rows.iter().map(|r| r.lang.as_str()).collect();
    if let Some(e) = train.iter().find(|e| !known.contains(e.lang.as_str())) {
        return Err(Error::Config(format!("language `{}` is not covered by the sampling plan", e.lang)));
    }
    let table = compute_durations(train);
    let included_total: f64 = plan.included().map(|r| table.language_seconds(&r.lang)).sum();
    if target_total + 1e-6 < included_total {
        return Err(Error::Config(format!(
            "target_total {target_total:.3} s is below the included data ({included_total:.3} s)"
        )));
    }
    let refs: Vec<&ManifestEntry> = train.iter().collect();
    let by_lang = shuffled_by_language(&refs, seed, "upsample");
    let mut out = Vec::new();
    for row in plan.included() {
        let q = row.q.unwrap_or(0.0);
        let list = by_lang.get(row.lang.as_str()).filter(|l| !l.is_empty());
        let Some(list) = list else {
            if q > 0.0 {
                return Err(Error::MissingLanguage(row.lang.clone()));
            }
            continue;
        };
        let quota_us = (q * target_total * 1e6).round() as i64;
        if list.iter().all(|e| e.micros() == 0) {
            continue;
        }
        let max_us = list.iter().map(|e| e.micros()).max().unwrap_or(0);
        let cyclic_us = quota_us - quota_us.min(TAIL_SEGMENTS * max_us);
        let mut picks = Vec::new();
        let mut acc = 0i64;
        while acc + list[picks.len() % list.len()].micros() <= cyclic_us {
            acc += list[picks.len() % list.len()].micros();
            picks.push(picks.len() % list.len());
        }
        picks.extend(closest_fill(list, quota_us - acc));
        let mut uses = vec![0usize; list.len()];
        for i in picks {
            let e = list[i];
            let id = if uses[i] == 0 { e.id.clone() } else { format!("{}@{}", e.id, uses[i]) };
            uses[i] += 1;
            out.push(ManifestEntry { id, ..e.clone() });
        }
    }
    for e in train.iter().filter(|e| excluded.contains(e.lang.as_str())) {
        out.push(e.clone());
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out.shuffle(&mut stage_rng(seed, "upsample/global"));
    Ok(out)
}

const FILL_RES_US: i64 = 10_000;
/// Longest segments' worth of quota left to [`closest_fill`].
const TAIL_SEGMENTS: i64 = 20;

/// Indices into `list` (repeats allowed) whose durations sum closest to
/// `remainder_us`, found by unbounded subset sum at 10 ms resolution over the
/// distinct lengths. Ties prefer the smaller total.
fn closest_fill(list: &[&ManifestEntry], remainder_us: i64) -> Vec<usize> {
    let target = ((remainder_us as f64) / FILL_RES_US as f64).round() as usize;
    if target == 0 {
        return Vec::new();
    }
    let mut items: Vec<(usize, usize)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, e) in list.iter().enumerate() {
        let u = ((e.micros() as f64 / FILL_RES_US as f64).round() as usize).max(1);
        if seen.insert(u) {
            items.push((u, i));
        }
    }
    let max_u = items.iter().map(|&(u, _)| u).max().unwrap_or(1);
    let limit = target + max_u;
    // reach[s] = item completing sum s
    let mut reach: Vec<Option<usize>> = vec![None; limit + 1];
    let mut best = 0usize;
    for s in 1..=limit {
        reach[s] = items.iter().position(|&(u, _)| u <= s && (s == u || reach[s - u].is_some()));
        if reach[s].is_some() && s.abs_diff(target) < best.abs_diff(target) {
            best = s;
        }
    }
    let mut out = Vec::new();
    while best > 0 {
        let (u, i) = items[reach[best].expect("reachable")];
        out.push(i);
        best -= u;
    }
    out
}

/// Plan annotated with the repetition factors actually realized by `manifest`.
pub fn realized_plan(plan: &SamplingPlan, manifest: &[ManifestEntry], target_total: f64) -> SamplingPlan {
    let realized = compute_durations(manifest);
    let mut out = plan.with_target(target_total);
    for r in &mut out.rows {
        if r.d_sec > 0.0 {
            r.repetition = realized.language_seconds(&r.lang) / r.d_sec;
        }
    }
    out
}
