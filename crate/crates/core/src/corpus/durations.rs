use std::collections::BTreeMap;

use crate::corpus::manifest::{micros_to_secs, ManifestEntry};

/// Per-language and per-source duration totals, summed in integer microseconds
/// so totals do not depend on entry order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DurationTable {
    lang_us: BTreeMap<String, i64>,
    source_us: BTreeMap<String, i64>,
}

impl DurationTable {
    pub fn language_seconds(&self, lang: &str) -> f64 {
        self.lang_us.get(lang).map_or(0.0, |&us| micros_to_secs(us))
    }

    pub fn source_seconds(&self, source: &str) -> f64 {
        self.source_us.get(source).map_or(0.0, |&us| micros_to_secs(us))
    }

    pub fn languages(&self) -> impl Iterator<Item = (&str, f64)> {
        self.lang_us.iter().map(|(k, &v)| (k.as_str(), micros_to_secs(v)))
    }

    pub fn sources(&self) -> impl Iterator<Item = (&str, f64)> {
        self.source_us.iter().map(|(k, &v)| (k.as_str(), micros_to_secs(v)))
    }

    pub fn is_empty(&self) -> bool {
        self.lang_us.is_empty()
    }

    pub fn total_seconds(&self) -> f64 {
        micros_to_secs(self.lang_us.values().sum())
    }

    pub fn from_language_seconds<'a>(items: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        let mut t = Self::default();
        for (lang, secs) in items {
            *t.lang_us.entry(lang.to_string()).or_default() += (secs * 1e6).round() as i64;
        }
        t
    }

    /// `lang,total_hours` rows, descending by hours (ties by code).
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(&str, i64)> = self.lang_us.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut out = String::from("lang,total_hours\n");
        for (lang, us) in rows {
            out.push_str(&format!("{lang},{:.4}\n", micros_to_secs(us) / 3600.0));
        }
        out
    }
}

pub fn compute_durations(manifest: &[ManifestEntry]) -> DurationTable {
    let mut t = DurationTable::default();
    for e in manifest {
        *t.lang_us.entry(e.lang.clone()).or_default() += e.micros();
        *t.source_us.entry(e.source.clone()).or_default() += e.micros();
    }
    t
}
