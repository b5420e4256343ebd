//! Error rates, F1 scores, confusion analysis and report formatting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::textio::fmt_sig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Minimal unit-cost alignment of `hyp` against `reference`. Among optimal
/// alignments the backtrace prefers substitution (or match), then deletion,
/// then insertion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut c = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diff = reference[i - 1] != hyp[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(diff) {
                c.substitutions += usize::from(diff);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

/// Accumulated edits and reference length over many utterances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorTally {
    pub edits: usize,
    pub ref_len: usize,
}

impl ErrorTally {
    pub fn add(&mut self, counts: EditCounts, ref_len: usize) {
        self.edits += counts.total();
        self.ref_len += ref_len;
    }

    pub fn rate(&self) -> Result<f64> {
        if self.ref_len == 0 {
            return Err(Error::EmptyReference);
        }
        Ok(self.edits as f64 / self.ref_len as f64)
    }
}

pub fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

pub fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

/// Word error rate; may exceed 1.
pub fn wer(reference: &str, hyp: &str) -> Result<f64> {
    let r = words(reference);
    if r.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(edit_distance(&r, &words(hyp)).total() as f64 / r.len() as f64)
}

/// Character error rate over codepoints, spaces included.
pub fn cer(reference: &str, hyp: &str) -> Result<f64> {
    let r = chars(reference);
    if r.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(edit_distance(&r, &chars(hyp)).total() as f64 / r.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct F1Report {
    pub per_language: BTreeMap<String, f64>,
    /// Mean over every language.
    pub avg_star: f64,
    /// Mean over the African subset (`None` when the subset is empty).
    pub avg: Option<f64>,
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Per-language one-vs-rest F1 (0/0 counts as 0) with both averages.
pub fn macro_f1(pairs: &[(String, String)], languages: &[String], african: &BTreeSet<String>) -> Result<F1Report> {
    let known: BTreeSet<&str> = languages.iter().map(String::as_str).collect();
    for (label, pred) in pairs {
        for l in [label, pred] {
            if !known.contains(l.as_str()) {
                return Err(Error::Data(format!("label '{l}' outside the configured language set")));
            }
        }
    }
    let mut per_language = BTreeMap::new();
    for lang in languages {
        let tp = pairs.iter().filter(|(l, p)| l == lang && p == lang).count() as f64;
        let fp = pairs.iter().filter(|(l, p)| l != lang && p == lang).count() as f64;
        let fn_ = pairs.iter().filter(|(l, p)| l == lang && p != lang).count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        per_language.insert(lang.clone(), if denom == 0.0 { 0.0 } else { 2.0 * tp / denom });
    }
    let avg_star = mean(per_language.values().copied()).unwrap_or(0.0);
    let avg = mean(per_language.iter().filter(|(l, _)| african.contains(*l)).map(|(_, v)| *v));
    Ok(F1Report { per_language, avg_star, avg })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub languages: Vec<String>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: &[(String, String)], languages: &[String]) -> Result<Self> {
        let index: BTreeMap<&str, usize> = languages.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut counts = vec![vec![0u64; languages.len()]; languages.len()];
        for (label, pred) in pairs {
            let look = |l: &str| index.get(l).copied().ok_or_else(|| Error::Data(format!("label '{l}' outside the configured language set")));
            counts[look(label)?][look(pred)?] += 1;
        }
        Ok(Self { languages: languages.to_vec(), counts })
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Fraction of language `from` predicted as `to`; `None` for an empty row.
    pub fn rate(&self, from: usize, to: usize) -> Option<f64> {
        let total = self.row_sum(from);
        (total > 0).then(|| self.counts[from][to] as f64 / total as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("true\\pred,{}\n", self.languages.join(","));
        for (i, l) in self.languages.iter().enumerate() {
            let row: Vec<String> = self.counts[i].iter().map(u64::to_string).collect();
            let _ = writeln!(s, "{l},{}", row.join(","));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionPair {
    pub from: String,
    pub to: String,
    pub rate: f64,
    pub reverse_rate: f64,
}

/// Off-diagonal pairs whose rate exceeds the reverse rate by more than
/// `threshold`, largest asymmetry first, at most `top_n`. Pairs involving an
/// empty row are skipped.
pub fn confusion_analysis(m: &ConfusionMatrix, threshold: f64, top_n: usize) -> Vec<ConfusionPair> {
    let n = m.languages.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let (Some(r), Some(back)) = (m.rate(a, b), m.rate(b, a)) else { continue };
            if r - back > threshold {
                out.push(ConfusionPair { from: m.languages[a].clone(), to: m.languages[b].clone(), rate: r, reverse_rate: back });
            }
        }
    }
    out.sort_by(|x, y| (y.rate - y.reverse_rate).total_cmp(&(x.rate - x.reverse_rate)).then_with(|| (&x.from, &x.to).cmp(&(&y.from, &y.to))));
    out.truncate(top_n);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsrLanguageScore {
    pub lang: String,
    pub wer: f64,
    pub cer: f64,
    pub utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsrReport {
    pub per_language: Vec<AsrLanguageScore>,
    pub avg_star_wer: f64,
    pub avg_star_cer: f64,
    pub avg_wer: Option<f64>,
    pub avg_cer: Option<f64>,
}

/// Corpus-level WER/CER per language from `(lang, reference, hypothesis)`
/// triples; utterances with an empty reference are rejected.
pub fn score_asr(rows: &[(String, String, String)], african: &BTreeSet<String>) -> Result<AsrReport> {
    let mut tallies: BTreeMap<&str, (ErrorTally, ErrorTally, usize)> = BTreeMap::new();
    for (lang, r, h) in rows {
        let rw = words(r);
        if rw.is_empty() {
            return Err(Error::EmptyReference);
        }
        let t = tallies.entry(lang).or_default();
        t.0.add(edit_distance(&rw, &words(h)), rw.len());
        let rc = chars(r);
        t.1.add(edit_distance(&rc, &chars(h)), rc.len());
        t.2 += 1;
    }
    let mut per_language = Vec::new();
    for (lang, (w, c, n)) in tallies {
        per_language.push(AsrLanguageScore { lang: lang.to_string(), wer: w.rate()?, cer: c.rate()?, utterances: n });
    }
    let african_rows = || per_language.iter().filter(|s| african.contains(&s.lang));
    Ok(AsrReport {
        avg_star_wer: mean(per_language.iter().map(|s| s.wer)).unwrap_or(0.0),
        avg_star_cer: mean(per_language.iter().map(|s| s.cer)).unwrap_or(0.0),
        avg_wer: mean(african_rows().map(|s| s.wer)),
        avg_cer: mean(african_rows().map(|s| s.cer)),
        per_language,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), pct)
}

impl AsrReport {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for row in &self.per_language {
            s += &serde_json::to_string(row).expect("serializable");
            s.push('\n');
        }
        let summary = serde_json::json!({
            "lang": "avg*", "wer": self.avg_star_wer, "cer": self.avg_star_cer,
        });
        s += &format!("{summary}\n");
        let summary = serde_json::json!({ "lang": "avg", "wer": self.avg_wer, "cer": self.avg_cer });
        s += &format!("{summary}\n");
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<8} {:>8} {:>8} {:>6}\n", "lang", "WER%", "CER%", "utts");
        for r in &self.per_language {
            let _ = writeln!(s, "{:<8} {:>8} {:>8} {:>6}", r.lang, pct(r.wer), pct(r.cer), r.utterances);
        }
        let _ = writeln!(s, "{:<8} {:>8} {:>8}", "avg*", pct(self.avg_star_wer), pct(self.avg_star_cer));
        let _ = writeln!(s, "{:<8} {:>8} {:>8}", "avg", opt_pct(self.avg_wer), opt_pct(self.avg_cer));
        s
    }
}

impl F1Report {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for (lang, f1) in &self.per_language {
            s += &format!("{}\n", serde_json::json!({ "lang": lang, "f1": f1 }));
        }
        s += &format!("{}\n", serde_json::json!({ "lang": "avg*", "f1": self.avg_star }));
        s += &format!("{}\n", serde_json::json!({ "lang": "avg", "f1": self.avg }));
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<8} {:>8}\n", "lang", "F1%");
        for (lang, f1) in &self.per_language {
            let _ = writeln!(s, "{lang:<8} {:>8}", pct(*f1));
        }
        let _ = writeln!(s, "{:<8} {:>8}", "avg*", pct(self.avg_star));
        let _ = writeln!(s, "{:<8} {:>8}", "avg", opt_pct(self.avg));
        s
    }
}

/// Plain decimal rendering used by CSV reports.
pub fn csv_num(v: f64) -> String {
    fmt_sig(v, 10)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn edit_examples() {
        let r = words("the cat sat");
        assert_eq!(edit_distance(&r, &r), EditCounts::default());
        assert_eq!(edit_distance(&r, &words("the cat")), EditCounts { substitutions: 0, insertions: 0, deletions: 1 });
        assert!((wer("the cat sat", "the cat").unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((cer("abc", "abd").unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(edit_distance(&words("a b"), &words("x y z")), EditCounts { substitutions: 2, insertions: 1, deletions: 0 });
        assert_eq!(wer("a b", "x y z").unwrap(), 1.5);
        assert!(matches!(wer("", "x"), Err(Error::EmptyReference)));
        assert!(matches!(cer("", ""), Err(Error::EmptyReference)));
    }

    #[test]
    fn f1_examples() {
        let langs = s(&["a", "b", "c"]);
        let african: BTreeSet<String> = ["a", "b"].iter().map(|x| x.to_string()).collect();
        let perfect: Vec<_> = langs.iter().map(|l| (l.clone(), l.clone())).collect();
        let r = macro_f1(&perfect, &langs, &african).unwrap();
        assert_eq!((r.avg_star, r.avg), (1.0, Some(1.0)));
        let never_c = vec![("a".into(), "a".into()), ("c".into(), "a".into()), ("b".into(), "b".into())];
        let r = macro_f1(&never_c, &langs, &african).unwrap();
        assert_eq!(r.per_language["c"], 0.0);
        assert!(macro_f1(&[("z".into(), "a".into())], &langs, &african).is_err());
        let all: BTreeSet<String> = langs.iter().cloned().collect();
        let r = macro_f1(&never_c, &langs, &all).unwrap();
        assert_eq!(r.avg, Some(r.avg_star));
    }

    #[test]
    fn confusion_examples() {
        let langs = s(&["xho", "zul"]);
        let mut pairs = Vec::new();
        pairs.extend(std::iter::repeat_n(("zul".to_string(), "xho".to_string()), 40));
        pairs.extend(std::iter::repeat_n(("zul".to_string(), "zul".to_string()), 60));
        pairs.extend(std::iter::repeat_n(("xho".to_string(), "xho".to_string()), 100));
        let m = ConfusionMatrix::from_pairs(&pairs, &langs).unwrap();
        assert_eq!(m.rate(1, 0), Some(0.4));
        let flagged = confusion_analysis(&m, 0.1, 5);
        assert_eq!(flagged.len(), 1);
        assert_eq!((flagged[0].from.as_str(), flagged[0].to.as_str()), ("zul", "xho"));
        let diag = ConfusionMatrix::from_pairs(&[("xho".into(), "xho".into()), ("zul".into(), "zul".into())], &langs).unwrap();
        assert!(confusion_analysis(&diag, 0.0, 5).is_empty());
        assert_eq!(m.to_csv(), "true\\pred,xho,zul\nxho,100,0\nzul,40,60\n");
    }

    proptest! {
        #[test]
        fn edit_distance_is_a_metric(a in proptest::collection::vec(0u8..4, 0..8), b in proptest::collection::vec(0u8..4, 0..8), c in proptest::collection::vec(0u8..4, 0..8)) {
            let d = |x: &[u8], y: &[u8]| edit_distance(x, y).total();
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
            prop_assert_eq!(d(&a, &a), 0);
        }

        #[test]
        fn self_error_rates_are_zero(t in "[a-c ]{1,12}") {
            prop_assume!(!t.trim().is_empty());
            prop_assert_eq!(wer(&t, &t).unwrap(), 0.0);
            prop_assert_eq!(cer(&t, &t).unwrap(), 0.0);
        }

        #[test]
        fn confusion_rows_ignore_prediction_relabeling(pairs in proptest::collection::vec((0usize..3, 0usize..3), 0..40), perm in Just([2usize, 0, 1])) {
            let langs = vec!["a".to_string(), "b".to_string(), "c".to_string()];
            let p1: Vec<_> = pairs.iter().map(|&(l, p)| (langs[l].clone(), langs[p].clone())).collect();
            let p2: Vec<_> = pairs.iter().map(|&(l, p)| (langs[l].clone(), langs[perm[p]].clone())).collect();
            let m1 = ConfusionMatrix::from_pairs(&p1, &langs).unwrap();
            let m2 = ConfusionMatrix::from_pairs(&p2, &langs).unwrap();
            for i in 0..3 {
                prop_assert_eq!(m1.row_sum(i), m2.row_sum(i));
            }
        }
    }
}
