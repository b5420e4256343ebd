//! Full-scale reference numbers shown next to desk-scale reports.

use crate::error::{Error, Result};

pub const REFERENCE_LABEL: &str = "reference, not reproduced";
const REFERENCE_TSV: &str = include_str!("../../data/reference_results.tsv");

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceValue {
    pub experiment: String,
    pub model: String,
    pub metric: String,
    pub column: String,
    /// Percent.
    pub value: f64,
}

pub fn reference_values() -> Result<Vec<ReferenceValue>> {
    let mut out = Vec::new();
    for (i, line) in REFERENCE_TSV.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.is_empty()).skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let [experiment, model, metric, column, value] = f[..] else {
            return Err(Error::parse("reference_results.tsv", format!("line {}: expected 5 fields", i + 1)));
        };
        out.push(ReferenceValue {
            experiment: experiment.into(),
            model: model.into(),
            metric: metric.into(),
            column: column.into(),
            value: value.parse().map_err(|_| Error::parse("reference_results.tsv", format!("line {}: bad value", i + 1)))?,
        });
    }
    Ok(out)
}

/// Plain-text block appended to a report's table.
pub fn reference_block(experiment: &str) -> String {
    let rows: Vec<ReferenceValue> = reference_values().unwrap_or_default().into_iter().filter(|r| r.experiment == experiment).collect();
    if rows.is_empty() {
        return String::new();
    }
    let mut s = format!("\n[{REFERENCE_LABEL}]\n");
    for r in rows {
        s += &format!("{:<14} {:<8} {:<10} {:>6.1}\n", r.model, r.metric, r.column, r.value);
    }
    s
}
