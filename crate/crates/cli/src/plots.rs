//! CSV is the contract here; SVG output is a plain bar chart for quick looks.

use std::collections::BTreeSet;
use std::fmt::Write;
use std::path::Path;

use log::info;
use maftlab_core::corpus::manifest::MANIFEST_HEADER;
use maftlab_core::corpus::{compute_durations, parse_manifest, DurationTable};
use maftlab_core::experiments::{parse_low_resource_csv, LOW_RESOURCE_CSV_HEADER};
use maftlab_core::metrics::csv_num;
use maftlab_core::textio::{read_text, write_atomic};
use maftlab_core::{Error, Result};

const DURATION_HEADER: &str = "lang,total_hours";
pub const LONG_HEADER: &str = "lang,model,budget_min,metric,value";
const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

pub fn emit(input: &Path, out: &Path, svg: bool) -> Result<()> {
    let ctx = input.display().to_string();
    let text = read_text(input)?;
    let header = text.lines().next().map(str::trim_end).unwrap_or("");
    if header == MANIFEST_HEADER {
        durations(&compute_durations(&parse_manifest(&text, &ctx)?), out, svg)
    } else if header == DURATION_HEADER {
        durations(&parse_duration_csv(&text, &ctx)?, out, svg)
    } else if header == LOW_RESOURCE_CSV_HEADER {
        low_resource(&text, out, svg)
    } else {
        Err(Error::parse(ctx, "expected a manifest, a duration table or a low-resource report"))
    }
}

fn parse_duration_csv(text: &str, ctx: &str) -> Result<DurationTable> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let (lang, hours) = line.split_once(',').ok_or_else(|| Error::parse(ctx, format!("line {}: expected lang,hours", i + 1)))?;
        let h: f64 = hours.trim().parse().map_err(|_| Error::parse(ctx, format!("line {}: bad hours `{hours}`", i + 1)))?;
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::parse(ctx, format!("line {}: hours must be non-negative", i + 1)));
        }
        rows.push((lang.trim(), h * 3600.0));
    }
    Ok(DurationTable::from_language_seconds(rows))
}

fn durations(table: &DurationTable, out: &Path, svg: bool) -> Result<()> {
    let csv = table.to_csv();
    write_atomic(&out.join("durations.csv"), csv.as_bytes())?;
    if svg {
        let bars: Vec<(String, Vec<(String, f64)>)> = csv
            .lines()
            .skip(1)
            .filter_map(|l| l.split_once(','))
            .map(|(lang, h)| (lang.to_string(), vec![("hours".to_string(), h.parse().unwrap_or(0.0))]))
            .collect();
        write_atomic(&out.join("durations.svg"), bar_chart("Hours per language", "hours", &bars).as_bytes())?;
    }
    info!("wrote duration plot data for {} languages", table.languages().count());
    Ok(())
}

fn low_resource(text: &str, out: &Path, svg: bool) -> Result<()> {
    let report = parse_low_resource_csv(text)?;
    let mut csv = format!("{LONG_HEADER}\n");
    for r in &report.rows {
        for (metric, v) in [("wer", r.wer), ("cer", r.cer)] {
            let _ = writeln!(csv, "{},{},{},{metric},{}", r.lang, r.model, r.budget_min, csv_num(v));
        }
    }
    write_atomic(&out.join("low_resource_long.csv"), csv.as_bytes())?;
    if svg {
        let langs: BTreeSet<&str> = report.rows.iter().map(|r| r.lang.as_str()).collect();
        let groups: Vec<(String, Vec<(String, f64)>)> = langs
            .into_iter()
            .map(|l| {
                let series = report
                    .rows
                    .iter()
                    .filter(|r| r.lang == l)
                    .map(|r| (format!("{} {} min", r.model, r.budget_min), 100.0 * r.wer))
                    .collect();
                (l.to_string(), series)
            })
            .collect();
        write_atomic(&out.join("low_resource.svg"), bar_chart("WER by training budget", "WER %", &groups).as_bytes())?;
    }
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped vertical bars; series colours follow first appearance.
fn bar_chart(title: &str, ylabel: &str, groups: &[(String, Vec<(String, f64)>)]) -> String {
    let mut series: Vec<&str> = Vec::new();
    for (_, bars) in groups {
        for (s, _) in bars {
            if !series.contains(&s.as_str()) {
                series.push(s);
            }
        }
    }
    let max = groups.iter().flat_map(|(_, b)| b.iter().map(|(_, v)| *v)).fold(0.0f64, f64::max).max(1e-9);
    let (left, top, plot_h, bar_w, gap) = (60.0, 40.0, 300.0, 14.0, 18.0);
    let group_w = bar_w * series.len().max(1) as f64 + gap;
    let width = left + group_w * groups.len() as f64 + 20.0 + 160.0;
    let height = top + plot_h + 60.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(s, "<text x=\"{left}\" y=\"20\" font-size=\"14\">{}</text>", escape(title));
    let _ = writeln!(s, "<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\">{}</text>", top + plot_h / 2.0, top + plot_h / 2.0, escape(ylabel));
    let axis_y = top + plot_h;
    let _ = writeln!(s, "<line x1=\"{left}\" y1=\"{axis_y}\" x2=\"{}\" y2=\"{axis_y}\" stroke=\"black\"/>", left + group_w * groups.len() as f64);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", left - 4.0, top + 4.0, fmt_tick(max));
    let _ = writeln!(s, "<text x=\"{}\" y=\"{axis_y}\" text-anchor=\"end\">0</text>", left - 4.0);
    for (gi, (label, bars)) in groups.iter().enumerate() {
        let x0 = left + gi as f64 * group_w + gap / 2.0;
        for (name, v) in bars {
            let si = series.iter().position(|x| x == name).unwrap_or(0);
            let h = plot_h * v.max(0.0) / max;
            let _ = writeln!(
                s,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar_w}\" height=\"{h:.1}\" fill=\"{}\"><title>{} {}: {}</title></rect>",
                x0 + si as f64 * bar_w,
                axis_y - h,
                PALETTE[si % PALETTE.len()],
                escape(label),
                escape(name),
                fmt_tick(*v)
            );
        }
        let cx = x0 + bar_w * series.len() as f64 / 2.0;
        let _ = writeln!(s, "<text x=\"{cx:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>", axis_y + 16.0, escape(label));
    }
    let lx = left + group_w * groups.len() as f64 + 20.0;
    for (i, name) in series.iter().enumerate().filter(|_| series.len() > 1) {
        let y = top + 16.0 * i as f64;
        let _ = writeln!(s, "<rect x=\"{lx}\" y=\"{y}\" width=\"10\" height=\"10\" fill=\"{}\"/>", PALETTE[i % PALETTE.len()]);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", lx + 14.0, y + 9.0, escape(name));
    }
    s + "</svg>\n"
}

fn fmt_tick(v: f64) -> String {
    if v >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}
