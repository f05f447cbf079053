//! Trial reports and their deterministic file encodings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use legsim_core::telemetry::TrialLog;
use serde::Serialize;

use crate::error::{HarnessError, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("{}\n", self.title);
        out += &line(&self.columns);
        out.push('\n');
        out += &widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  ");
        out.push('\n');
        for row in &self.rows {
            out += &line(row);
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let esc = |c: &String| {
            if c.contains([',', '"', '\n']) {
                format!("\"{}\"", c.replace('"', "\"\""))
            } else {
                c.clone()
            }
        };
        let mut out = self.columns.iter().map(esc).collect::<Vec<_>>().join(",");
        out.push('\n');
        for row in &self.rows {
            out += &row.iter().map(esc).collect::<Vec<_>>().join(",");
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Series {
    pub label: String,
    pub points: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Plot {
    /// File stem of the emitted SVG.
    pub name: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Draw the `y = 0` line (ground-contact level).
    pub zero_line: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub schema_version: u32,
    pub generator: String,
    pub seed: u64,
    /// Complete resolved configuration, TOML.
    pub config: String,
    /// Defaults and modelling choices the metrics depend on.
    pub assumptions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialReport {
    pub experiment: String,
    pub metrics: BTreeMap<String, f64>,
    pub tables: Vec<Table>,
    #[serde(skip)]
    pub plots: Vec<Plot>,
    pub provenance: Provenance,
    /// Files written for this report, relative to the output directory.
    pub artifacts: Vec<String>,
    /// Runs that failed or were flagged; metrics for them are omitted.
    pub failures: Vec<String>,
    #[serde(skip)]
    pub telemetry: Vec<(String, TrialLog)>,
}

impl TrialReport {
    pub fn new(experiment: impl Into<String>, provenance: Provenance) -> Self {
        TrialReport {
            experiment: experiment.into(),
            metrics: BTreeMap::new(),
            tables: Vec::new(),
            plots: Vec::new(),
            provenance,
            artifacts: Vec::new(),
            failures: Vec::new(),
            telemetry: Vec::new(),
        }
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("experiment: {}\nseed: {}\n\n", self.experiment, self.provenance.seed);
        let width = self.metrics.keys().map(|k| k.len()).max().unwrap_or(0);
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k:<width$}  {}", format_value(*v));
        }
        for t in &self.tables {
            out.push('\n');
            out += &t.to_text();
        }
        if !self.failures.is_empty() {
            out += "\nfailures:\n";
            for f in &self.failures {
                let _ = writeln!(out, "  {f}");
            }
        }
        if !self.provenance.assumptions.is_empty() {
            out += "\nassumptions:\n";
            for a in &self.provenance.assumptions {
                let _ = writeln!(out, "  {a}");
            }
        }
        out
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

/// Fixed-precision rendering used by every text table.
pub fn format_value(v: f64) -> String {
    if !v.is_finite() {
        return "n/a".into();
    }
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Format {
    Json,
    Csv,
    Svg,
    Text,
    /// Per-run telemetry, CSV and JSON lines.
    Telemetry,
}

impl Format {
    pub const DEFAULT: [Format; 4] = [Format::Json, Format::Csv, Format::Svg, Format::Text];
}

impl FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            "text" => Ok(Format::Text),
            "telemetry" => Ok(Format::Telemetry),
            other => Err(HarnessError::Config(format!(
                "unknown format {other:?}; expected json, csv, svg, text or telemetry"
            ))),
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| HarnessError::io(&path, e))?;
    written.push(name.to_string());
    Ok(())
}

/// File stem shared by every artifact of `report`.
fn stem(report: &TrialReport) -> String {
    report.experiment.clone()
}

/// Write `report` into `dir` in each requested format. Returns the paths
/// written, JSON last so that it lists every other artifact.
pub fn emit_report(report: &TrialReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    if report.metrics.is_empty() {
        return Err(HarnessError::Report(format!(
            "{} has no metrics{}",
            report.experiment,
            if report.failures.is_empty() {
                String::new()
            } else {
                format!(" ({})", report.failures.join("; "))
            }
        )));
    }
    if report.provenance.config.is_empty() {
        return Err(HarnessError::Report(format!("{} has no provenance", report.experiment)));
    }
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut formats = formats.to_vec();
    formats.sort();
    formats.dedup();
    let stem = stem(report);
    let mut written = Vec::new();
    for f in &formats {
        match f {
            Format::Json => {}
            Format::Csv => {
                write(dir, &format!("{stem}_metrics.csv"), &report.metrics_csv(), &mut written)?;
                for (i, t) in report.tables.iter().enumerate() {
                    write(dir, &format!("{stem}_table{}.csv", i + 1), &t.to_csv(), &mut written)?;
                }
            }
            Format::Svg => {
                for p in &report.plots {
                    write(dir, &format!("{stem}_{}.svg", p.name), &render_svg(p), &mut written)?;
                }
            }
            Format::Text => write(dir, &format!("{stem}.txt"), &report.to_text(), &mut written)?,
            Format::Telemetry => {
                for (name, log) in &report.telemetry {
                    write(dir, &format!("{stem}_{name}.csv"), &log.to_csv(), &mut written)?;
                    write(dir, &format!("{stem}_{name}.jsonl"), &log.to_json_lines(), &mut written)?;
                }
            }
        }
    }
    if formats.contains(&Format::Json) {
        let mut with_artifacts = report.clone();
        with_artifacts.artifacts = written.clone();
        let json = serde_json::to_string_pretty(&with_artifacts)
            .map_err(|e| HarnessError::Report(format!("JSON encoding failed: {e}")))?;
        write(dir, &format!("{stem}.json"), &(json + "\n"), &mut written)?;
    }
    Ok(written.into_iter().map(|n| dir.join(n)).collect())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    mag * if f < 1.5 {
        1.0
    } else if f < 3.5 {
        2.0
    } else if f < 7.5 {
        5.0
    } else {
        10.0
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Self-contained SVG line plot with axes, ticks and a legend.
pub fn render_svg(plot: &Plot) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 55.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let all = || plot.series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1) = bounds(all().map(|p| p[0]));
    let (mut y0, mut y1) = bounds(all().map(|p| p[1]).chain(plot.zero_line.then_some(0.0)));
    let (xs, ys) = (nice_step(x1 - x0), nice_step(y1 - y0));
    x0 = (x0 / xs).floor() * xs;
    x1 = (x1 / xs).ceil() * xs;
    y0 = (y0 / ys).floor() * ys;
    y1 = (y1 / ys).ceil() * ys;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(&plot.title)
    );
    let ticks = |lo: f64, hi: f64, step: f64| {
        let n = ((hi - lo) / step).round() as i64;
        (0..=n).map(move |i| lo + i as f64 * step)
    };
    for x in ticks(x0, x1, xs) {
        let px = sx(x);
        let _ = writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{top}" x2="{px:.2}" y2="{:.2}" stroke="#e0e0e0"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            top + ph,
            top + ph + 15.0,
            tick_label(x, xs)
        );
    }
    for y in ticks(y0, y1, ys) {
        let py = sy(y);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 6.0,
            py + 4.0,
            tick_label(y, ys)
        );
    }
    if plot.zero_line && y0 <= 0.0 && y1 >= 0.0 {
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#555" stroke-dasharray="4 3"/>"##,
            sy(0.0),
            left + pw
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(&plot.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        top + ph / 2.0,
        escape(&plot.y_label)
    );
    for (i, series) in plot.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .filter(|p| p[0].is_finite() && p[1].is_finite())
            .map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s += "</svg>\n";
    s
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let r = format!("{v:.decimals$}");
    if r.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        format!("{:.decimals$}", 0.0)
    } else {
        r
    }
}
