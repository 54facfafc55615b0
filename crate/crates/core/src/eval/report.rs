use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::histogram::SizeHistogram;
use super::metrics::{metrics, ConfusionMatrix, EvalLevel, MetricSet};
use crate::{Error, Result};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_MD: &str = "report.md";

const UNDEFINED: &str = "undefined";

pub const RPN_CONVENTION: &str = "RPN-level counting: TP = proposals matched to a space-occupying object; \
FP = other proposals on frames holding a space-occupying object, plus proposals matched to another class \
on frames without one; TN = unmatched proposals on frames without a space-occupying object; \
FN = space-occupying objects no proposal matched.";

pub const FPR_NOTE: &str = "\"FPR (reported 'spe')\" is FP / (FP + TN), the quantity the published \
\"spe\" columns hold. Specificity is TN / (FP + TN).";

/// Confusion matrices of one pipeline stage, keyed by level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    pub levels: BTreeMap<EvalLevel, ConfusionMatrix>,
}

impl StageMetrics {
    pub fn new(stage: impl Into<String>) -> Self {
        Self { stage: stage.into(), levels: BTreeMap::new() }
    }

    pub fn with(mut self, level: EvalLevel, cm: ConfusionMatrix) -> Self {
        self.levels.insert(level, cm);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Fixed axis ranges; derived from the data when absent.
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramPlot {
    pub title: String,
    pub histogram: SizeHistogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlotKind {
    Line(LinePlot),
    Histogram(HistogramPlot),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plot {
    /// Output file name without extension.
    pub name: String,
    pub kind: PlotKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    pub body: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub stages: Vec<StageMetrics>,
    pub sections: Vec<Section>,
    pub plots: Vec<Plot>,
}

/// One parsed row of `report.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub stage: String,
    pub level: EvalLevel,
    pub cm: ConfusionMatrix,
    pub metrics: MetricSet,
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| x.to_string())
}

fn fmt_percent(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{:.2}", 100.0 * x))
}

const CSV_HEADER: [&str; 10] = [
    "stage", "level", "tp", "fp", "tn", "fn", "sensitivity", "fpr", "specificity", "accuracy",
];

/// Rates are written with full precision so the file parses back exactly.
pub fn render_csv(report: &Report) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for s in &report.stages {
        for (level, cm) in &s.levels {
            let m = metrics(cm);
            w.write_record([
                s.stage.clone(),
                level.name().to_string(),
                cm.tp.to_string(),
                cm.fp.to_string(),
                cm.tn.to_string(),
                cm.fn_.to_string(),
                fmt_value(m.sensitivity),
                fmt_value(m.false_positive_rate),
                fmt_value(m.specificity),
                fmt_value(m.accuracy),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Metric(format!("CSV buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Metric(format!("CSV encoding: {e}")))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::Metric(format!("unexpected report header {headers:?}")));
    }
    let count = |s: &str| s.parse::<u64>().map_err(|e| Error::Metric(format!("count {s:?}: {e}")));
    let rate = |s: &str| -> Result<Option<f64>> {
        if s == UNDEFINED {
            return Ok(None);
        }
        s.parse::<f64>()
            .map(Some)
            .map_err(|e| Error::Metric(format!("rate {s:?}: {e}")))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let level = EvalLevel::ALL
            .into_iter()
            .find(|l| l.name() == &rec[1])
            .ok_or_else(|| Error::Metric(format!("unknown level {:?}", &rec[1])))?;
        rows.push(ReportRow {
            stage: rec[0].to_string(),
            level,
            cm: ConfusionMatrix::new(count(&rec[2])?, count(&rec[3])?, count(&rec[4])?, count(&rec[5])?),
            metrics: MetricSet {
                sensitivity: rate(&rec[6])?,
                false_positive_rate: rate(&rec[7])?,
                specificity: rate(&rec[8])?,
                accuracy: rate(&rec[9])?,
            },
        });
    }
    Ok(rows)
}

pub fn render_markdown(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}\n", report.title);
    let _ = writeln!(out, "{RPN_CONVENTION}\n");
    let _ = writeln!(out, "{FPR_NOTE}\n");

    let levels: Vec<EvalLevel> = EvalLevel::ALL
        .into_iter()
        .filter(|l| report.stages.iter().any(|s| s.levels.contains_key(l)))
        .collect();
    if report.stages.is_empty() || levels.is_empty() {
        let _ = writeln!(out, "No confusion matrices were recorded.\n");
    }
    for level in levels {
        let _ = writeln!(out, "## {}\n", level.title());
        let _ = write!(out, "|");
        for s in &report.stages {
            let _ = write!(out, " | {}", s.stage);
        }
        let _ = writeln!(out, " |");
        let _ = write!(out, "|---");
        for _ in &report.stages {
            let _ = write!(out, "|---:");
        }
        let _ = writeln!(out, "|");

        let cms: Vec<Option<&ConfusionMatrix>> = report.stages.iter().map(|s| s.levels.get(&level)).collect();
        let ms: Vec<MetricSet> = cms.iter().map(|c| c.map(metrics).unwrap_or_default()).collect();
        let count_rows: [(&str, fn(&ConfusionMatrix) -> u64); 4] = [
            ("TP", |c| c.tp),
            ("FP", |c| c.fp),
            ("TN", |c| c.tn),
            ("FN", |c| c.fn_),
        ];
        for (name, get) in count_rows {
            let _ = write!(out, "| {name}");
            for c in &cms {
                let _ = write!(out, " | {}", c.map_or_else(|| "-".to_string(), |c| get(c).to_string()));
            }
            let _ = writeln!(out, " |");
        }
        let rate_rows: [(&str, fn(&MetricSet) -> Option<f64>); 4] = [
            ("Sensitivity (%)", |m| m.sensitivity),
            ("FPR (reported 'spe') (%)", |m| m.false_positive_rate),
            ("Specificity (%)", |m| m.specificity),
            ("Accuracy (%)", |m| m.accuracy),
        ];
        for (name, get) in rate_rows {
            let _ = write!(out, "| {name}");
            for m in &ms {
                let _ = write!(out, " | {}", fmt_percent(get(m)));
            }
            let _ = writeln!(out, " |");
        }
        let _ = writeln!(out);
    }

    for s in &report.sections {
        let _ = writeln!(out, "## {}\n\n{}\n", s.heading, s.body.trim_end());
    }
    if !report.plots.is_empty() {
        let _ = writeln!(out, "## Plots\n");
        for p in &report.plots {
            let _ = writeln!(out, "- [{}]({}.svg)", plot_title(p), p.name);
        }
    }
    out
}

fn plot_title(p: &Plot) -> &str {
    match &p.kind {
        PlotKind::Line(l) => &l.title,
        PlotKind::Histogram(h) => &h.title,
    }
}

const SVG_W: f64 = 480.0;
const SVG_H: f64 = 360.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn svg_open(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        SVG_W / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + (SVG_W - LEFT - RIGHT) / 2.0,
        SVG_H - 12.0,
        xml_escape(x_label)
    );
    let cy = TOP + (SVG_H - TOP - BOTTOM) / 2.0;
    let _ = writeln!(
        out,
        r#"<text x="16" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 16 {cy:.2})">{}</text>"#,
        xml_escape(y_label)
    );
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (SVG_W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        SVG_H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (SVG_H - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, ticks: usize) {
        let (l, r, t, b) = (LEFT, SVG_W - RIGHT, TOP, SVG_H - BOTTOM);
        let _ = writeln!(out, r#"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#, r - l, b - t);
        for i in 0..=ticks {
            let f = i as f64 / ticks as f64;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            let (x, y) = (self.px(xv), self.py(yv));
            let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{b:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, b + 4.0);
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, b + 16.0, tick_label(xv));
            let _ = writeln!(out, r#"<line x1="{:.2}" y1="{y:.2}" x2="{l:.2}" y2="{y:.2}" stroke="black"/>"#, l - 4.0);
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, l - 6.0, y + 4.0, tick_label(yv));
        }
    }
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn padded_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

pub fn render_line_svg(p: &LinePlot) -> String {
    let pts = || p.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (x0, x1) = p.x_range.unwrap_or_else(|| padded_range(pts().map(|q| q.0)));
    let (y0, y1) = p.y_range.unwrap_or_else(|| padded_range(pts().map(|q| q.1)));
    let frame = Frame { x0, x1, y0, y1 };
    let mut out = String::new();
    svg_open(&mut out, &p.title, &p.x_label, &p.y_label);
    frame.axes(&mut out, 5);
    for (i, s) in p.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        let ly = TOP + 14.0 + 14.0 * i as f64;
        let lx = SVG_W - RIGHT - 120.0;
        let _ = writeln!(out, r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#, ly - 4.0, lx + 16.0, ly - 4.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 20.0, xml_escape(&s.name));
    }
    out.push_str("</svg>\n");
    out
}

pub fn render_histogram_svg(p: &HistogramPlot) -> String {
    let h = &p.histogram;
    let n = h.bins().max(1);
    let edge = n as f64 * h.bin_width;
    let frame = Frame { x0: 0.0, x1: edge, y0: 0.0, y1: edge };
    let mut out = String::new();
    svg_open(&mut out, &p.title, "box width (px)", "box height (px)");
    let max = h.counts.iter().flatten().copied().max().unwrap_or(0);
    for (i, row) in h.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let (wl, wh) = h.bin_range(i);
            let (hl, hh) = h.bin_range(j);
            let (x, y) = (frame.px(wl), frame.py(hh));
            let _ = writeln!(
                out,
                r##"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4" fill-opacity="{:.3}"><title>{c}</title></rect>"##,
                frame.px(wh) - x,
                frame.py(hl) - y,
                0.15 + 0.85 * c as f64 / max as f64
            );
        }
    }
    frame.axes(&mut out, n.min(8));
    out.push_str("</svg>\n");
    out
}

pub fn render_svg(p: &Plot) -> String {
    match &p.kind {
        PlotKind::Line(l) => render_line_svg(l),
        PlotKind::Histogram(h) => render_histogram_svg(h),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `report.csv`, `report.md` and one SVG per plot into `dir`.
/// Output depends only on `report`. Returns the written paths.
pub fn emit_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let csv_path = dir.join(REPORT_CSV);
    write_file(&csv_path, &render_csv(report)?)?;
    written.push(csv_path);
    let md_path = dir.join(REPORT_MD);
    write_file(&md_path, &render_markdown(report))?;
    written.push(md_path);
    for p in &report.plots {
        let path = dir.join(format!("{}.svg", p.name));
        write_file(&path, &render_svg(p))?;
        written.push(path);
    }
    Ok(written)
}
