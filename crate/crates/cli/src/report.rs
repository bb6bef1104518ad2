//! Report bundle: SVG plots backed by CSV data and a markdown summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use foresight_core::fsutil::{create_dir, write_atomic};
use foresight_core::perturb::read_results_csv;
use foresight_core::trainer::{read_aggregate_csv, PeriodSummary};
use foresight_core::CoreError;
use foresight_stats::{ci_margin, mean, read_observations, sample_sd, GaussianKde, Group, Observation};

use crate::config::read_snapshot;
use crate::Failure;

/// Period-5 accuracies (percent) reported for the original in-car footage.
pub const REFERENCE_CLEAN_P5: f64 = 81.97;
pub const REFERENCE_BLUR_TOP_P5: f64 = 72.76;
pub const REFERENCE_BLUR_BOTTOM_P5: f64 = 81.85;
pub const REFERENCE_NOTE: &str = "paper reference, not reproduced";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    Line,
    Bars,
    Density,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<Point>,
}

/// Everything needed to draw a chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plot {
    pub title: String,
    pub kind: PlotKind,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlotRow {
    title: String,
    kind: PlotKind,
    x_label: String,
    y_label: String,
    series: String,
    x: f64,
    y: f64,
    margin: Option<f64>,
}

impl Plot {
    /// One row per point, carrying the plot-level fields so the file alone
    /// rebuilds the plot.
    pub fn to_csv(&self) -> anyhow::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.series {
            for p in &s.points {
                w.serialize(PlotRow {
                    title: self.title.clone(),
                    kind: self.kind,
                    x_label: self.x_label.clone(),
                    y_label: self.y_label.clone(),
                    series: s.name.clone(),
                    x: p.x,
                    y: p.y,
                    margin: p.margin,
                })?;
            }
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn from_csv(text: &str) -> anyhow::Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut plot: Option<Plot> = None;
        for row in r.deserialize::<PlotRow>() {
            let row = row?;
            let plot = plot.get_or_insert_with(|| Plot {
                title: row.title.clone(),
                kind: row.kind,
                x_label: row.x_label.clone(),
                y_label: row.y_label.clone(),
                series: Vec::new(),
            });
            let point = Point { x: row.x, y: row.y, margin: row.margin };
            match plot.series.iter_mut().find(|s| s.name == row.series) {
                Some(s) => s.points.push(point),
                None => plot.series.push(Series { name: row.series, points: vec![point] }),
            }
        }
        plot.context("plot CSV has no rows")
    }

    pub fn to_svg(&self) -> String {
        render_svg(self)
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_svg(plot: &Plot) -> String {
    let points = || plot.series.iter().flat_map(|s| s.points.iter());
    let mut xs: Vec<f64> = points().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let (x_min, x_max) = (xs.first().copied().unwrap_or(0.0), xs.last().copied().unwrap_or(1.0));
    let y_hi = points().map(|p| p.y + p.margin.unwrap_or(0.0)).fold(0.0, f64::max);
    let y_max = if plot.kind != PlotKind::Density && y_hi <= 1.0 { 1.0 } else { (y_hi * 1.05).max(1e-9) };
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let sx = |x: f64| match plot.kind {
        PlotKind::Bars => {
            let i = xs.iter().position(|v| *v == x).unwrap_or(0) as f64;
            LEFT + (i + 0.5) * pw / xs.len().max(1) as f64
        }
        _ if x_max > x_min => LEFT + (x - x_min) / (x_max - x_min) * pw,
        _ => LEFT + pw / 2.0,
    };
    let sy = |y: f64| TOP + ph - y.clamp(0.0, y_max) / y_max * ph;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&plot.title));
    let _ = writeln!(svg, r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, TOP + ph, LEFT + pw, TOP + ph);
    let _ = writeln!(svg, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#, TOP + ph);
    for i in 0..=5 {
        let y = y_max * i as f64 / 5.0;
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.2}</text>"#, LEFT - 6.0, sy(y) + 4.0);
        let _ = writeln!(svg, r##"<line x1="{LEFT}" y1="{0:.1}" x2="{1}" y2="{0:.1}" stroke="#e0e0e0"/>"##, sy(y), LEFT + pw);
    }
    let x_ticks: Vec<f64> = match plot.kind {
        PlotKind::Density => (0..=5).map(|i| x_min + (x_max - x_min) * i as f64 / 5.0).collect(),
        _ => xs.clone(),
    };
    for x in x_ticks {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(x), TOP + ph + 18.0, trim_number(x));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 10.0, escape(&plot.x_label));
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(&plot.y_label)
    );
    let n_series = plot.series.len().max(1) as f64;
    let slot = pw / xs.len().max(1) as f64;
    let bar_w = slot * 0.8 / n_series;
    for (si, s) in plot.series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        match plot.kind {
            PlotKind::Line | PlotKind::Density => {
                let with_band: Vec<&Point> = s.points.iter().filter(|p| p.margin.is_some()).collect();
                if with_band.len() >= 2 {
                    let upper = with_band.iter().map(|p| format!("{:.1},{:.1}", sx(p.x), sy(p.y + p.margin.unwrap_or(0.0))));
                    let lower = with_band.iter().rev().map(|p| format!("{:.1},{:.1}", sx(p.x), sy(p.y - p.margin.unwrap_or(0.0))));
                    let pts: Vec<String> = upper.chain(lower).collect();
                    let _ = writeln!(svg, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "));
                }
                let pts: Vec<String> = s.points.iter().map(|p| format!("{:.1},{:.1}", sx(p.x), sy(p.y))).collect();
                let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
                if plot.kind == PlotKind::Line {
                    for p in &s.points {
                        let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sx(p.x), sy(p.y));
                    }
                }
            }
            PlotKind::Bars => {
                for p in &s.points {
                    let x0 = sx(p.x) - slot * 0.4 + si as f64 * bar_w;
                    let _ = writeln!(
                        svg,
                        r#"<rect x="{x0:.1}" y="{:.1}" width="{bar_w:.1}" height="{:.1}" fill="{color}"/>"#,
                        sy(p.y),
                        TOP + ph - sy(p.y)
                    );
                    if let Some(m) = p.margin {
                        let cx = x0 + bar_w / 2.0;
                        let _ = writeln!(
                            svg,
                            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                            sy(p.y - m),
                            sy(p.y + m)
                        );
                    }
                }
            }
        }
        let ly = TOP + 10.0 + si as f64 * 18.0;
        let _ = writeln!(svg, r#"<rect x="{}" y="{}" width="12" height="12" fill="{color}"/>"#, W - RIGHT + 12.0, ly - 10.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}">{}</text>"#, W - RIGHT + 30.0, escape(&s.name));
    }
    svg.push_str("</svg>\n");
    svg
}

fn trim_number(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.2}")
    }
}

fn write_plot(dir: &Path, stem: &str, plot: &Plot, written: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    for (ext, body) in [("csv", plot.to_csv()?), ("svg", plot.to_svg())] {
        let path = dir.join(format!("{stem}.{ext}"));
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(())
}

fn summary_series(name: &str, rows: &[PeriodSummary]) -> Series {
    Series {
        name: name.to_string(),
        points: rows.iter().map(|r| Point { x: f64::from(r.period), y: r.mean, margin: r.margin }).collect(),
    }
}

fn periods(rows: &[Observation], group: Group) -> Vec<u8> {
    let mut p: Vec<u8> = rows.iter().filter(|o| o.group == group).map(|o| o.period).collect();
    p.sort_unstable();
    p.dedup();
    p
}

fn values(rows: &[Observation], group: Group, period: u8) -> Vec<f64> {
    rows.iter().filter(|o| o.group == group && o.period == period).map(|o| o.accuracy).collect()
}

fn group_summary(rows: &[Observation], group: Group) -> Vec<PeriodSummary> {
    periods(rows, group)
        .into_iter()
        .map(|p| {
            let v = values(rows, group, p);
            PeriodSummary { period: p, mean: mean(&v), margin: ci_margin(&v, 0.95).ok(), n: v.len() }
        })
        .collect()
}

fn density_series(name: &str, values: &[f64]) -> Option<Series> {
    if values.len() < 2 || sample_sd(values) == 0.0 {
        return None;
    }
    let kde = GaussianKde::new(values).ok()?;
    let points = (0..=100).map(|i| i as f64 / 100.0).map(|x| Point { x, y: kde.density(x), margin: None }).collect();
    Some(Series { name: name.to_string(), points })
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn pct_margin(m: Option<f64>) -> String {
    m.map_or("-".into(), |m| format!("±{:.2}", 100.0 * m))
}

/// Builds plots and `summary.md` for `run_dir` into `out`; returns the files
/// written. Perturbation output is included only when the run has it.
pub fn build_report(run_dir: &Path, human: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>, Failure> {
    let agg_path = run_dir.join("aggregate.csv");
    if !agg_path.is_file() {
        return Err(Failure::Runtime(CoreError::MissingAggregates(agg_path).into()));
    }
    let model = read_aggregate_csv(&agg_path)?;
    let human_table = human
        .map(|p| read_observations(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let human_rows = human_table.as_ref().map(|t| group_summary(t, Group::Human));
    create_dir(out)?;
    let mut written = Vec::new();

    let mut series = vec![summary_series("model", &model)];
    if let Some(h) = &human_rows {
        series.push(summary_series("human", h));
    }
    let accuracy = Plot {
        title: "Accuracy by period (95% CI)".into(),
        kind: PlotKind::Line,
        x_label: "period".into(),
        y_label: "accuracy".into(),
        series,
    };
    write_plot(out, "accuracy", &accuracy, &mut written)?;

    let obs_path = run_dir.join("model_observations.csv");
    let model_obs = if obs_path.is_file() { Some(read_observations(&obs_path)?) } else { None };
    let mut density = Vec::new();
    for (label, table, group) in [("model", model_obs.as_ref(), Group::Model), ("human", human_table.as_ref(), Group::Human)] {
        let Some(rows) = table else { continue };
        for p in periods(rows, group) {
            let v = values(rows, group, p);
            density.extend(density_series(&format!("{label} p{p}"), &v));
        }
    }
    let kde_written = !density.is_empty();
    if kde_written {
        let plot = Plot {
            title: "Accuracy density (Gaussian KDE, Scott bandwidth)".into(),
            kind: PlotKind::Density,
            x_label: "accuracy".into(),
            y_label: "density".into(),
            series: density,
        };
        write_plot(out, "kde", &plot, &mut written)?;
    }

    let results_path = run_dir.join("perturb").join("results.csv");
    let perturbed = if results_path.is_file() { Some(read_results_csv(&results_path)?) } else { None };
    if let Some(rows) = &perturbed {
        let mut series: Vec<Series> = Vec::new();
        for (name, s) in rows {
            let point = Point { x: f64::from(s.period), y: s.mean, margin: s.margin };
            match series.iter_mut().find(|x| &x.name == name) {
                Some(x) => x.points.push(point),
                None => series.push(Series { name: name.clone(), points: vec![point] }),
            }
        }
        let plot = Plot {
            title: "Accuracy under perturbation (95% CI)".into(),
            kind: PlotKind::Bars,
            x_label: "period".into(),
            y_label: "accuracy".into(),
            series,
        };
        write_plot(out, "perturbation", &plot, &mut written)?;
    }

    let mut md = String::from("# Run report\n\n");
    if let Ok((_, record)) = read_snapshot(run_dir) {
        let _ = writeln!(md, "Configuration fingerprint `{}`; seeds: {}.\n", record.fingerprint, serde_json::to_string(&record.seeds)?);
    }
    md.push_str("## Accuracy by period\n\n");
    md.push_str("| period | model | model 95% margin | n |");
    md.push_str(if human_rows.is_some() { " human | human 95% margin | n |\n" } else { "\n" });
    md.push_str(if human_rows.is_some() { "|---|---|---|---|---|---|---|\n" } else { "|---|---|---|---|\n" });
    for (i, r) in model.iter().enumerate() {
        let _ = write!(md, "| {} | {} | {} | {} |", r.period, pct(r.mean), pct_margin(r.margin), r.n);
        if let Some(h) = human_rows.as_ref().and_then(|h| h.get(i)) {
            let _ = write!(md, " {} | {} | {} |", pct(h.mean), pct_margin(h.margin), h.n);
        }
        md.push('\n');
    }
    let _ = writeln!(md, "\nReference period-5 accuracy on the original footage: {REFERENCE_CLEAN_P5:.2}% ({REFERENCE_NOTE}).\n");
    md.push_str("![accuracy](accuracy.svg)\n\n");
    if kde_written {
        md.push_str("## Accuracy distributions\n\n![kde](kde.svg)\n\n");
    }
    if let Some(rows) = &perturbed {
        md.push_str("## Perturbations\n\n| perturbation | period | accuracy | 95% margin | n |\n|---|---|---|---|---|\n");
        for (name, s) in rows {
            let _ = writeln!(md, "| {name} | {} | {} | {} | {} |", s.period, pct(s.mean), pct_margin(s.margin), s.n);
        }
        md.push_str("\nReference period-5 accuracies on the original footage (");
        md.push_str(REFERENCE_NOTE);
        md.push_str("):\n\n| condition | accuracy |\n|---|---|\n");
        for (name, v) in [("clean", REFERENCE_CLEAN_P5), ("blur_top", REFERENCE_BLUR_TOP_P5), ("blur_bottom", REFERENCE_BLUR_BOTTOM_P5)] {
            let _ = writeln!(md, "| {name} | {v:.2}% |");
        }
        md.push_str("\n![perturbation](perturbation.svg)\n");
    }
    let path = out.join("summary.md");
    write_atomic(&path, md.as_bytes())?;
    written.push(path);
    Ok(written)
}
