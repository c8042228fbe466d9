//! Trajectory plots rendered as standalone SVG plus a long-format CSV of the
//! plotted points.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiment::runner::{fmt_f64, read_lindyn_csv, RunReport};
use crate::experiment::spec::Mode;
use crate::lindyn::Record;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    Gamma,
    Epsilon,
}

impl Panel {
    pub fn name(self) -> &'static str {
        match self {
            Panel::Gamma => "gamma",
            Panel::Epsilon => "epsilon",
        }
    }

    fn value(self, r: &Record) -> f64 {
        match self {
            Panel::Gamma => r.gamma,
            Panel::Epsilon => r.epsilon,
        }
    }

    /// ε spans many decades, so its axis is logarithmic.
    fn log_scale(self) -> bool {
        self == Panel::Epsilon
    }
}

impl FromStr for Panel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(Panel::Gamma),
            "epsilon" => Ok(Panel::Epsilon),
            other => Err(Error::contract(format!(
                "unknown panel `{other}` (expected gamma or epsilon)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOutput {
    pub svg: PathBuf,
    pub csv: PathBuf,
    pub series: Vec<Series>,
}

/// One series per (cell, replica) trajectory in the report.
pub fn collect_series(report_dir: &Path, panel: Panel) -> Result<Vec<Series>> {
    let report = RunReport::load(report_dir)?;
    if report.mode != Mode::Lindyn {
        return Err(Error::contract("plots are only available for lindyn reports"));
    }
    let mut series = Vec::new();
    for cell in &report.cells {
        for run in &cell.runs {
            let records = read_lindyn_csv(&report_dir.join(&run.file))?;
            let name = if report.replicas > 1 {
                format!("{} #{}", cell.label, run.replica)
            } else {
                cell.label.clone()
            };
            series.push(Series {
                name,
                points: records.iter().map(|r| (r.step, panel.value(r))).collect(),
            });
        }
    }
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::contract("report contains no trajectory points"));
    }
    Ok(series)
}

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 560.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 240.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_svg(series: &[Series], panel: Panel) -> String {
    let tf = |v: f64| {
        if panel.log_scale() {
            v.max(f64::MIN_POSITIVE).log10()
        } else {
            v
        }
    };
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let x_max = pts().map(|p| p.0).max().unwrap_or(1).max(1) as f64;
    let (mut y_lo, mut y_hi) = pts()
        .map(|p| tf(p.1))
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    if y_hi - y_lo < 1e-12 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + plot_w * x / x_max;
    let sy = |y: f64| MARGIN_T + plot_h * (1.0 - (y - y_lo) / (y_hi - y_lo));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let frac = k as f64 / 4.0;
        let yv = y_lo + frac * (y_hi - y_lo);
        let label = if panel.log_scale() {
            format!("1e{yv:.1}")
        } else {
            format!("{yv:.3}")
        };
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#,
            MARGIN_L - 6.0,
            sy(yv) + 4.0
        );
        let xv = frac * x_max;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.0}</text>"#,
            sx(xv),
            HEIGHT - MARGIN_B + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">step</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{}</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        panel.name()
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| tf(p.1).is_finite())
            .map(|p| format!("{:.2},{:.2}", sx(p.0 as f64), sy(tf(p.1))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = MARGIN_T + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn render_csv(series: &[Series]) -> String {
    let mut out = String::from("series,step,value\n");
    for s in series {
        let name = if s.name.contains(',') || s.name.contains('"') {
            format!("\"{}\"", s.name.replace('"', "\"\""))
        } else {
            s.name.clone()
        };
        for (step, v) in &s.points {
            let _ = writeln!(out, "{name},{step},{}", fmt_f64(*v));
        }
    }
    out
}

/// Writes `plot_<panel>.svg` and `plot_<panel>.csv` into the report
/// directory.
pub fn emit_plot(report_dir: &Path, panel: Panel) -> Result<PlotOutput> {
    let series = collect_series(report_dir, panel)?;
    let svg = report_dir.join(format!("plot_{}.svg", panel.name()));
    let csv = report_dir.join(format!("plot_{}.csv", panel.name()));
    fs::write(&svg, render_svg(&series, panel))?;
    fs::write(&csv, render_csv(&series))?;
    Ok(PlotOutput { svg, csv, series })
}
