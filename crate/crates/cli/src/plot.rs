//! `bopo plot`: line charts of training curves as standalone SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use bopo_core::trainer::{parse_curve, TrainRecord};

use crate::emit;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    Step,
    Instances,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum YAxis {
    ValGap,
    Loss,
}

#[derive(clap::Args, Debug)]
pub struct PlotArgs {
    /// Curve files written by `train`; repeat for several series.
    #[arg(long = "curve", required = true)]
    pub curves: Vec<PathBuf>,
    /// Series labels in curve order; defaults to the parent directory names.
    #[arg(long = "label")]
    pub labels: Vec<String>,
    #[arg(long, value_enum, default_value_t = XAxis::Instances)]
    pub x: XAxis,
    #[arg(long, value_enum, default_value_t = YAxis::ValGap)]
    pub y: YAxis,
    #[arg(long)]
    pub title: Option<String>,
    /// Write the SVG here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn points(records: &[TrainRecord], x: XAxis, y: YAxis) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter_map(|r| {
            let xv = match x {
                XAxis::Step => r.step as f64,
                XAxis::Instances => r.instances as f64,
            };
            let yv = match y {
                YAxis::ValGap => r.val_gap,
                YAxis::Loss => r.loss,
            }?;
            yv.is_finite().then_some((xv, yv))
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Axis range padded so that flat series still get a visible extent.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo > 0.0 {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

pub fn render(series: &[Series], x_label: &str, y_label: &str, title: &str) -> String {
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = |v: f64| MARGIN + (v - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |v: f64| HEIGHT - MARGIN - (v - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(w, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        w,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, sx(xv), bottom + 16.0, tick(xv));
        let _ = writeln!(w, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, sy(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(w, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(x_label));
    let _ = writeln!(
        w,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(w, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(w, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, right - 120.0, right - 100.0);
        let _ = writeln!(w, r#"<text x="{}" y="{}">{}</text>"#, right - 94.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

pub fn run(args: PlotArgs) -> Result<()> {
    if !args.labels.is_empty() && args.labels.len() != args.curves.len() {
        bail!("give one --label per --curve");
    }
    let mut series = Vec::new();
    for (i, path) in args.curves.iter().enumerate() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let records = parse_curve(&text).with_context(|| format!("parsing {}", path.display()))?;
        let label = args.labels.get(i).cloned().unwrap_or_else(|| {
            path.parent()
                .and_then(|p| p.file_name())
                .and_then(|n| n.to_str())
                .unwrap_or("curve")
                .to_string()
        });
        let points = points(&records, args.x, args.y);
        if points.is_empty() {
            bail!("{} has no values to plot", path.display());
        }
        series.push(Series { label, points });
    }
    let x_label = match args.x {
        XAxis::Step => "step",
        XAxis::Instances => "instances",
    };
    let y_label = match args.y {
        YAxis::ValGap => "validation gap (%)",
        YAxis::Loss => "training loss",
    };
    let svg = render(&series, x_label, y_label, args.title.as_deref().unwrap_or(""));
    emit(args.out.as_deref(), &svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_every_series() {
        let series = vec![
            Series {
                label: "a<b".into(),
                points: vec![(0.0, 3.0), (10.0, 1.0)],
            },
            Series {
                label: "flat".into(),
                points: vec![(0.0, 2.0)],
            },
        ];
        let svg = render(&series, "x", "y", "t");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("NaN"));
    }
}
