//! Plots from evaluation reports.
//!
//! Writes into the output directory:
//! - `scatter.png` / `scatter.tsv`: one point per report (its `mean` row, or
//!   the aggregate of its rows), runtime in ms on x against PSNR_T on y
//! - `trace.png` / `trace.tsv`: per-frame PSNR of every sequence, one
//!   polyline per sequence

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use hdrfuse_core::metrics::{parse_table, SequenceReport};
use image::{Rgb, RgbImage};

use crate::eval::AGGREGATE_NAME;

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 480;
pub const MARGIN: u32 = 40;
pub const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
pub const AXIS: Rgb<u8> = Rgb([0, 0, 0]);
const PALETTE: [Rgb<u8>; 6] = [
    Rgb([31, 119, 180]),
    Rgb([214, 39, 40]),
    Rgb([44, 160, 44]),
    Rgb([148, 103, 189]),
    Rgb([255, 127, 14]),
    Rgb([23, 190, 207]),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ScatterPoint {
    pub label: String,
    pub runtime_ms: f64,
    pub psnr_t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub label: String,
    pub psnr: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PlotOutcome {
    pub points: Vec<ScatterPoint>,
    pub traces: Vec<Trace>,
    pub scatter: PathBuf,
    pub trace: PathBuf,
}

/// Expand `pattern` and parse every matching report.
pub fn load_reports(pattern: &str) -> Result<Vec<(PathBuf, Vec<SequenceReport>)>> {
    let mut out = Vec::new();
    for entry in glob::glob(pattern).with_context(|| format!("bad glob pattern {pattern}"))? {
        let path = entry?;
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let rows = parse_table(&text).with_context(|| format!("parsing {}", path.display()))?;
        out.push((path, rows));
    }
    ensure!(!out.is_empty(), "no reports match {pattern}");
    Ok(out)
}

fn report_label(path: &Path) -> String {
    let dir = path.parent().and_then(|p| p.file_name());
    match dir {
        Some(d) if !d.is_empty() => d.to_string_lossy().into_owned(),
        _ => path.display().to_string(),
    }
}

pub fn scatter_points(reports: &[(PathBuf, Vec<SequenceReport>)]) -> Vec<ScatterPoint> {
    reports
        .iter()
        .filter_map(|(path, rows)| {
            let summary = rows
                .iter()
                .find(|r| r.sequence == AGGREGATE_NAME)
                .cloned()
                .or_else(|| SequenceReport::aggregate(AGGREGATE_NAME, rows))?;
            Some(ScatterPoint {
                label: report_label(path),
                runtime_ms: summary.runtime_ms,
                psnr_t: summary.psnr_t,
            })
        })
        .collect()
}

pub fn traces(reports: &[(PathBuf, Vec<SequenceReport>)]) -> Vec<Trace> {
    let multi = reports.len() > 1;
    reports
        .iter()
        .flat_map(|(path, rows)| {
            rows.iter().filter(|r| r.sequence != AGGREGATE_NAME && !r.psnr_trace.is_empty()).map(move |r| Trace {
                label: if multi { format!("{}/{}", report_label(path), r.sequence) } else { r.sequence.clone() },
                psnr: r.psnr_trace.clone(),
            })
        })
        .collect()
}

/// Linear map from a data range onto a pixel span; a degenerate range maps
/// to the middle of the span.
#[derive(Clone, Copy, Debug)]
struct Axis {
    lo: f64,
    hi: f64,
    start: f64,
    end: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, start: f64, end: f64) -> Self {
        let (lo, hi) = values
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        Self { lo, hi, start, end }
    }

    fn map(&self, v: f64) -> i64 {
        let span = self.hi - self.lo;
        let frac = if span > 0.0 && span.is_finite() { (v - self.lo) / span } else { 0.5 };
        (self.start + frac * (self.end - self.start)).round() as i64
    }
}

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND);
    let (x0, y0) = (MARGIN as i64, (HEIGHT - MARGIN) as i64);
    line(&mut img, (x0, y0), ((WIDTH - MARGIN / 2) as i64, y0), AXIS);
    line(&mut img, (x0, y0), (x0, (MARGIN / 2) as i64), AXIS);
    img
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, c);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn marker(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    for dy in -2..=2 {
        for dx in -2..=2 {
            put(img, x + dx, y + dy, c);
        }
    }
}

// Plot area inside the axes, leaving a small inset so markers stay clear of them.
fn x_axis(values: impl Iterator<Item = f64>) -> Axis {
    Axis::new(values, (MARGIN + 10) as f64, (WIDTH - MARGIN) as f64)
}

fn y_axis(values: impl Iterator<Item = f64>) -> Axis {
    Axis::new(values, (HEIGHT - MARGIN - 10) as f64, MARGIN as f64)
}

pub fn render_scatter(points: &[ScatterPoint]) -> RgbImage {
    let mut img = canvas();
    let xs = x_axis(points.iter().map(|p| p.runtime_ms));
    let ys = y_axis(points.iter().map(|p| p.psnr_t));
    for (i, p) in points.iter().enumerate() {
        marker(&mut img, xs.map(p.runtime_ms), ys.map(p.psnr_t), PALETTE[i % PALETTE.len()]);
    }
    img
}

pub fn render_traces(traces: &[Trace]) -> RgbImage {
    let mut img = canvas();
    let longest = traces.iter().map(|t| t.psnr.len()).max().unwrap_or(0);
    let xs = x_axis((0..longest.max(1)).map(|i| i as f64));
    let ys = y_axis(traces.iter().flat_map(|t| t.psnr.iter().copied()));
    for (i, t) in traces.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(i64, i64)> = t.psnr.iter().enumerate().map(|(f, &v)| (xs.map(f as f64), ys.map(v))).collect();
        for w in pts.windows(2) {
            line(&mut img, w[0], w[1], color);
        }
        if let [only] = pts[..] {
            put(&mut img, only.0, only.1, color);
        }
    }
    img
}

fn scatter_tsv(points: &[ScatterPoint]) -> String {
    let mut out = String::from("report\truntime_ms\tpsnr_t\n");
    for p in points {
        let _ = writeln!(out, "{}\t{}\t{}", p.label, p.runtime_ms, p.psnr_t);
    }
    out
}

fn trace_tsv(traces: &[Trace]) -> String {
    let mut out = String::from("sequence\tframe\tpsnr\n");
    for t in traces {
        for (f, v) in t.psnr.iter().enumerate() {
            let _ = writeln!(out, "{}\t{f}\t{v}", t.label);
        }
    }
    out
}

pub fn plot_reports(pattern: &str, out: &Path) -> Result<PlotOutcome> {
    let reports = load_reports(pattern)?;
    let points = scatter_points(&reports);
    ensure!(!points.is_empty(), "reports matching {pattern} contain no rows");
    let traces = traces(&reports);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let scatter = out.join("scatter.png");
    render_scatter(&points).save(&scatter).with_context(|| format!("writing {}", scatter.display()))?;
    std::fs::write(out.join("scatter.tsv"), scatter_tsv(&points)).context("writing scatter.tsv")?;
    let trace = out.join("trace.png");
    render_traces(&traces).save(&trace).with_context(|| format!("writing {}", trace.display()))?;
    std::fs::write(out.join("trace.tsv"), trace_tsv(&traces)).context("writing trace.tsv")?;
    Ok(PlotOutcome {
        points,
        traces,
        scatter,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn painted_rows(img: &RgbImage, color: Rgb<u8>) -> Vec<u32> {
        let mut rows: Vec<u32> = img.enumerate_pixels().filter(|(_, _, p)| **p == color).map(|(_, y, _)| y).collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }

    #[test]
    fn constant_trace_is_one_pixel_row() {
        let t = Trace {
            label: "s".into(),
            psnr: vec![31.5; 7],
        };
        let img = render_traces(&[t]);
        assert_eq!(painted_rows(&img, PALETTE[0]).len(), 1);
    }

    #[test]
    fn varying_trace_spans_rows() {
        let t = Trace {
            label: "s".into(),
            psnr: vec![30.0, 32.0, 31.0],
        };
        let rows = painted_rows(&render_traces(&[t]), PALETTE[0]);
        assert_eq!(*rows.first().unwrap(), MARGIN);
        assert_eq!(*rows.last().unwrap(), HEIGHT - MARGIN - 10);
    }

    #[test]
    fn single_point_is_centred() {
        let p = ScatterPoint {
            label: "r".into(),
            runtime_ms: 12.0,
            psnr_t: 30.0,
        };
        let img = render_scatter(&[p]);
        let cx = ((MARGIN + 10) + (WIDTH - MARGIN)) / 2;
        let cy = ((HEIGHT - MARGIN - 10) + MARGIN) / 2;
        assert_eq!(*img.get_pixel(cx, cy), PALETTE[0]);
    }

    #[test]
    fn bresenham_hits_endpoints() {
        let mut img = RgbImage::from_pixel(20, 20, BACKGROUND);
        line(&mut img, (2, 3), (17, 11), AXIS);
        assert_eq!(*img.get_pixel(2, 3), AXIS);
        assert_eq!(*img.get_pixel(17, 11), AXIS);
        let n = img.pixels().filter(|p| **p == AXIS).count();
        assert_eq!(n, 16);
    }
}
