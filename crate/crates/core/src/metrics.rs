//! Evaluation metrics in the tone-mapped domain.
//!
//! Predictions may carry small negative radiance after the residual stage;
//! they are clamped at zero before tone mapping.
//!
//! AB, MADB, LSD and STD have no formal definition to follow, so each lives
//! in exactly one function here:
//! - `B_t` is the mean of `255 * luma(tau(frame_t))` with BT.601 weights.
//! - AB is the mean over frames of `|B_hat_t - B_t|`.
//! - MADB is the mean over consecutive frames of `|B_hat_{t+1} - B_hat_t|`.
//! - LSD is the population standard deviation of `{B_hat_t}`.
//! - STD is the population standard deviation of per-frame PSNR.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imaging::ToneMapParams;
use crate::tensor::Tensor;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn check_shapes(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_sequences(a: &[Tensor], b: &[Tensor], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("sequence lengths {} and {} differ", a.len(), b.len())));
    }
    if a.len() < min {
        return Err(Error::Argument(format!("metric needs at least {min} frames, got {}", a.len())));
    }
    a.iter().zip(b).try_for_each(|(x, y)| check_shapes(x, y))
}

/// `tau(max(x, 0))` elementwise.
pub fn tone_mapped(x: &Tensor, p: &ToneMapParams) -> Tensor {
    x.map(|v| p.curve(v.max(0.0)))
}

/// PSNR between two images with the given data range, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor, range: f64) -> Result<f64> {
    check_shapes(a, b)?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (range * range / mse).log10()).min(PSNR_CAP))
}

pub fn psnr_mu(xhat: &Tensor, x: &Tensor, p: &ToneMapParams) -> Result<f64> {
    check_shapes(xhat, x)?;
    psnr(&tone_mapped(xhat, p), &tone_mapped(x, p), 1.0)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let centre = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - centre;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-mode separable Gaussian filtering of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM with data range 1, averaged over channels.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_shapes(a, b)?;
    let (c, h, w) = a.dims3()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel();
    let mut total = 0.0;
    for ch in 0..c {
        let x = a.channel(ch);
        let y = b.channel(ch);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(x, h, w, &k);
        let my = filter_valid(y, h, w, &k);
        let sxx = filter_valid(&xx, h, w, &k);
        let syy = filter_valid(&yy, h, w, &k);
        let sxy = filter_valid(&xy, h, w, &k);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / c as f64)
}

pub fn ssim_mu(xhat: &Tensor, x: &Tensor, p: &ToneMapParams) -> Result<f64> {
    check_shapes(xhat, x)?;
    ssim(&tone_mapped(xhat, p), &tone_mapped(x, p))
}

fn differences(seq: &[Tensor], p: &ToneMapParams) -> Vec<Tensor> {
    let t: Vec<Tensor> = seq.iter().map(|f| tone_mapped(f, p)).collect();
    t.windows(2).map(|w| w[1].zip_map(&w[0], |a, b| a - b).unwrap()).collect()
}

/// `(t-PSNR, t-SSIM)` over tone-mapped frame differences.
pub fn temporal_metrics(xhat: &[Tensor], x: &[Tensor], p: &ToneMapParams) -> Result<(f64, f64)> {
    check_sequences(xhat, x, 2)?;
    let dh = differences(xhat, p);
    let dx = differences(x, p);
    let n = dh.len() as f64;
    let mut tp = 0.0;
    let mut ts = 0.0;
    for (a, b) in dh.iter().zip(&dx) {
        tp += psnr(a, b, 2.0)?;
        ts += ssim(&a.map(|v| (v + 1.0) / 2.0), &b.map(|v| (v + 1.0) / 2.0))?;
    }
    Ok((tp / n, ts / n))
}

/// Mean 8-bit luma of a tone-mapped frame.
pub fn frame_brightness(x: &Tensor, p: &ToneMapParams) -> Result<f64> {
    let (c, h, w) = x.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("brightness needs 3 channels, got {c}")));
    }
    let t = tone_mapped(x, p);
    let n = h * w;
    let mut sum = 0.0;
    for i in 0..n {
        sum += (0..3).map(|ch| LUMA[ch] * t.channel(ch)[i]).sum::<f64>();
    }
    Ok(255.0 * sum / n as f64)
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrightnessStats {
    /// Absent without a reference sequence.
    pub ab: Option<f64>,
    pub madb: f64,
    pub lsd: f64,
}

pub fn brightness_stats(xhat: &[Tensor], x: Option<&[Tensor]>, p: &ToneMapParams) -> Result<BrightnessStats> {
    if xhat.len() < 2 {
        return Err(Error::Argument(format!("brightness statistics need at least 2 frames, got {}", xhat.len())));
    }
    let bh = xhat.iter().map(|f| frame_brightness(f, p)).collect::<Result<Vec<_>>>()?;
    let ab = match x {
        Some(x) => {
            check_sequences(xhat, x, 2)?;
            let b = x.iter().map(|f| frame_brightness(f, p)).collect::<Result<Vec<_>>>()?;
            Some(bh.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum::<f64>() / bh.len() as f64)
        }
        None => None,
    };
    let madb = bh.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (bh.len() - 1) as f64;
    Ok(BrightnessStats {
        ab,
        madb,
        lsd: population_std(&bh),
    })
}

pub fn per_frame_psnr(xhat: &[Tensor], x: &[Tensor], p: &ToneMapParams) -> Result<Vec<f64>> {
    check_sequences(xhat, x, 1)?;
    xhat.iter().zip(x).map(|(a, b)| psnr_mu(a, b, p)).collect()
}

pub fn per_frame_std(xhat: &[Tensor], x: &[Tensor], p: &ToneMapParams) -> Result<f64> {
    check_sequences(xhat, x, 2)?;
    Ok(population_std(&per_frame_psnr(xhat, x, p)?))
}

/// One evaluated sequence. Temporal fields are absent for single-frame input.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceReport {
    pub sequence: String,
    pub frames: usize,
    pub psnr_t: f64,
    pub ssim_t: f64,
    pub t_psnr: Option<f64>,
    pub t_ssim: Option<f64>,
    pub std: Option<f64>,
    pub ab: f64,
    pub madb: Option<f64>,
    pub lsd: Option<f64>,
    pub runtime_ms: f64,
    pub psnr_trace: Vec<f64>,
}

/// Column order of the tab-separated report table.
pub const REPORT_COLUMNS: [&str; 12] = [
    "sequence",
    "frames",
    "psnr_t",
    "ssim_t",
    "t_psnr",
    "t_ssim",
    "std",
    "ab",
    "madb",
    "lsd",
    "runtime_ms",
    "psnr_trace",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == "-" {
        return Ok(None);
    }
    parse_f64(s).map(Some)
}

fn parse_f64(s: &str) -> Result<f64> {
    f64::from_str(s).map_err(|_| Error::Format(format!("bad number {s:?} in report")))
}

impl SequenceReport {
    /// Evaluate a predicted sequence against ground truth.
    pub fn evaluate(name: &str, xhat: &[Tensor], x: &[Tensor], p: &ToneMapParams, runtime_ms: f64) -> Result<Self> {
        check_sequences(xhat, x, 1)?;
        let trace = per_frame_psnr(xhat, x, p)?;
        let n = x.len() as f64;
        let ssim_t = xhat.iter().zip(x).map(|(a, b)| ssim_mu(a, b, p)).sum::<Result<f64>>()? / n;
        let (temporal, bright, std) = if x.len() >= 2 {
            (
                Some(temporal_metrics(xhat, x, p)?),
                Some(brightness_stats(xhat, Some(x), p)?),
                Some(population_std(&trace)),
            )
        } else {
            (None, None, None)
        };
        let ab = match bright {
            Some(b) => b.ab.unwrap_or(0.0),
            None => (frame_brightness(&xhat[0], p)? - frame_brightness(&x[0], p)?).abs(),
        };
        Ok(Self {
            sequence: name.to_string(),
            frames: x.len(),
            psnr_t: trace.iter().sum::<f64>() / n,
            ssim_t,
            t_psnr: temporal.map(|t| t.0),
            t_ssim: temporal.map(|t| t.1),
            std,
            ab,
            madb: bright.map(|b| b.madb),
            lsd: bright.map(|b| b.lsd),
            runtime_ms,
            psnr_trace: trace,
        })
    }

    /// Mean of every field over `reports`; missing values are skipped.
    pub fn aggregate(name: &str, reports: &[SequenceReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&SequenceReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let mean_opt = |f: &dyn Fn(&SequenceReport) -> Option<f64>| {
            let v: Vec<f64> = reports.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Some(Self {
            sequence: name.to_string(),
            frames: reports.iter().map(|r| r.frames).sum(),
            psnr_t: mean(&|r| r.psnr_t),
            ssim_t: mean(&|r| r.ssim_t),
            t_psnr: mean_opt(&|r| r.t_psnr),
            t_ssim: mean_opt(&|r| r.t_ssim),
            std: mean_opt(&|r| r.std),
            ab: mean(&|r| r.ab),
            madb: mean_opt(&|r| r.madb),
            lsd: mean_opt(&|r| r.lsd),
            runtime_ms: mean(&|r| r.runtime_ms),
            psnr_trace: Vec::new(),
        })
    }

    pub fn table_header() -> String {
        REPORT_COLUMNS.join("\t")
    }

    pub fn table_row(&self) -> String {
        let trace = if self.psnr_trace.is_empty() {
            "-".to_string()
        } else {
            self.psnr_trace.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
        };
        [
            self.sequence.clone(),
            self.frames.to_string(),
            format!("{:.6}", self.psnr_t),
            format!("{:.6}", self.ssim_t),
            fmt_opt(self.t_psnr),
            fmt_opt(self.t_ssim),
            fmt_opt(self.std),
            format!("{:.6}", self.ab),
            fmt_opt(self.madb),
            fmt_opt(self.lsd),
            format!("{:.3}", self.runtime_ms),
            trace,
        ]
        .join("\t")
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if f.len() != REPORT_COLUMNS.len() {
            return Err(Error::Format(format!(
                "report row has {} columns, expected {}",
                f.len(),
                REPORT_COLUMNS.len()
            )));
        }
        let psnr_trace = if f[11] == "-" {
            Vec::new()
        } else {
            f[11].split(',').map(parse_f64).collect::<Result<_>>()?
        };
        Ok(Self {
            sequence: f[0].to_string(),
            frames: f[1].parse().map_err(|_| Error::Format(format!("bad frame count {:?}", f[1])))?,
            psnr_t: parse_f64(f[2])?,
            ssim_t: parse_f64(f[3])?,
            t_psnr: parse_opt(f[4])?,
            t_ssim: parse_opt(f[5])?,
            std: parse_opt(f[6])?,
            ab: parse_f64(f[7])?,
            madb: parse_opt(f[8])?,
            lsd: parse_opt(f[9])?,
            runtime_ms: parse_f64(f[10])?,
            psnr_trace,
        })
    }

    /// Flat `key = value` record, one field per line.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in REPORT_COLUMNS.iter().zip(self.table_row().split('\t')) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Parse a report table, checking the header row.
pub fn parse_table(text: &str) -> Result<Vec<SequenceReport>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim_end() == SequenceReport::table_header() => {}
        Some(h) => return Err(Error::Format(format!("unexpected report header {h:?}"))),
        None => return Err(Error::Format("empty report".into())),
    }
    lines.map(SequenceReport::parse_row).collect()
}
