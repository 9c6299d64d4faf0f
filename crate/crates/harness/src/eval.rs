//! Evaluation over a manifest of ground-truth windows.
//!
//! Each listed directory holds one sequence of linear frames (in a `gt/`
//! subdirectory when present). Inputs are rendered from the ground truth
//! with the checkpoint's capture schedule and `eval.seed`, so runs are
//! reproducible. Results go to `report.tsv` (one row per sequence plus a
//! final `mean` row, columns as in [`SequenceReport::table_header`]) and
//! `summary.txt` (the `mean` row as `key = value` lines).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use hdrfuse_core::datagen::{capture_sequence, read_manifest};
use hdrfuse_core::imaging::LinearHdrFrame;
use hdrfuse_core::metrics::SequenceReport;
use hdrfuse_core::Tensor;

use crate::checkpoint::Checkpoint;
use crate::train::window_frames;

pub const AGGREGATE_NAME: &str = "mean";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Score the stage-1 output instead of the final reconstruction.
    pub intermediate: bool,
}

/// Run the model over one ground-truth sequence and score it.
pub fn evaluate_sequence(ck: &Checkpoint, name: &str, gt: &[LinearHdrFrame], opts: EvalOptions) -> Result<SequenceReport> {
    ensure!(!gt.is_empty(), "sequence {name} has no frames");
    let cfg = &ck.config;
    let cap = capture_sequence(gt, &cfg.schedule, &cfg.render, cfg.eval_seed)?;
    let start = Instant::now();
    let mut pred: Vec<Tensor> = Vec::with_capacity(gt.len());
    for (segs, anchors) in cap.windows.iter().zip(&cap.anchors) {
        let first = segs[0].start;
        let len: usize = segs.iter().map(|s| s.len).sum();
        let r = ck.model.reconstruct(&cap.backbone[first..first + len], segs, anchors)?;
        pred.extend(if opts.intermediate { r.intermediate } else { r.output });
    }
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let truth: Vec<Tensor> = gt.iter().map(|f| f.pixels().clone()).collect();
    Ok(SequenceReport::evaluate(name, &pred, &truth, ck.model.tone(), runtime_ms)?)
}

pub fn sequence_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Render a report table with an aggregate row appended.
pub fn report_table(rows: &[SequenceReport]) -> String {
    let mut out = format!("{}\n", SequenceReport::table_header());
    for r in rows {
        let _ = writeln!(out, "{}", r.table_row());
    }
    if let Some(mean) = SequenceReport::aggregate(AGGREGATE_NAME, rows) {
        let _ = writeln!(out, "{}", mean.table_row());
    }
    out
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub rows: Vec<SequenceReport>,
    /// Sequences that could not be evaluated, with the reason.
    pub failures: Vec<(String, String)>,
    pub report: PathBuf,
}

/// Evaluate every window of `manifest` and write the report into `out`.
/// A failing sequence is logged and skipped rather than aborting the run.
pub fn evaluate_manifest(ck: &Checkpoint, manifest: &Path, out: &Path, opts: EvalOptions) -> Result<EvalOutcome> {
    let dirs = read_manifest(manifest)?;
    ensure!(!dirs.is_empty(), "manifest {} lists no sequences", manifest.display());
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for dir in &dirs {
        let name = sequence_name(dir);
        let result = window_frames(dir, &ck.config).and_then(|gt| evaluate_sequence(ck, &name, &gt, opts));
        match result {
            Ok(r) => {
                log::info!("{name}: PSNR_T {:.3} dB, SSIM_T {:.4}", r.psnr_t, r.ssim_t);
                rows.push(r);
            }
            Err(e) => {
                log::error!("{name}: {e:#}");
                failures.push((name, format!("{e:#}")));
            }
        }
    }
    let report = out.join("report.tsv");
    std::fs::write(&report, report_table(&rows)).with_context(|| format!("writing {}", report.display()))?;
    if let Some(mean) = SequenceReport::aggregate(AGGREGATE_NAME, &rows) {
        std::fs::write(out.join("summary.txt"), mean.to_key_values()).context("writing summary")?;
    }
    Ok(EvalOutcome { rows, failures, report })
}
