//! Inference on a directory of captured LDR frames.
//!
//! Input naming: `mid_NNNN.png` for every backbone frame and
//! `low_NNNN.png` / `high_NNNN.png` for each anchor pair, where `NNNN` is the
//! frame index the anchors were captured at (`.lcat` files holding values
//! in `[0, 1]` are accepted too). Each segment of the checkpoint's capture
//! schedule uses the anchor pair inside it that is closest to its planned
//! anchor frame. Outputs are `hdr_NNNN.hdr` (or `.lcat`) with the linear
//! reconstruction and `preview_NNNN.png` with its 8-bit tone-mapped preview.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use hdrfuse_core::datagen::{list_frames, AnchorPair};
use hdrfuse_core::imaging::LdrFrame;
use hdrfuse_core::io::{read_frame, write_hdr, write_png8, write_raw};
use hdrfuse_core::metrics::tone_mapped;
use hdrfuse_core::Tensor;

use crate::checkpoint::Checkpoint;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    /// Radiance RGBE.
    #[default]
    Hdr,
    /// Raw little-endian `f32` (lossless).
    Lcat,
}

impl OutputFormat {
    fn extension(self) -> &'static str {
        match self {
            Self::Hdr => "hdr",
            Self::Lcat => "lcat",
        }
    }
}

#[derive(Debug, Default)]
struct InputSet {
    mid: BTreeMap<usize, PathBuf>,
    low: BTreeMap<usize, PathBuf>,
    high: BTreeMap<usize, PathBuf>,
}

fn scan_inputs(dir: &Path) -> Result<InputSet> {
    let mut set = InputSet::default();
    for path in list_frames(dir)? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some((role, index)) = stem.split_once('_') else {
            continue;
        };
        let Ok(index) = index.parse::<usize>() else {
            continue;
        };
        let slot = match role {
            "mid" => &mut set.mid,
            "low" => &mut set.low,
            "high" => &mut set.high,
            _ => continue,
        };
        if let Some(prev) = slot.insert(index, path.clone()) {
            bail!("{} and {} share frame index {index}", prev.display(), path.display());
        }
    }
    Ok(set)
}

fn load_ldr(path: &Path, exposure: f64) -> Result<LdrFrame> {
    let x = read_frame(path)?;
    LdrFrame::new(x, exposure).with_context(|| format!("{} is not a valid LDR frame", path.display()))
}

/// 8-bit preview values: `tau(max(x, 0))` in `[0, 1]`.
pub fn preview(x: &Tensor, ck: &Checkpoint) -> Tensor {
    tone_mapped(x, ck.model.tone()).map(|v| v.clamp(0.0, 1.0))
}

#[derive(Clone, Debug)]
pub struct InferOutcome {
    pub indices: Vec<usize>,
    pub frames: Vec<Tensor>,
    pub hdr_paths: Vec<PathBuf>,
    pub preview_paths: Vec<PathBuf>,
}

pub fn infer_directory(ck: &Checkpoint, frames: &Path, out: &Path, format: OutputFormat) -> Result<InferOutcome> {
    let inputs = scan_inputs(frames)?;
    ensure!(!inputs.mid.is_empty(), "no mid_NNNN frames in {}", frames.display());
    let exposures = ck.config.schedule.exposures;
    let indices: Vec<usize> = inputs.mid.keys().copied().collect();
    let backbone = inputs
        .mid
        .values()
        .map(|p| load_ldr(p, exposures.mid))
        .collect::<Result<Vec<_>>>()?;
    let pair_indices: Vec<usize> = inputs.low.keys().filter(|i| inputs.high.contains_key(i)).copied().collect();

    let mut outputs = Vec::with_capacity(backbone.len());
    for segs in ck.config.schedule.plan_windows(backbone.len()) {
        let mut anchors = Vec::with_capacity(segs.len());
        for seg in &segs {
            let range = indices[seg.start]..=indices[seg.start + seg.len - 1];
            let planned = indices[seg.anchor] as i64;
            let chosen = pair_indices
                .iter()
                .filter(|i| range.contains(i))
                .min_by_key(|&&i| (i as i64 - planned).abs())
                .with_context(|| format!("no low/high anchor pair for frames {range:?}"))?;
            anchors.push(AnchorPair {
                low: load_ldr(&inputs.low[chosen], exposures.low)?,
                high: load_ldr(&inputs.high[chosen], exposures.high)?,
            });
        }
        let first = segs[0].start;
        let len: usize = segs.iter().map(|s| s.len).sum();
        let r = ck.model.reconstruct(&backbone[first..first + len], &segs, &anchors)?;
        outputs.extend(r.output);
    }

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut hdr_paths = Vec::with_capacity(outputs.len());
    let mut preview_paths = Vec::with_capacity(outputs.len());
    for (&i, x) in indices.iter().zip(&outputs) {
        let hdr = out.join(format!("hdr_{i:04}.{}", format.extension()));
        match format {
            OutputFormat::Hdr => write_hdr(&hdr, x)?,
            OutputFormat::Lcat => write_raw(&hdr, x)?,
        }
        let png = out.join(format!("preview_{i:04}.png"));
        write_png8(&png, &preview(x, ck))?;
        hdr_paths.push(hdr);
        preview_paths.push(png);
    }
    Ok(InferOutcome {
        indices,
        frames: outputs,
        hdr_paths,
        preview_paths,
    })
}
