//! Synthetic dataset generation.
//!
//! Layout under the output directory:
//! - `manifest.txt` listing one window directory per line
//! - `window_NNN/gt/frame_NNNN.lcat`: linear ground truth
//! - `window_NNN/inputs/`: 8-bit captures named as `infer` expects

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hdrfuse_core::datagen::capture_sequence;
use hdrfuse_core::io::{write_png8, write_raw};

use crate::config::RunConfig;
use crate::train::{scene_seed, synthetic_windows};

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let windows = synthetic_windows(cfg)?;
    let mut manifest = String::from("# generated synthetic windows\n");
    for (w, frames) in windows.iter().enumerate() {
        let name = format!("window_{w:03}");
        let gt_dir = out.join(&name).join("gt");
        let in_dir = out.join(&name).join("inputs");
        for d in [&gt_dir, &in_dir] {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        for (t, f) in frames.iter().enumerate() {
            write_raw(&gt_dir.join(format!("frame_{t:04}.lcat")), f.pixels())?;
        }
        let cap = capture_sequence(frames, &cfg.schedule, &cfg.render, scene_seed(cfg.eval_seed, w))?;
        for (t, y) in cap.backbone.iter().enumerate() {
            write_png8(&in_dir.join(format!("mid_{t:04}.png")), y.pixels())?;
        }
        for (segs, pairs) in cap.windows.iter().zip(&cap.anchors) {
            for (s, p) in segs.iter().zip(pairs) {
                write_png8(&in_dir.join(format!("low_{:04}.png", s.anchor)), p.low.pixels())?;
                write_png8(&in_dir.join(format!("high_{:04}.png", s.anchor)), p.high.pixels())?;
            }
        }
        let _ = writeln!(manifest, "{name}");
    }
    let path = out.join("manifest.txt");
    std::fs::write(&path, manifest).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
