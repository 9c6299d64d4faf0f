//! Training loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use hdrfuse_core::autodiff::Graph;
use hdrfuse_core::datagen::{self, make_training_sample, synthetic_scene, CaptureMode};
use hdrfuse_core::imaging::LinearHdrFrame;
use hdrfuse_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;

/// Batch-mean losses of one optimizer step (`step` is 1-based).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub spatial: f64,
    pub temporal: f64,
    pub anchor: f64,
    pub total: f64,
}

pub const LOG_HEADER: &str = "step\tlr\tloss_spatial\tloss_temporal\tloss_anchor\tloss_total";

impl StepLog {
    pub fn row(&self) -> String {
        format!(
            "{}\t{:e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}",
            self.step, self.lr, self.spatial, self.temporal, self.anchor, self.total
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<StepLog>,
    pub checkpoint: Checkpoint,
}

/// Ground-truth frames of a window directory: its `gt/` subdirectory when
/// present, otherwise the directory itself.
pub fn window_frames(dir: &Path, cfg: &RunConfig) -> Result<Vec<LinearHdrFrame>> {
    let gt = dir.join("gt");
    let src = if gt.is_dir() { gt } else { dir.to_path_buf() };
    datagen::load_video_frames(&src, None, &cfg.render.response)
        .with_context(|| format!("loading frames from {}", src.display()))
}

/// Windows from the configured manifest, or procedural scenes without one.
pub fn load_training_data(cfg: &RunConfig) -> Result<Vec<Vec<LinearHdrFrame>>> {
    match &cfg.manifest {
        Some(m) => {
            ensure!(m.is_file(), "manifest {} does not exist", m.display());
            let dirs = datagen::read_manifest(m)?;
            ensure!(!dirs.is_empty(), "manifest {} lists no windows", m.display());
            dirs.iter().map(|d| window_frames(d, cfg)).collect()
        }
        None => synthetic_windows(cfg),
    }
}

pub fn synthetic_windows(cfg: &RunConfig) -> Result<Vec<Vec<LinearHdrFrame>>> {
    ensure!(cfg.synthetic_windows > 0, "data.synthetic.windows must be at least 1");
    (0..cfg.synthetic_windows)
        .map(|i| Ok(synthetic_scene(&cfg.scene, scene_seed(cfg.seed, i))?))
        .collect()
}

pub fn scene_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(11);
    rng.set_word_pos(2 * index as u128);
    rng.random()
}

fn validate(cfg: &RunConfig, data: &[Vec<LinearHdrFrame>]) -> Result<()> {
    if cfg.schedule.mode != CaptureMode::FixedReference {
        bail!("training needs schedule.mode = fixed_reference");
    }
    if cfg.schedule.anchors_per_window != 1 {
        bail!("training supports one anchor pair per window; denser schedules are for eval and infer");
    }
    ensure!(!data.is_empty(), "no training windows");
    for (i, w) in data.iter().enumerate() {
        ensure!(
            w.len() >= cfg.schedule.frames,
            "window {i} has {} frames, schedule.t is {}",
            w.len(),
            cfg.schedule.frames
        );
        let (h, wd) = (w[0].height(), w[0].width());
        let (ph, pw) = cfg.patch.map_or((h, wd), |p| (p, p));
        ensure!(ph <= h && pw <= wd, "window {i} ({h}x{wd}) is smaller than the {ph}x{pw} crop");
        ensure!(ph % 4 == 0 && pw % 4 == 0, "crop {ph}x{pw} must be divisible by 4");
    }
    Ok(())
}

/// Run `cfg.max_steps` optimizer steps. When `out` is given, checkpoints
/// and `train_log.tsv` are written there.
pub fn train(cfg: &RunConfig, data: &[Vec<LinearHdrFrame>], out: Option<&Path>) -> Result<TrainOutcome> {
    validate(cfg, data)?;
    let mut ck = Checkpoint::initial(cfg);
    let sample_cfg = cfg.sample_config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut log = Vec::with_capacity(cfg.max_steps);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    for step in 0..cfg.max_steps {
        let lr = cfg.learning_rate(step);
        let mut grads: Vec<Tensor> = ck.model.store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let mut sums = [0.0; 4];
        for _ in 0..cfg.batch_size {
            let w = rng.random_range(0..data.len());
            let sample = make_training_sample(&data[w], &cfg.schedule, &sample_cfg, rng.random())?;
            let mut g = Graph::with_params(&ck.model.store, true);
            let nodes = ck.model.loss_graph(&mut g, &sample, &cfg.weights)?;
            let back = g.backward(nodes.total);
            for (acc, gr) in grads.iter_mut().zip(back.param_grads(&ck.model.store)) {
                acc.add_assign(&gr);
            }
            for (s, v) in sums.iter_mut().zip([nodes.spatial, nodes.temporal, nodes.anchor, nodes.total]) {
                *s += g.value(v).item();
            }
        }
        let b = cfg.batch_size as f64;
        for gr in grads.iter_mut() {
            gr.data_mut().iter_mut().for_each(|v| *v /= b);
        }
        ck.optimizer.step(&mut ck.model.store, &grads, lr);
        ck.step += 1;
        ensure!(ck.model.store.is_finite(), "parameters became non-finite at step {}", step + 1);
        let entry = StepLog {
            step: step + 1,
            lr,
            spatial: sums[0] / b,
            temporal: sums[1] / b,
            anchor: sums[2] / b,
            total: sums[3] / b,
        };
        if cfg.log_every > 0 && (entry.step % cfg.log_every == 0 || entry.step == 1) {
            log::info!(
                "step {} lr {:.3e} L_s {:.5} L_t {:.5} L_Z {:.5} total {:.5}",
                entry.step,
                lr,
                entry.spatial,
                entry.temporal,
                entry.anchor,
                entry.total
            );
        }
        log.push(entry);
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && entry.step % cfg.checkpoint_every == 0 {
                ck.save(&checkpoint_path(dir, entry.step))?;
            }
        }
    }

    if let Some(dir) = out {
        ck.save(&dir.join("final.ckpt"))?;
        let mut text = format!("{LOG_HEADER}\n");
        for e in &log {
            let _ = writeln!(text, "{}", e.row());
        }
        std::fs::write(dir.join("train_log.tsv"), text).context("writing training log")?;
    }
    Ok(TrainOutcome { log, checkpoint: ck })
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step_{step:06}.ckpt"))
}
