//! The full two-stage network and its training objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::datagen::{AnchorPair, Segment, TrainingSample};
use crate::error::{Error, Result};
use crate::imaging::{LdrFrame, ToneMapParams};
use crate::losses::{self, LossWeights};
use crate::nn::ParamStore;
use crate::stage1::{Stage1, Stage1Config};
use crate::stage2::{Stage2, Stage2Config};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub stage1: Stage1,
    pub stage2: Stage2,
}

/// Stage-1 intermediate `Z` and final `X` for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub intermediate: Vec<Tensor>,
    pub output: Vec<Tensor>,
}

/// Scalar loss nodes of one training objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub spatial: Var,
    pub temporal: Var,
    pub anchor: Var,
    pub total: Var,
}

impl Model {
    /// Parameters are drawn from a stream seeded by `seed`, stage 1 first.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stage1 = Stage1::new(&mut store, &mut rng, config.stage1.clone());
        let stage2 = Stage2::new(&mut store, &mut rng, config.stage2.clone());
        Self {
            config,
            store,
            stage1,
            stage2,
        }
    }

    pub fn tone(&self) -> &ToneMapParams {
        &self.config.stage1.tone
    }

    /// Stage 1 over each anchor segment of a window, concatenated in order.
    /// `anchors[i]` belongs to `segments[i]`; segment indices are relative
    /// to the window start.
    pub fn stage1_window(
        &self,
        g: &mut Graph,
        backbone: &[LdrFrame],
        segments: &[Segment],
        anchors: &[AnchorPair],
    ) -> Result<Vec<Var>> {
        if segments.len() != anchors.len() {
            return Err(Error::Argument(format!(
                "{} segments but {} anchor pairs",
                segments.len(),
                anchors.len()
            )));
        }
        let base = segments.first().map_or(0, |s| s.start);
        let mut z = Vec::with_capacity(backbone.len());
        let mut next = base;
        for (seg, pair) in segments.iter().zip(anchors) {
            if seg.start != next || seg.start - base + seg.len > backbone.len() {
                return Err(Error::Argument(format!("segment {seg:?} does not tile the window")));
            }
            let frames = &backbone[seg.start - base..seg.start - base + seg.len];
            let (b, l, h) = self.stage1.inputs(g, frames, &pair.low, &pair.high);
            z.extend(self.stage1.forward(g, &b, l, h)?);
            next = seg.start + seg.len;
        }
        if z.len() != backbone.len() {
            return Err(Error::Argument(format!(
                "segments cover {} of {} frames",
                z.len(),
                backbone.len()
            )));
        }
        Ok(z)
    }

    /// Full inference on one window.
    pub fn reconstruct(&self, backbone: &[LdrFrame], segments: &[Segment], anchors: &[AnchorPair]) -> Result<Reconstruction> {
        let mut g = Graph::with_params(&self.store, false);
        let z = self.stage1_window(&mut g, backbone, segments, anchors)?;
        let x = self.stage2.forward(&mut g, &z)?;
        Ok(Reconstruction {
            intermediate: z.iter().map(|&v| g.value(v).clone()).collect(),
            output: x.iter().map(|&v| g.value(v).clone()).collect(),
        })
    }

    /// Build the weighted training objective for one sample: stage 1 runs on
    /// both anchor pairs, stage 2 only on the pair-(a) result.
    pub fn loss_graph(&self, g: &mut Graph, sample: &TrainingSample, w: &LossWeights) -> Result<LossNodes> {
        let (b, la, ha) = self.stage1.inputs(g, &sample.backbone, &sample.pair_a.low, &sample.pair_a.high);
        let za = self.stage1.forward(g, &b, la, ha)?;
        let lb = g.constant(self.stage1.input_tensor(&sample.pair_b.low));
        let hb = g.constant(self.stage1.input_tensor(&sample.pair_b.high));
        let zb = self.stage1.forward(g, &b, lb, hb)?;
        let x = self.stage2.forward(g, &za)?;
        let gt: Vec<Var> = sample
            .ground_truth
            .iter()
            .map(|f| g.constant(f.pixels().clone()))
            .collect();
        let tone = self.tone();
        let spatial = losses::spatial(g, &x, &gt, tone)?;
        let temporal = if gt.len() >= 2 {
            losses::temporal(g, &x, &gt, tone)?
        } else {
            g.constant(Tensor::scalar(0.0))
        };
        let anchor = losses::anchor(g, &za, &zb)?;
        let total = losses::total(g, spatial, temporal, anchor, w)?;
        Ok(LossNodes {
            spatial,
            temporal,
            anchor,
            total,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_training_sample, synthetic_scene, CaptureSchedule, RenderConfig, SampleConfig, SceneConfig};
    use crate::imaging::NoiseLevels;

    fn tiny() -> ModelConfig {
        ModelConfig {
            stage1: Stage1Config {
                width: 4,
                ..Default::default()
            },
            stage2: Stage2Config {
                width: 4,
                blocks: 1,
                ..Default::default()
            },
        }
    }

    fn sample(motion: f64) -> TrainingSample {
        let scene = SceneConfig {
            height: 16,
            width: 16,
            motion,
            ..Default::default()
        };
        let gt = synthetic_scene(&scene, 0).unwrap();
        let cfg = SampleConfig {
            render: RenderConfig {
                noise: NoiseLevels::none(),
                ..Default::default()
            },
            patch: Some(16),
            ..Default::default()
        };
        make_training_sample(&gt, &CaptureSchedule::default(), &cfg, 1).unwrap()
    }

    #[test]
    fn construction_is_seeded() {
        let a = Model::new(tiny(), 3);
        let b = Model::new(tiny(), 3);
        let c = Model::new(tiny(), 4);
        assert_eq!(a.store.iter().collect::<Vec<_>>(), b.store.iter().collect::<Vec<_>>());
        assert_ne!(a.store.iter().collect::<Vec<_>>(), c.store.iter().collect::<Vec<_>>());
    }

    #[test]
    fn fresh_model_output_equals_intermediate() {
        let m = Model::new(tiny(), 0);
        let s = sample(1.0);
        let seg = CaptureSchedule::default().plan_windows(5).remove(0);
        let r = m.reconstruct(&s.backbone, &seg, &[s.pair_a.clone()]).unwrap();
        assert_eq!(r.output, r.intermediate);
        assert!(m.reconstruct(&s.backbone, &seg, &[]).is_err());
    }

    #[test]
    fn anchor_loss_zero_on_static_scene() {
        let m = Model::new(tiny(), 0);
        let mut g = Graph::with_params(&m.store, false);
        let nodes = m.loss_graph(&mut g, &sample(0.0), &LossWeights::default()).unwrap();
        assert_eq!(g.value(nodes.anchor).item(), 0.0);
        let mut g = Graph::with_params(&m.store, false);
        let nodes = m.loss_graph(&mut g, &sample(2.0), &LossWeights::default()).unwrap();
        assert!(g.value(nodes.anchor).item() > 0.0);
        assert!(g.value(nodes.total).item() >= g.value(nodes.spatial).item());
    }

    #[test]
    fn dense_segments_tile_window() {
        let m = Model::new(tiny(), 0);
        let s = sample(1.0);
        let sched = CaptureSchedule::new(
            crate::datagen::CaptureMode::FixedReference,
            5,
            2,
            None,
            Default::default(),
        )
        .unwrap();
        let seg = sched.plan_windows(5).remove(0);
        let r = m
            .reconstruct(&s.backbone, &seg, &[s.pair_a.clone(), s.pair_b.clone()])
            .unwrap();
        assert_eq!(r.output.len(), 5);
    }
}
