use hdrfuse_core::datagen::{
    capture_sequence, make_training_sample, rotate, rotated_position, synthetic_scene, CaptureMode, CaptureSchedule,
    RenderConfig, SampleConfig, SceneConfig,
};
use hdrfuse_core::imaging::{ExposureSet, NoiseLevels, ToneMapParams};
use hdrfuse_core::io::{read_raw, write_raw};
use hdrfuse_core::metrics::{psnr, SequenceReport};
use hdrfuse_core::model::{Model, ModelConfig};
use hdrfuse_core::stage1::Stage1Config;
use hdrfuse_core::stage2::Stage2Config;
use hdrfuse_core::Tensor;
use proptest::prelude::*;

fn tiny_model() -> Model {
    let cfg = ModelConfig {
        stage1: Stage1Config {
            width: 4,
            ..Default::default()
        },
        stage2: Stage2Config {
            width: 4,
            blocks: 1,
            ..Default::default()
        },
    };
    Model::new(cfg, 1)
}

fn noiseless() -> RenderConfig {
    RenderConfig {
        noise: NoiseLevels::none(),
        ..Default::default()
    }
}

#[test]
fn capture_reconstruct_and_score_a_sequence() {
    let scene = SceneConfig {
        height: 16,
        width: 16,
        frames: 7,
        ..Default::default()
    };
    let gt = synthetic_scene(&scene, 5).unwrap();
    let sched = CaptureSchedule::default();
    let cap = capture_sequence(&gt, &sched, &RenderConfig::default(), 2).unwrap();
    assert_eq!(cap.windows.len(), 2);
    assert_eq!(cap.windows[1][0].len, 2);

    let model = tiny_model();
    let mut out = Vec::new();
    for (segs, anchors) in cap.windows.iter().zip(&cap.anchors) {
        let first = segs[0].start;
        let len: usize = segs.iter().map(|s| s.len).sum();
        let r = model.reconstruct(&cap.backbone[first..first + len], segs, anchors).unwrap();
        out.extend(r.output);
    }
    assert_eq!(out.len(), 7);
    let truth: Vec<Tensor> = gt.iter().map(|f| f.pixels().clone()).collect();
    let report = SequenceReport::evaluate("seq", &out, &truth, model.tone(), 1.0).unwrap();
    assert_eq!(report.psnr_trace.len(), 7);
    assert!(report.psnr_t.is_finite() && report.t_psnr.is_some());
    let parsed = SequenceReport::parse_row(&report.table_row()).unwrap();
    assert_eq!(parsed.frames, 7);
}

#[test]
fn capture_is_reproducible_per_seed() {
    let gt = synthetic_scene(&SceneConfig::default(), 0).unwrap();
    let sched = CaptureSchedule::default();
    let a = capture_sequence(&gt, &sched, &RenderConfig::default(), 9).unwrap();
    let b = capture_sequence(&gt, &sched, &RenderConfig::default(), 9).unwrap();
    let c = capture_sequence(&gt, &sched, &RenderConfig::default(), 10).unwrap();
    assert_eq!(a.backbone, b.backbone);
    assert_ne!(a.backbone, c.backbone);
}

#[test]
fn tone_mapped_psnr_of_identical_frames_is_capped() {
    let x = Tensor::full(&[3, 4, 4], 0.5);
    assert_eq!(psnr(&x, &x, 1.0).unwrap(), hdrfuse_core::metrics::PSNR_CAP);
}

#[test]
fn raw_frames_survive_a_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.lcat");
    let x = Tensor::from_vec(&[3, 2, 2], (0..12).map(|i| i as f64 * 0.25 - 1.0).collect()).unwrap();
    write_raw(&path, &x).unwrap();
    assert_eq!(read_raw(&path).unwrap(), x);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn windows_tile_the_sequence(total in 1usize..40, t in 1usize..9, density in 1usize..4, ts in 1usize..9) {
        let density = density.min(t);
        let ts = ts.min(t);
        let sched = CaptureSchedule::new(CaptureMode::FixedReference, t, density, Some(ts), ExposureSet::default()).unwrap();
        let mut next = 0;
        for window in sched.plan_windows(total) {
            prop_assert!(!window.is_empty());
            for seg in window {
                prop_assert_eq!(seg.start, next);
                prop_assert!(seg.len >= 1);
                prop_assert!(seg.anchor >= seg.start && seg.anchor < seg.start + seg.len);
                next += seg.len;
            }
        }
        prop_assert_eq!(next, total);
    }

    #[test]
    fn rotation_moves_pixels_where_predicted(h in 1usize..6, w in 1usize..6, turns in 0usize..4) {
        let x = Tensor::from_vec(&[1, h, w], (0..h * w).map(|i| i as f64).collect()).unwrap();
        let r = rotate(&x, turns).unwrap();
        let (rh, rw) = if turns % 2 == 0 { (h, w) } else { (w, h) };
        prop_assert_eq!(r.shape(), &[1, rh, rw]);
        for y in 0..h {
            for xx in 0..w {
                let (ry, rx) = rotated_position(y, xx, h, w, turns);
                prop_assert_eq!(r.data()[ry * rw + rx], x.data()[y * w + xx]);
            }
        }
        let mut back = r.clone();
        for _ in 0..(4 - turns) % 4 {
            back = rotate(&back, 1).unwrap();
        }
        prop_assert_eq!(back, x);
    }

    #[test]
    fn tone_curve_is_monotone_and_invertible(a in 0.0f64..100.0, b in 0.0f64..100.0) {
        let p = ToneMapParams::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(p.curve(lo) <= p.curve(hi));
        prop_assert!((p.inverse(p.curve(a)) - a).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn training_samples_keep_geometry_consistent(seed in 0u64..1000, patch in prop::sample::select(vec![8usize, 12, 16])) {
        let scene = SceneConfig { height: 16, width: 20, frames: 6, ..Default::default() };
        let gt = synthetic_scene(&scene, 3).unwrap();
        let cfg = SampleConfig { render: noiseless(), patch: Some(patch), rotate: true, pair_b_timestamp: 1 };
        let s = make_training_sample(&gt, &CaptureSchedule::default(), &cfg, seed).unwrap();
        prop_assert_eq!(s.backbone.len(), 5);
        prop_assert!(s.start <= 1);
        for f in s.ground_truth.iter() {
            prop_assert_eq!(f.pixels().shape(), &[3, patch, patch]);
        }
        prop_assert_eq!(s.pair_a.low.pixels().shape(), s.backbone[0].pixels().shape());
    }
}
