//! Collaborative feature attention: exposure fusion in the Haar LL band.
//!
//! Every input frame is projected to `C` feature channels and split into
//! subbands. A bidirectional recurrence along the backbone (the temporal
//! prior aggregator) turns each anchor into per-frame reliability maps in
//! `(0, 1)`, which gate the anchor features into the backbone LL band
//! (content-faithful fusion). The fused LL band is recombined with the
//! backbone's own high-frequency bands and decoded to linear radiance.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::imaging::{CameraResponse, LdrFrame, ToneMapParams};
use crate::nn::{Conv, Init, ParamId, ParamStore, LEAKY_SLOPE};
use crate::tensor::Tensor;

/// How the anchor gates are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateMode {
    /// Reliability maps from the temporal prior aggregator.
    Tpa,
    /// Gates forced to zero: the backbone passes through unchanged.
    Closed,
    /// Gates forced to one: anchors are injected without reliability estimation.
    Open,
}

impl std::str::FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tpa" => Ok(Self::Tpa),
            "closed" => Ok(Self::Closed),
            "open" => Ok(Self::Open),
            other => Err(Error::Argument(format!("unknown gate mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for GateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Tpa => "tpa",
            Self::Closed => "closed",
            Self::Open => "open",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Config {
    /// Feature width `C`.
    pub width: usize,
    /// Append the linearized frame to the LDR input (6 input channels).
    pub linearized_input: bool,
    pub gate: GateMode,
    /// Largest radiance the decoder head can emit.
    pub max_radiance: f64,
    pub tone: ToneMapParams,
    pub response: CameraResponse,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            width: 32,
            linearized_input: false,
            gate: GateMode::Tpa,
            max_radiance: 16.0,
            tone: ToneMapParams::default(),
            response: CameraResponse::default(),
        }
    }
}

/// LL band plus the stacked `[lh, hl, hh]` bands of one feature map.
#[derive(Clone, Copy, Debug)]
pub struct Subbands {
    pub ll: Var,
    pub high: Var,
}

/// Two same-padded 3x3 convolutions, each followed by the leaky rectifier.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub first: Conv,
    pub second: Conv,
}

impl ConvBlock {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            first: Conv::k3(store, rng, &format!("{name}.0"), cin, cout),
            second: Conv::k3(store, rng, &format!("{name}.1"), cout, cout),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.first.forward(g, x)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let h = self.second.forward(g, h)?;
        Ok(g.leaky_relu(h, LEAKY_SLOPE))
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.first.params(), self.second.params()].concat()
    }
}

#[derive(Clone, Debug)]
pub struct Stage1 {
    pub config: Stage1Config,
    pub project_in: Conv,
    pub project_out: Conv,
    pub forward_cell: ConvBlock,
    pub backward_cell: ConvBlock,
    pub reliability: Conv,
    pub phi_low: Conv,
    pub phi_high: Conv,
    pub fuse_in: Conv,
    pub fuse_out: Conv,
    pub head_hidden: Conv,
    pub head_out: Conv,
}

impl Stage1 {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, config: Stage1Config) -> Self {
        let c = config.width;
        let cin = if config.linearized_input { 6 } else { 3 };
        let bias_free = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin, cout| {
            Conv::new(store, rng, name, cin, cout, 3, 1, false, Init::Kaiming)
        };
        Self {
            project_in: Conv::k3(store, rng, "stage1.project.0", cin, c),
            project_out: Conv::k3(store, rng, "stage1.project.1", c, c),
            forward_cell: ConvBlock::new(store, rng, "stage1.tpa.forward", 3 * c, c),
            backward_cell: ConvBlock::new(store, rng, "stage1.tpa.backward", 3 * c, c),
            reliability: Conv::k3(store, rng, "stage1.tpa.reliability", 2 * c, c),
            phi_low: bias_free(store, rng, "stage1.cff.phi_low", c, c),
            phi_high: bias_free(store, rng, "stage1.cff.phi_high", c, c),
            fuse_in: bias_free(store, rng, "stage1.cff.fuse.0", 2 * c, c),
            fuse_out: bias_free(store, rng, "stage1.cff.fuse.1", c, c),
            head_hidden: Conv::k3(store, rng, "stage1.head.0", c, c),
            head_out: Conv::k3(store, rng, "stage1.head.1", c, 3),
            config,
        }
    }

    /// Network input for one LDR frame: the encoded pixels, optionally
    /// followed by their linearization.
    pub fn input_tensor(&self, y: &LdrFrame) -> Tensor {
        if !self.config.linearized_input {
            return y.pixels().clone();
        }
        let (_, h, w) = y.pixels().dims3().expect("LDR frames are rank 3");
        let r = self.config.response;
        let e = y.exposure();
        let mut data = y.pixels().data().to_vec();
        data.extend(y.pixels().data().iter().map(|&v| r.decode(v) / e));
        Tensor::from_vec(&[6, h, w], data).expect("six stacked channels")
    }

    /// Shallow projection to `C` channels followed by the Haar DWT.
    pub fn extract_features(&self, g: &mut Graph, y: Var) -> Result<Subbands> {
        let (_, h, w) = g.value(y).dims3()?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(format!("frames need even height and width, got {h}x{w}"));
        }
        let c = self.config.width;
        let f = self.project_in.forward(g, y)?;
        let f = g.leaky_relu(f, LEAKY_SLOPE);
        let f = self.project_out.forward(g, f)?;
        let bands = g.dwt(f)?;
        Ok(Subbands {
            ll: g.slice_channels(bands, 0, c)?,
            high: g.slice_channels(bands, c, 3 * c)?,
        })
    }

    /// Forward and backward recurrent states of the aggregator, both indexed by
    /// frame. Boundary states are zero.
    pub fn tpa_states(&self, g: &mut Graph, anchor: Var, backbone: &[Var]) -> Result<(Vec<Var>, Vec<Var>)> {
        if backbone.is_empty() {
            return Err(Error::Argument("reliability estimation needs at least one frame".into()));
        }
        let shape = g.value(anchor).shape().to_vec();
        for &b in backbone {
            if g.value(b).shape() != shape.as_slice() {
                return shape_err(format!("backbone feature {:?} vs anchor {:?}", g.value(b).shape(), shape));
            }
        }
        let zero = g.constant(Tensor::zeros(&shape));
        let mut fwd = Vec::with_capacity(backbone.len());
        let mut state = zero;
        for &b in backbone {
            let x = g.concat(&[state, anchor, b])?;
            state = self.forward_cell.forward(g, x)?;
            fwd.push(state);
        }
        let mut bwd = vec![zero; backbone.len()];
        let mut state = zero;
        for (t, &b) in backbone.iter().enumerate().rev() {
            let x = g.concat(&[state, anchor, b])?;
            state = self.backward_cell.forward(g, x)?;
            bwd[t] = state;
        }
        Ok((fwd, bwd))
    }

    /// Per-frame reliability maps of one anchor against the backbone LL features.
    pub fn tpa_reliability(&self, g: &mut Graph, anchor: Var, backbone: &[Var]) -> Result<Vec<Var>> {
        let (fwd, bwd) = self.tpa_states(g, anchor, backbone)?;
        fwd.iter()
            .zip(&bwd)
            .map(|(&f, &b)| {
                let x = g.concat(&[f, b])?;
                let logits = self.reliability.forward(g, x)?;
                Ok(g.sigmoid(logits))
            })
            .collect()
    }

    /// `backbone + Fuse(a1 * phi_low(low), a3 * phi_high(high))`. Every layer
    /// of the fusion path is bias-free, so closed gates add exactly zero.
    pub fn cff_fuse(&self, g: &mut Graph, backbone: Var, low: Var, high: Var, a1: Var, a3: Var) -> Result<Var> {
        let pl = self.phi_low.forward(g, low)?;
        let ph = self.phi_high.forward(g, high)?;
        let gated_low = g.mul(a1, pl)?;
        let gated_high = g.mul(a3, ph)?;
        let x = g.concat(&[gated_low, gated_high])?;
        let h = self.fuse_in.forward(g, x)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let delta = self.fuse_out.forward(g, h)?;
        g.add(backbone, delta)
    }

    fn gates(&self, g: &mut Graph, anchor: Var, backbone: &[Var]) -> Result<Vec<Var>> {
        let shape = g.value(anchor).shape().to_vec();
        match self.config.gate {
            GateMode::Tpa => self.tpa_reliability(g, anchor, backbone),
            GateMode::Closed => Ok(vec![g.constant(Tensor::zeros(&shape)); backbone.len()]),
            GateMode::Open => Ok(vec![g.constant(Tensor::full(&shape, 1.0)); backbone.len()]),
        }
    }

    /// Map a `C`-channel full-resolution feature to linear radiance. The head
    /// predicts a tone-mapped code in `(0, tau(max_radiance))`, which is
    /// inverted through the mu-law curve, so outputs are non-negative by
    /// construction and can exceed the mid exposure's clip point.
    fn decode(&self, g: &mut Graph, f: Var) -> Result<Var> {
        let h = self.head_hidden.forward(g, f)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let code = self.head_out.forward(g, h)?;
        let code = g.sigmoid(code);
        let kappa = self.config.tone.kappa();
        let top = self.config.tone.curve(self.config.max_radiance);
        let scaled = g.scale(code, top * kappa.ln_1p());
        let grown = g.exp(scaled);
        let shifted = g.offset(grown, -1.0);
        Ok(g.scale(shifted, 1.0 / kappa))
    }

    /// Reconstruct the intermediate sequence from input tensors already on the graph.
    pub fn forward(&self, g: &mut Graph, backbone: &[Var], low: Var, high: Var) -> Result<Vec<Var>> {
        if backbone.is_empty() {
            return Err(Error::Argument("stage 1 needs at least one backbone frame".into()));
        }
        let shape = g.value(backbone[0]).shape().to_vec();
        for &v in backbone.iter().chain([&low, &high]) {
            if g.value(v).shape() != shape.as_slice() {
                return shape_err(format!("input frame {:?} vs {:?}", g.value(v).shape(), shape));
            }
        }
        let low_f = self.extract_features(g, low)?;
        let high_f = self.extract_features(g, high)?;
        let frames = backbone
            .iter()
            .map(|&y| self.extract_features(g, y))
            .collect::<Result<Vec<_>>>()?;
        let lls: Vec<Var> = frames.iter().map(|f| f.ll).collect();
        let a1 = self.gates(g, low_f.ll, &lls)?;
        let a3 = self.gates(g, high_f.ll, &lls)?;
        let mut out = Vec::with_capacity(frames.len());
        for (t, f) in frames.iter().enumerate() {
            let fused = self.cff_fuse(g, f.ll, low_f.ll, high_f.ll, a1[t], a3[t])?;
            let bands = g.concat(&[fused, f.high])?;
            let full = g.idwt(bands)?;
            out.push(self.decode(g, full)?);
        }
        Ok(out)
    }

    /// Put LDR frames on the graph as constants, in network input form.
    pub fn inputs(
        &self,
        g: &mut Graph,
        backbone: &[LdrFrame],
        low: &LdrFrame,
        high: &LdrFrame,
    ) -> (Vec<Var>, Var, Var) {
        let b = backbone.iter().map(|y| g.constant(self.input_tensor(y))).collect();
        let l = g.constant(self.input_tensor(low));
        let h = g.constant(self.input_tensor(high));
        (b, l, h)
    }

    /// Inference without gradient bookkeeping.
    pub fn run(&self, store: &ParamStore, backbone: &[LdrFrame], low: &LdrFrame, high: &LdrFrame) -> Result<Vec<Tensor>> {
        let mut g = Graph::with_params(store, false);
        let (b, l, h) = self.inputs(&mut g, backbone, low, high);
        let z = self.forward(&mut g, &b, l, h)?;
        Ok(z.iter().map(|&v| g.value(v).clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_input_gradient_with_params, check_param_gradient, GradCheck};
    use rand::{Rng, SeedableRng};

    fn small(width: usize, seed: u64) -> (ParamStore, Stage1) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = Stage1Config {
            width,
            ..Default::default()
        };
        let s = Stage1::new(&mut store, &mut rng, cfg);
        (store, s)
    }

    fn randomize_biases(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).ends_with(".bias") {
                store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
            }
        }
    }

    fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    fn ldr(t: Tensor, e: f64) -> LdrFrame {
        LdrFrame::new(t, e).unwrap()
    }

    #[test]
    fn zero_image_gives_zero_subbands() {
        let (store, s) = small(4, 1);
        let mut g = Graph::with_params(&store, false);
        let y = g.constant(Tensor::zeros(&[3, 6, 8]));
        let f = s.extract_features(&mut g, y).unwrap();
        assert_eq!(g.value(f.ll).shape(), &[4, 3, 4]);
        assert_eq!(g.value(f.high).shape(), &[12, 3, 4]);
        assert!(g.value(f.ll).data().iter().all(|&v| v == 0.0));
        assert!(g.value(f.high).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extraction_rejects_odd_frames() {
        let (store, s) = small(4, 1);
        let mut g = Graph::with_params(&store, false);
        let y = g.constant(Tensor::zeros(&[3, 5, 8]));
        assert!(s.extract_features(&mut g, y).is_err());
    }

    #[test]
    fn reliability_in_open_interval_even_for_extreme_inputs() {
        let (mut store, s) = small(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        randomize_biases(&mut store, &mut rng);
        let mut g = Graph::with_params(&store, false);
        let anchor = g.constant(rand_tensor(&[4, 2, 2], -50.0, 50.0, &mut rng));
        let bb: Vec<Var> = (0..3).map(|_| g.constant(rand_tensor(&[4, 2, 2], -50.0, 50.0, &mut rng))).collect();
        for a in s.tpa_reliability(&mut g, anchor, &bb).unwrap() {
            assert!(g.value(a).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        // T = 1 boundary case.
        let single = s.tpa_reliability(&mut g, anchor, &bb[..1]).unwrap();
        assert_eq!(single.len(), 1);
        assert!(s.tpa_reliability(&mut g, anchor, &[]).is_err());
    }

    #[test]
    fn reversal_symmetry_with_tied_cells() {
        let (mut store, s) = small(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (f, b) in s.forward_cell.params().into_iter().zip(s.backward_cell.params()) {
            *store.value_mut(b) = store.value(f).clone();
        }
        // Make the reliability head symmetric in its forward/backward halves.
        let w = store.value_mut(s.reliability.weight);
        let (cout, cin) = (w.shape()[0], w.shape()[1]);
        let half = cin / 2;
        for o in 0..cout {
            for i in 0..half {
                for k in 0..9 {
                    let src = w.data()[(o * cin + i) * 9 + k];
                    w.data_mut()[(o * cin + half + i) * 9 + k] = src;
                }
            }
        }
        let mut g = Graph::with_params(&store, false);
        let anchor = g.constant(rand_tensor(&[3, 2, 2], -1.0, 1.0, &mut rng));
        let bb: Vec<Var> = (0..4).map(|_| g.constant(rand_tensor(&[3, 2, 2], -1.0, 1.0, &mut rng))).collect();
        let rev: Vec<Var> = bb.iter().rev().copied().collect();
        let (f1, b1) = s.tpa_states(&mut g, anchor, &bb).unwrap();
        let (f2, b2) = s.tpa_states(&mut g, anchor, &rev).unwrap();
        let a1 = s.tpa_reliability(&mut g, anchor, &bb).unwrap();
        let a2 = s.tpa_reliability(&mut g, anchor, &rev).unwrap();
        let n = bb.len();
        for t in 0..n {
            assert_eq!(g.value(f2[t]), g.value(b1[n - 1 - t]));
            assert_eq!(g.value(b2[t]), g.value(f1[n - 1 - t]));
            assert!(g.value(a2[t]).max_abs_diff(g.value(a1[n - 1 - t])) < 1e-14);
        }
    }

    #[test]
    fn closed_gates_return_backbone_exactly() {
        let (store, s) = small(4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::with_params(&store, false);
        let b = rand_tensor(&[4, 3, 3], -2.0, 2.0, &mut rng);
        let bv = g.constant(b.clone());
        let lo = g.constant(rand_tensor(&[4, 3, 3], -2.0, 2.0, &mut rng));
        let hi = g.constant(rand_tensor(&[4, 3, 3], -2.0, 2.0, &mut rng));
        let zero = g.constant(Tensor::zeros(&[4, 3, 3]));
        let out = s.cff_fuse(&mut g, bv, lo, hi, zero, zero).unwrap();
        assert_eq!(g.value(out), &b);
        // Zero anchors with open gates also leave the backbone untouched.
        let ones = g.constant(Tensor::full(&[4, 3, 3], 1.0));
        let out = s.cff_fuse(&mut g, bv, zero, zero, ones, ones).unwrap();
        assert_eq!(g.value(out), &b);
    }

    #[test]
    fn cff_rejects_shape_mismatch() {
        let (store, s) = small(4, 5);
        let mut g = Graph::with_params(&store, false);
        let a = g.constant(Tensor::zeros(&[4, 2, 2]));
        let b = g.constant(Tensor::zeros(&[4, 4, 4]));
        assert!(s.cff_fuse(&mut g, a, a, a, b, a).is_err());
    }

    #[test]
    fn forward_shape_and_determinism() {
        let (store, s) = small(4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frames: Vec<LdrFrame> = (0..3).map(|_| ldr(rand_tensor(&[3, 4, 6], 0.0, 1.0, &mut rng), 1.0)).collect();
        let lo = ldr(rand_tensor(&[3, 4, 6], 0.0, 1.0, &mut rng), 0.25);
        let hi = ldr(rand_tensor(&[3, 4, 6], 0.0, 1.0, &mut rng), 4.0);
        let z1 = s.run(&store, &frames, &lo, &hi).unwrap();
        let z2 = s.run(&store, &frames, &lo, &hi).unwrap();
        assert_eq!(z1.len(), 3);
        assert!(z1.iter().all(|z| z.shape() == [3, 4, 6]));
        assert!(z1.iter().flat_map(|z| z.data()).all(|&v| v >= 0.0 && v.is_finite()));
        assert_eq!(z1, z2);
    }

    #[test]
    fn closed_gates_make_output_anchor_independent() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = Stage1Config {
            width: 4,
            gate: GateMode::Closed,
            ..Default::default()
        };
        let s = Stage1::new(&mut store, &mut rng, cfg);
        let frames: Vec<LdrFrame> = (0..3).map(|_| ldr(rand_tensor(&[3, 4, 4], 0.0, 1.0, &mut rng), 1.0)).collect();
        let lo_a = ldr(rand_tensor(&[3, 4, 4], 0.0, 1.0, &mut rng), 0.25);
        let lo_b = ldr(rand_tensor(&[3, 4, 4], 0.0, 1.0, &mut rng), 0.25);
        let hi_a = ldr(rand_tensor(&[3, 4, 4], 0.0, 1.0, &mut rng), 4.0);
        let hi_b = ldr(rand_tensor(&[3, 4, 4], 0.0, 1.0, &mut rng), 4.0);
        let za = s.run(&store, &frames, &lo_a, &hi_a).unwrap();
        let zb = s.run(&store, &frames, &lo_b, &hi_b).unwrap();
        assert_eq!(za, zb);
        // A single frame's output depends on that frame only.
        let mut moved = frames.clone();
        moved[0] = ldr(rand_tensor(&[3, 4, 4], 0.0, 1.0, &mut rng), 1.0);
        let zc = s.run(&store, &moved, &lo_a, &hi_a).unwrap();
        assert_eq!(za[1..], zc[1..]);
        assert_ne!(za[0], zc[0]);

        // With reliability gates, anchors do matter.
        let mut store2 = ParamStore::new();
        let s2 = Stage1::new(&mut store2, &mut ChaCha8Rng::seed_from_u64(7), Stage1Config { width: 4, ..Default::default() });
        assert_ne!(s2.run(&store2, &frames, &lo_a, &hi_a).unwrap(), s2.run(&store2, &frames, &lo_b, &hi_b).unwrap());
    }

    #[test]
    fn linearized_input_variant() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = Stage1Config {
            width: 4,
            linearized_input: true,
            ..Default::default()
        };
        let s = Stage1::new(&mut store, &mut rng, cfg);
        let y = ldr(Tensor::full(&[3, 2, 2], 0.5), 0.25);
        let x = s.input_tensor(&y);
        assert_eq!(x.shape(), &[6, 2, 2]);
        assert!((x.data()[12] - 0.5f64.powf(2.2) / 0.25).abs() < 1e-12);
        let z = s.run(&store, &[y.clone()], &y, &y).unwrap();
        assert_eq!(z[0].shape(), &[3, 2, 2]);
    }

    #[test]
    fn tpa_parameter_gradient() {
        let (mut store, s) = small(2, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        randomize_biases(&mut store, &mut rng);
        let anchor = rand_tensor(&[2, 2, 2], -1.0, 1.0, &mut rng);
        let bb: Vec<Tensor> = (0..3).map(|_| rand_tensor(&[2, 2, 2], -1.0, 1.0, &mut rng)).collect();
        let ids: Vec<ParamId> = store.with_prefix("stage1.tpa");
        let report = check_param_gradient(&GradCheck::default(), &store, &ids, |g| {
            let a = g.constant(anchor.clone());
            let b: Vec<Var> = bb.iter().map(|t| g.constant(t.clone())).collect();
            let alphas = s.tpa_reliability(g, a, &b).unwrap();
            let means: Vec<Var> = alphas.iter().map(|&x| g.mean(x)).collect();
            g.sum_scalars(&means).unwrap()
        });
        report.assert_below(1e-3);
    }

    #[test]
    fn cff_gate_gradient() {
        let (store, s) = small(2, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let inputs = vec![
            rand_tensor(&[2, 2, 2], 0.05, 0.95, &mut rng),
            rand_tensor(&[2, 2, 2], 0.05, 0.95, &mut rng),
        ];
        let b = rand_tensor(&[2, 2, 2], -1.0, 1.0, &mut rng);
        let lo = rand_tensor(&[2, 2, 2], -1.0, 1.0, &mut rng);
        let hi = rand_tensor(&[2, 2, 2], -1.0, 1.0, &mut rng);
        let report = check_input_gradient_with_params(&GradCheck::default(), &store, &inputs, |g, v| {
            let (bv, lv, hv) = (g.constant(b.clone()), g.constant(lo.clone()), g.constant(hi.clone()));
            let out = s.cff_fuse(g, bv, lv, hv, v[0], v[1]).unwrap();
            let probe = g.constant(Tensor::full(&[2, 2, 2], 1.0));
            let prod = g.mul(out, probe).unwrap();
            g.mean(prod)
        });
        report.assert_below(1e-3);
        assert!(report.max_abs_analytic > 0.0);
    }
}
