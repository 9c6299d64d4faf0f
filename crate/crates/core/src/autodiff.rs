//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as it is evaluated. Parameters from a
//! [`ParamStore`] occupy the first nodes of the tape so a [`ParamId`] maps
//! directly onto its [`Var`]. [`Graph::backward`] walks the tape once in
//! reverse and returns gradients for every node that requires them.

use crate::error::{shape_err, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::wavelet::{dwt_packed, idwt_packed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvSpec {
    stride: usize,
    pad: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Square(Var),
    ToneMap(Var, f64),
    MulChannel(Var, Var),
    AddChannel(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    ChannelNorm {
        x: Var,
        eps: f64,
    },
    Dwt(Var),
    Idwt(Var),
    Upsample2(Var),
    Mean(Var),
    MeanAbs(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    num_params: usize,
}

/// Gradients indexed by [`Var`]; `None` where nothing flowed.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.index()].as_ref()
    }

    /// Gradient of every parameter in store order; zeros where none flowed.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.grads[i]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start a tape whose first nodes are the parameters of `store`.
    pub fn with_params(store: &ParamStore, requires_grad: bool) -> Self {
        let mut g = Self::new();
        for p in store.iter() {
            g.push(p.value.clone(), Op::Leaf, requires_grad);
        }
        g.num_params = store.len();
        g
    }

    pub fn param(&self, id: ParamId) -> Var {
        assert!(id.index() < self.num_params, "parameter not bound to this graph");
        Var(id.index())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient, e.g. an input under a gradient check.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!(
                "operand shapes differ: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.derived(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.derived(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.derived(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.derived(v, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.derived(v, Op::Scale(a, s), &[a])
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.derived(v, Op::Offset(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.derived(v, Op::Exp(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.derived(v, Op::Sigmoid(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.derived(v, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.derived(v, Op::Square(a), &[a])
    }

    /// `ln(1 + kappa x) / ln(1 + kappa)` for `x >= 0`, continued linearly with
    /// the slope at zero for `x < 0` so that residual updates which overshoot
    /// below zero still receive a gradient.
    pub fn tone_map(&mut self, a: Var, kappa: f64) -> Var {
        let v = self.value(a).map(|x| tone_map_ext(x, kappa));
        self.derived(v, Op::ToneMap(a, kappa), &[a])
    }

    fn check_channel(&self, x: Var, c: Var) -> Result<usize> {
        let (ch, _, _) = self.value(x).dims3()?;
        if self.value(c).shape() != [ch] {
            return shape_err(format!(
                "per-channel operand {:?} does not match {ch} channels",
                self.value(c).shape()
            ));
        }
        Ok(ch)
    }

    /// `x[c, :, :] * s[c]`.
    pub fn mul_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check_channel(x, s)?;
        let mut v = self.value(x).clone();
        let sv = self.value(s).data().to_vec();
        let plane = v.len() / sv.len();
        for (chunk, &k) in v.data_mut().chunks_mut(plane).zip(&sv) {
            chunk.iter_mut().for_each(|e| *e *= k);
        }
        Ok(self.derived(v, Op::MulChannel(x, s), &[x, s]))
    }

    /// `x[c, :, :] + s[c]`.
    pub fn add_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check_channel(x, s)?;
        let mut v = self.value(x).clone();
        let sv = self.value(s).data().to_vec();
        let plane = v.len() / sv.len();
        for (chunk, &k) in v.data_mut().chunks_mut(plane).zip(&sv) {
            chunk.iter_mut().for_each(|e| *e += k);
        }
        Ok(self.derived(v, Op::AddChannel(x, s), &[x, s]))
    }

    /// 2-D cross-correlation of a `[Cin, H, W]` input with `[Cout, Cin, k, k]`
    /// weights, zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (cin, h, wd) = self.value(x).dims3()?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || ws[1] != cin || ws[2] != ws[3] {
            return shape_err(format!("conv weight {ws:?} incompatible with {cin} input channels"));
        }
        let (cout, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return shape_err(format!("input {h}x{wd} smaller than kernel {k}"));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return shape_err(format!("conv bias {:?} for {cout} outputs", self.value(b).shape()));
            }
        }
        let geo = ConvGeometry::new(cin, h, wd, k, stride, pad);
        let n = geo.ho * geo.wo;
        let mut out = vec![0.0; cout * n];
        let cols = geo.im2col(self.value(x).data());
        gemm(
            cout,
            geo.patch(),
            n,
            self.value(w).data(),
            false,
            cols.as_deref().unwrap_or(self.value(x).data()),
            false,
            &mut out,
            0.0,
        );
        if let Some(b) = b {
            for (row, &bv) in out.chunks_mut(n).zip(self.value(b).data()) {
                row.iter_mut().for_each(|e| *e += bv);
            }
        }
        let value = Tensor::from_vec(&[cout, geo.ho, geo.wo], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.derived(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                spec: ConvSpec { stride, pad },
            },
            &parents,
        ))
    }

    /// Stack `[C_i, H, W]` tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).dims3()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (c, h, w) = self.value(p).dims3()?;
            if (h, w) != (first.1, first.2) {
                return shape_err(format!("concat spatial mismatch {}x{} vs {h}x{w}", first.1, first.2));
            }
            channels += c;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::from_vec(&[channels, first.1, first.2], data)?;
        Ok(self.derived(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Channels `start..start + len` of a `[C, H, W]` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        if start + len > c {
            return shape_err(format!("channel slice {start}..{} of {c}", start + len));
        }
        let plane = h * w;
        let data = self.value(x).data()[start * plane..(start + len) * plane].to_vec();
        let value = Tensor::from_vec(&[len, h, w], data)?;
        Ok(self.derived(value, Op::Slice { x, start }, &[x]))
    }

    /// Normalize across channels independently at every pixel.
    pub fn channel_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        let (normed, _) = channel_norm_forward(self.value(x).data(), c, h * w, eps);
        let value = Tensor::from_vec(&[c, h, w], normed)?;
        Ok(self.derived(value, Op::ChannelNorm { x, eps }, &[x]))
    }

    /// Haar analysis: `[C, H, W] -> [4C, H/2, W/2]` as `[ll, lh, hl, hh]`.
    pub fn dwt(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(format!("DWT needs even height and width, got {h}x{w}"));
        }
        let mut out = vec![0.0; c * h * w];
        dwt_packed(self.value(x).data(), c, h, w, &mut out);
        let value = Tensor::from_vec(&[4 * c, h / 2, w / 2], out)?;
        Ok(self.derived(value, Op::Dwt(x), &[x]))
    }

    /// Haar synthesis: `[4C, h, w] -> [C, 2h, 2w]`.
    pub fn idwt(&mut self, x: Var) -> Result<Var> {
        let (c4, h, w) = self.value(x).dims3()?;
        if c4 % 4 != 0 {
            return shape_err(format!("IDWT needs a multiple of 4 channels, got {c4}"));
        }
        let c = c4 / 4;
        let mut out = vec![0.0; c4 * h * w];
        idwt_packed(self.value(x).data(), c, 2 * h, 2 * w, &mut out);
        let value = Tensor::from_vec(&[c, 2 * h, 2 * w], out)?;
        Ok(self.derived(value, Op::Idwt(x), &[x]))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        let src = self.value(x).data();
        let mut out = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(ch * 2 * h + y) * 2 * w + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::from_vec(&[c, 2 * h, 2 * w], out)?;
        Ok(self.derived(value, Op::Upsample2(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        self.derived(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Mean absolute value, the per-element-normalized L1 norm.
    pub fn mean_abs(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().map(|v| v.abs()).sum::<f64>() / t.len() as f64;
        self.derived(Tensor::scalar(m), Op::MeanAbs(x), &[x])
    }

    /// Sum of scalar nodes.
    pub fn sum_scalars(&mut self, xs: &[Var]) -> Result<Var> {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        grads.resize(self.nodes.len(), None);
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                if rg(*b) {
                    self.accumulate(grads, *b, gout.map(|g| -g));
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let g = gout.zip_map(self.value(*b), |g, y| g * y).unwrap();
                    self.accumulate(grads, *a, g);
                }
                if rg(*b) {
                    let g = gout.zip_map(self.value(*a), |g, x| g * x).unwrap();
                    self.accumulate(grads, *b, g);
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if rg(*a) {
                    self.accumulate(grads, *a, gout.zip_map(bv, |g, y| g / y).unwrap());
                }
                if rg(*b) {
                    // d(a/b)/db = -(a/b) / b
                    let q = out.zip_map(bv, |o, y| o / y).unwrap();
                    self.accumulate(grads, *b, gout.zip_map(&q, |g, q| -g * q).unwrap());
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, gout.map(|g| g * s)),
            Op::Offset(a) => self.accumulate(grads, *a, gout.clone()),
            Op::Exp(a) => self.accumulate(grads, *a, gout.zip_map(out, |g, o| g * o).unwrap()),
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, gout.zip_map(out, |g, o| g * o * (1.0 - o)).unwrap())
            }
            Op::LeakyRelu(a, slope) => {
                let g = gout
                    .zip_map(self.value(*a), |g, x| if x >= 0.0 { g } else { g * slope })
                    .unwrap();
                self.accumulate(grads, *a, g);
            }
            Op::Square(a) => {
                self.accumulate(grads, *a, gout.zip_map(self.value(*a), |g, x| 2.0 * g * x).unwrap())
            }
            Op::ToneMap(a, kappa) => {
                let denom = kappa.ln_1p();
                let g = gout
                    .zip_map(self.value(*a), |g, x| {
                        let slope = if x >= 0.0 { kappa / ((1.0 + kappa * x) * denom) } else { kappa / denom };
                        g * slope
                    })
                    .unwrap();
                self.accumulate(grads, *a, g);
            }
            Op::MulChannel(x, s) => {
                let sv = self.value(*s).data();
                let plane = gout.len() / sv.len();
                if rg(*x) {
                    let mut g = gout.clone();
                    for (chunk, &k) in g.data_mut().chunks_mut(plane).zip(sv) {
                        chunk.iter_mut().for_each(|e| *e *= k);
                    }
                    self.accumulate(grads, *x, g);
                }
                if rg(*s) {
                    let xv = self.value(*x).data();
                    let gs: Vec<f64> = gout
                        .data()
                        .chunks(plane)
                        .zip(xv.chunks(plane))
                        .map(|(g, x)| g.iter().zip(x).map(|(a, b)| a * b).sum())
                        .collect();
                    self.accumulate(grads, *s, Tensor::from_vec(&[sv.len()], gs).unwrap());
                }
            }
            Op::AddChannel(x, s) => {
                self.accumulate(grads, *x, gout.clone());
                if rg(*s) {
                    let c = self.value(*s).len();
                    let plane = gout.len() / c;
                    let gs: Vec<f64> = gout.data().chunks(plane).map(|g| g.iter().sum()).collect();
                    self.accumulate(grads, *s, Tensor::from_vec(&[c], gs).unwrap());
                }
            }
            Op::Conv2d { x, w, b, spec } => {
                let (cin, h, wd) = self.value(*x).dims3().unwrap();
                let ws = self.value(*w).shape();
                let (cout, k) = (ws[0], ws[2]);
                let geo = ConvGeometry::new(cin, h, wd, k, spec.stride, spec.pad);
                let n = geo.ho * geo.wo;
                let kk = geo.patch();
                if let Some(b) = b {
                    if rg(*b) {
                        let gb: Vec<f64> = gout.data().chunks(n).map(|r| r.iter().sum()).collect();
                        self.accumulate(grads, *b, Tensor::from_vec(&[cout], gb).unwrap());
                    }
                }
                if rg(*w) {
                    let cols = geo.im2col(self.value(*x).data());
                    let cols = cols.as_deref().unwrap_or(self.value(*x).data());
                    let mut gw = vec![0.0; cout * kk];
                    gemm(cout, n, kk, gout.data(), false, cols, true, &mut gw, 0.0);
                    self.accumulate(grads, *w, Tensor::from_vec(ws, gw).unwrap());
                }
                if rg(*x) {
                    let mut gcols = vec![0.0; kk * n];
                    gemm(kk, cout, n, self.value(*w).data(), true, gout.data(), false, &mut gcols, 0.0);
                    let gx = geo.col2im(gcols);
                    self.accumulate(grads, *x, Tensor::from_vec(&[cin, h, wd], gx).unwrap());
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if rg(p) {
                        let g = Tensor::from_vec(self.value(p).shape(), gout.data()[offset..offset + n].to_vec())
                            .unwrap();
                        self.accumulate(grads, p, g);
                    }
                    offset += n;
                }
            }
            Op::Slice { x, start } => {
                let xs = self.value(*x).shape();
                let plane = xs[1] * xs[2];
                let mut g = Tensor::zeros(xs);
                g.data_mut()[start * plane..start * plane + gout.len()].copy_from_slice(gout.data());
                self.accumulate(grads, *x, g);
            }
            Op::ChannelNorm { x, eps } => {
                let (c, h, w) = self.value(*x).dims3().unwrap();
                let plane = h * w;
                let (_, inv_std) = channel_norm_forward(self.value(*x).data(), c, plane, *eps);
                let y = out.data();
                let gy = gout.data();
                let mut gx = vec![0.0; c * plane];
                for p in 0..plane {
                    let (mut mg, mut mgy) = (0.0, 0.0);
                    for ch in 0..c {
                        mg += gy[ch * plane + p];
                        mgy += gy[ch * plane + p] * y[ch * plane + p];
                    }
                    mg /= c as f64;
                    mgy /= c as f64;
                    for ch in 0..c {
                        let j = ch * plane + p;
                        gx[j] = inv_std[p] * (gy[j] - mg - y[j] * mgy);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(&[c, h, w], gx).unwrap());
            }
            Op::Dwt(x) => {
                // Orthonormal: the adjoint of analysis is synthesis.
                let (c, h, w) = self.value(*x).dims3().unwrap();
                let mut gx = vec![0.0; c * h * w];
                idwt_packed(gout.data(), c, h, w, &mut gx);
                self.accumulate(grads, *x, Tensor::from_vec(&[c, h, w], gx).unwrap());
            }
            Op::Idwt(x) => {
                let (c, h, w) = out.dims3().unwrap();
                let mut gx = vec![0.0; c * h * w];
                dwt_packed(gout.data(), c, h, w, &mut gx);
                self.accumulate(grads, *x, Tensor::from_vec(self.value(*x).shape(), gx).unwrap());
            }
            Op::Upsample2(x) => {
                let (c, h, w) = self.value(*x).dims3().unwrap();
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            gx[(ch * h + y / 2) * w + xx / 2] += gout.data()[(ch * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(&[c, h, w], gx).unwrap());
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let g = gout.item() / n;
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), g));
            }
            Op::MeanAbs(x) => {
                let n = self.value(*x).len() as f64;
                let g = gout.item() / n;
                let gx = self.value(*x).map(|v| {
                    if v > 0.0 {
                        g
                    } else if v < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, gx);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn tone_map_ext(x: f64, kappa: f64) -> f64 {
    if x >= 0.0 {
        (kappa * x).ln_1p() / kappa.ln_1p()
    } else {
        x * kappa / kappa.ln_1p()
    }
}

/// Returns the normalized values and the per-pixel inverse std.
fn channel_norm_forward(x: &[f64], c: usize, plane: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; c * plane];
    let mut inv_std = vec![0.0; plane];
    for p in 0..plane {
        let mean = (0..c).map(|ch| x[ch * plane + p]).sum::<f64>() / c as f64;
        let var = (0..c).map(|ch| (x[ch * plane + p] - mean).powi(2)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[p] = is;
        for ch in 0..c {
            out[ch * plane + p] = (x[ch * plane + p] - mean) * is;
        }
    }
    (out, inv_std)
}

struct ConvGeometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Self {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
        }
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Unfolded `[Cin*k*k, Ho*Wo]` patch matrix; `None` when the input
    /// already has that layout (pointwise convolution).
    fn im2col(&self, x: &[f64]) -> Option<Vec<f64>> {
        if self.is_pointwise() {
            return None;
        }
        let n = self.ho * self.wo;
        let mut cols = vec![0.0; self.patch() * n];
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &x[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[oy * self.wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        Some(cols)
    }

    fn col2im(&self, cols: Vec<f64>) -> Vec<f64> {
        if self.is_pointwise() {
            return cols;
        }
        let n = self.ho * self.wo;
        let mut x = vec![0.0; self.cin * self.h * self.w];
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut x[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// `c = op(a) * op(b) + beta * c` with row-major `m x k` and `k x n` operands
/// (before transposition).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index dgemm touches for these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
