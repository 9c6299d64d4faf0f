//! Training objectives.
//!
//! Every `‖·‖_1` below is a mean absolute error over pixels and channels, so
//! magnitudes do not depend on resolution. The graph builders are what the
//! trainer differentiates; the tensor functions evaluate the same graphs.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::imaging::ToneMapParams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_t: f64,
    pub lambda_z: f64,
}

impl LossWeights {
    pub fn new(lambda_t: f64, lambda_z: f64) -> Result<Self> {
        if !(lambda_t >= 0.0 && lambda_z >= 0.0) || !lambda_t.is_finite() || !lambda_z.is_finite() {
            return Err(Error::Domain(format!(
                "loss weights must be finite and non-negative, got ({lambda_t}, {lambda_z})"
            )));
        }
        Ok(Self { lambda_t, lambda_z })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_t: 0.5,
            lambda_z: 0.1,
        }
    }
}

fn check_lengths(a: usize, b: usize, min: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: sequence lengths {a} and {b} differ")));
    }
    if a < min {
        return Err(Error::Argument(format!("{what} needs at least {min} frames, got {a}")));
    }
    Ok(())
}

/// Mean over frames of the tone-mapped mean absolute error.
pub fn spatial(g: &mut Graph, xhat: &[Var], x: &[Var], p: &ToneMapParams) -> Result<Var> {
    check_lengths(xhat.len(), x.len(), 1, "spatial loss")?;
    let k = p.kappa();
    let mut terms = Vec::with_capacity(x.len());
    for (&a, &b) in xhat.iter().zip(x) {
        let ta = g.tone_map(a, k);
        let tb = g.tone_map(b, k);
        let d = g.sub(ta, tb)?;
        terms.push(g.mean_abs(d));
    }
    let sum = g.sum_scalars(&terms)?;
    Ok(g.scale(sum, 1.0 / x.len() as f64))
}

/// Mean over consecutive pairs of the error between tone-mapped frame differences.
pub fn temporal(g: &mut Graph, xhat: &[Var], x: &[Var], p: &ToneMapParams) -> Result<Var> {
    check_lengths(xhat.len(), x.len(), 2, "temporal loss")?;
    let k = p.kappa();
    let th: Vec<Var> = xhat.iter().map(|&v| g.tone_map(v, k)).collect();
    let tx: Vec<Var> = x.iter().map(|&v| g.tone_map(v, k)).collect();
    let mut terms = Vec::with_capacity(x.len() - 1);
    for t in 0..x.len() - 1 {
        let dh = g.sub(th[t + 1], th[t])?;
        let dx = g.sub(tx[t + 1], tx[t])?;
        let d = g.sub(dh, dx)?;
        terms.push(g.mean_abs(d));
    }
    let sum = g.sum_scalars(&terms)?;
    Ok(g.scale(sum, 1.0 / (x.len() - 1) as f64))
}

/// Mean over frames of the linear-domain error between two stage-1 outputs.
pub fn anchor(g: &mut Graph, za: &[Var], zb: &[Var]) -> Result<Var> {
    check_lengths(za.len(), zb.len(), 1, "anchor loss")?;
    let mut terms = Vec::with_capacity(za.len());
    for (&a, &b) in za.iter().zip(zb) {
        let d = g.sub(a, b)?;
        terms.push(g.mean_abs(d));
    }
    let sum = g.sum_scalars(&terms)?;
    Ok(g.scale(sum, 1.0 / za.len() as f64))
}

pub fn total(g: &mut Graph, ls: Var, lt: Var, lz: Var, w: &LossWeights) -> Result<Var> {
    let lt = g.scale(lt, w.lambda_t);
    let lz = g.scale(lz, w.lambda_z);
    g.sum_scalars(&[ls, lt, lz])
}

fn eval_pair(a: &[Tensor], b: &[Tensor], f: impl Fn(&mut Graph, &[Var], &[Var]) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let va: Vec<Var> = a.iter().map(|t| g.constant(t.clone())).collect();
    let vb: Vec<Var> = b.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &va, &vb)?;
    Ok(g.value(out).item())
}

pub fn loss_spatial(xhat: &[Tensor], x: &[Tensor], p: &ToneMapParams) -> Result<f64> {
    eval_pair(xhat, x, |g, a, b| spatial(g, a, b, p))
}

pub fn loss_temporal(xhat: &[Tensor], x: &[Tensor], p: &ToneMapParams) -> Result<f64> {
    eval_pair(xhat, x, |g, a, b| temporal(g, a, b, p))
}

pub fn loss_anchor(za: &[Tensor], zb: &[Tensor]) -> Result<f64> {
    eval_pair(za, zb, anchor)
}

pub fn loss_total(ls: f64, lt: f64, lz: f64, w: &LossWeights) -> f64 {
    ls + w.lambda_t * lt + w.lambda_z * lz
}
