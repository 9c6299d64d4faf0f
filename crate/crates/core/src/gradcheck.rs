//! Central finite-difference checks for reverse-mode gradients.
//!
//! The numerical side only ever evaluates forward passes, so it stays
//! independent of every backward rule it is used to verify.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Denominator floor of the relative error, guarding near-zero gradients.
    pub floor: f64,
    /// Coordinates sampled per tensor; tensors at most this large are checked exhaustively.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-6,
            max_coords: 24,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: String,
    /// Largest analytic gradient magnitude seen, to catch vacuous checks.
    pub max_abs_analytic: f64,
}

impl GradReport {
    fn record(&mut self, label: String, analytic: f64, numeric: f64, floor: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.checked += 1;
        self.max_abs_analytic = self.max_abs_analytic.max(analytic.abs());
        if rel > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = format!("{label}: analytic {analytic:e}, numeric {numeric:e}");
        }
    }

    pub fn merge(&mut self, other: GradReport) {
        if other.max_rel_error >= self.max_rel_error {
            self.worst = other.worst;
        }
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.checked += other.checked;
        self.max_abs_analytic = self.max_abs_analytic.max(other.max_abs_analytic);
    }

    pub fn assert_below(&self, tol: f64) {
        assert!(self.checked > 0, "no coordinates were checked");
        assert!(
            self.max_rel_error < tol,
            "gradient mismatch {:e} >= {tol:e} (worst {})",
            self.max_rel_error,
            self.worst
        );
    }
}

fn coords(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Check `d f / d inputs` for a scalar function of freshly created leaf inputs.
pub fn check_input_gradient<F>(inputs: &[Tensor], f: F) -> GradReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    check_input_gradient_with(&GradCheck::default(), inputs, f)
}

pub fn check_input_gradient_with<F>(cfg: &GradCheck, inputs: &[Tensor], f: F) -> GradReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    input_gradient(cfg, Graph::new, inputs, f)
}

/// Like [`check_input_gradient_with`], on graphs with `store` bound (frozen).
pub fn check_input_gradient_with_params<F>(cfg: &GradCheck, store: &ParamStore, inputs: &[Tensor], f: F) -> GradReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    input_gradient(cfg, || Graph::with_params(store, false), inputs, f)
}

fn input_gradient<F, M>(cfg: &GradCheck, make: M, inputs: &[Tensor], f: F) -> GradReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
    M: Fn() -> Graph,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = make();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut g = make();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradReport::default();
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let zero = Tensor::zeros(input.shape());
        let analytic = grads.get(vars[i]).unwrap_or(&zero);
        for j in coords(input.len(), cfg.max_coords, &mut rng) {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + cfg.step;
            let up = eval(&work);
            work[i].data_mut()[j] = orig - cfg.step;
            let down = eval(&work);
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            report.record(format!("input {i}[{j}]"), analytic.data()[j], numeric, cfg.floor);
        }
    }
    report
}

/// Check `d f / d params` for the parameters listed in `ids`.
pub fn check_param_gradient<F>(cfg: &GradCheck, store: &ParamStore, ids: &[ParamId], f: F) -> GradReport
where
    F: Fn(&mut Graph) -> Var,
{
    let eval = |s: &ParamStore| -> f64 {
        let mut g = Graph::with_params(s, false);
        let out = f(&mut g);
        g.value(out).item()
    };
    let mut g = Graph::with_params(store, true);
    let out = f(&mut g);
    let grads = g.backward(out);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradReport::default();
    let mut work = store.clone();
    for &id in ids {
        let value = store.value(id).clone();
        let zero = Tensor::zeros(value.shape());
        let analytic = grads.param(id).unwrap_or(&zero);
        for j in coords(value.len(), cfg.max_coords, &mut rng) {
            let orig = value.data()[j];
            work.value_mut(id).data_mut()[j] = orig + cfg.step;
            let up = eval(&work);
            work.value_mut(id).data_mut()[j] = orig - cfg.step;
            let down = eval(&work);
            work.value_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            report.record(format!("{}[{j}]", store.name(id)), analytic.data()[j], numeric, cfg.floor);
        }
    }
    report
}
