//! Adam with bias-corrected moment estimates.

use hdrfuse_core::nn::ParamStore;
use hdrfuse_core::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Apply one update with gradients listed in parameter order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) {
        assert_eq!(grads.len(), self.m.len(), "one gradient per parameter");
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = store.value_mut(id).data_mut();
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + EPSILON);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut opt = Adam::new(&store);
        let g = Tensor::from_vec(&[3], vec![0.3, -4.0, 0.0]).unwrap();
        opt.step(&mut store, &[g], 0.1);
        let w = store.iter().next().unwrap().value.data().to_vec();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::from_vec(&[2], vec![3.0, -1.0]).unwrap());
        let mut opt = Adam::new(&store);
        for _ in 0..2000 {
            let x = store.iter().next().unwrap().value.clone();
            let g = x.map(|v| 2.0 * (v - 0.5));
            opt.step(&mut store, &[g], 0.01);
        }
        let x = store.iter().next().unwrap().value.clone();
        assert!(x.data().iter().all(|v| (v - 0.5).abs() < 1e-3), "{x:?}");
    }
}
