//! RWKV-style sequence mixing along the frame axis.
//!
//! Every spatial site of a `[C, h, w]` feature sequence is an independent
//! length-`T` token stream; the projections are 1x1 convolutions, so all
//! parameters are shared across sites.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{vector_param, ChannelNorm, Conv, Init, ParamId, ParamStore};
use crate::tensor::Tensor;

fn pointwise(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Conv {
    Conv::new(store, rng, name, cin, cout, 1, 1, false, Init::Kaiming)
}

fn elementwise_max(a: &Tensor, b: &Tensor) -> Tensor {
    a.zip_map(b, f64::max).expect("state shapes agree")
}

/// Weighted key-value average with per-channel exponential decay:
///
/// ```text
/// wkv_t = (sum_{i<t} e^{-(t-1-i) w + k_i} v_i + e^{u + k_t} v_t)
///       / (sum_{i<t} e^{-(t-1-i) w + k_i}     + e^{u + k_t})
/// ```
///
/// evaluated in O(T) with numerator and denominator carried relative to a
/// running maximum exponent `p`. The shift `p` cancels in the ratio, so it is
/// held constant on the tape.
pub fn wkv(g: &mut Graph, decay: Var, bonus: Var, keys: &[Var], values: &[Var]) -> Result<Vec<Var>> {
    if keys.is_empty() || keys.len() != values.len() {
        return Err(Error::Argument(format!(
            "wkv needs matching non-empty key/value sequences, got {} and {}",
            keys.len(),
            values.len()
        )));
    }
    let neg_decay = g.scale(decay, -1.0);
    let mut out = Vec::with_capacity(keys.len());
    // A single term: numerator and denominator share the factor e^{u + k_1}.
    out.push(values[0]);

    let mut shift = g.value(keys[0]).clone();
    let s = g.constant(shift.clone());
    let centered = g.sub(keys[0], s)?;
    let mut den = g.exp(centered);
    let mut num = g.mul(den, values[0])?;

    for t in 1..keys.len() {
        let (k, v) = (keys[t], values[t]);
        let current = g.add_channel(k, bonus)?;
        let p = elementwise_max(&shift, g.value(current));
        let carry = g.constant(shift.zip_map(&p, |a, b| (a - b).exp())?);
        let pc = g.constant(p);
        let centered = g.sub(current, pc)?;
        let fresh = g.exp(centered);
        let a = g.mul(carry, num)?;
        let b = g.mul(fresh, v)?;
        let n = g.add(a, b)?;
        let a = g.mul(carry, den)?;
        let d = g.add(a, fresh)?;
        out.push(g.div(n, d)?);

        if t + 1 == keys.len() {
            break;
        }
        let prev = g.constant(shift.clone());
        let decayed = g.add_channel(prev, neg_decay)?;
        let p = elementwise_max(g.value(decayed), g.value(k));
        let pc = g.constant(p.clone());
        let a = g.sub(decayed, pc)?;
        let keep = g.exp(a);
        let b = g.sub(k, pc)?;
        let add = g.exp(b);
        let x = g.mul(keep, num)?;
        let y = g.mul(add, v)?;
        num = g.add(x, y)?;
        let x = g.mul(keep, den)?;
        den = g.add(x, add)?;
        shift = p;
    }
    Ok(out)
}

/// `prev + mix * (x - prev)` with `prev` the previous token (zero at t = 1).
fn token_shift(g: &mut Graph, seq: &[Var], mix: &[ParamId]) -> Result<Vec<Vec<Var>>> {
    let zero = g.constant(Tensor::zeros(g.value(seq[0]).shape()));
    let mut out = vec![Vec::with_capacity(seq.len()); mix.len()];
    for (t, &x) in seq.iter().enumerate() {
        let prev = if t == 0 { zero } else { seq[t - 1] };
        let diff = g.sub(x, prev)?;
        for (slot, &m) in out.iter_mut().zip(mix) {
            let mv = g.param(m);
            let scaled = g.mul_channel(diff, mv)?;
            slot.push(g.add(prev, scaled)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TimeMix {
    pub mix_k: ParamId,
    pub mix_v: ParamId,
    pub mix_r: ParamId,
    pub decay: ParamId,
    pub bonus: ParamId,
    pub key: Conv,
    pub value: Conv,
    pub receptance: Conv,
    pub output: Conv,
}

impl TimeMix {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize) -> Self {
        let spread = |lo: f64, hi: f64| -> Vec<f64> {
            (0..c)
                .map(|i| if c == 1 { lo } else { lo + (hi - lo) * i as f64 / (c - 1) as f64 })
                .collect()
        };
        Self {
            mix_k: vector_param(store, &format!("{name}.mix_k"), vec![0.5; c]),
            mix_v: vector_param(store, &format!("{name}.mix_v"), vec![0.5; c]),
            mix_r: vector_param(store, &format!("{name}.mix_r"), vec![0.5; c]),
            decay: vector_param(store, &format!("{name}.decay"), spread(0.1, 2.0)),
            bonus: vector_param(store, &format!("{name}.bonus"), vec![0.3; c]),
            key: pointwise(store, rng, &format!("{name}.key"), c, c),
            value: pointwise(store, rng, &format!("{name}.value"), c, c),
            receptance: pointwise(store, rng, &format!("{name}.receptance"), c, c),
            output: pointwise(store, rng, &format!("{name}.output"), c, c),
        }
    }

    /// `sigmoid(r_t) * W_o wkv_t` for every frame.
    pub fn forward(&self, g: &mut Graph, seq: &[Var]) -> Result<Vec<Var>> {
        if seq.is_empty() {
            return Err(Error::Argument("time mixing needs at least one frame".into()));
        }
        let mixed = token_shift(g, seq, &[self.mix_k, self.mix_v, self.mix_r])?;
        let mut keys = Vec::with_capacity(seq.len());
        let mut values = Vec::with_capacity(seq.len());
        let mut gates = Vec::with_capacity(seq.len());
        for t in 0..seq.len() {
            keys.push(self.key.forward(g, mixed[0][t])?);
            values.push(self.value.forward(g, mixed[1][t])?);
            let r = self.receptance.forward(g, mixed[2][t])?;
            gates.push(g.sigmoid(r));
        }
        let (w, u) = (g.param(self.decay), g.param(self.bonus));
        let mixed_values = wkv(g, w, u, &keys, &values)?;
        mixed_values
            .iter()
            .zip(&gates)
            .map(|(&a, &r)| {
                let o = self.output.forward(g, a)?;
                g.mul(r, o)
            })
            .collect()
    }
}

/// Gated squared-ReLU feed-forward with token shift.
#[derive(Clone, Debug)]
pub struct ChannelMix {
    pub mix_k: ParamId,
    pub mix_r: ParamId,
    pub key: Conv,
    pub value: Conv,
    pub receptance: Conv,
}

impl ChannelMix {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize, hidden: usize) -> Self {
        Self {
            mix_k: vector_param(store, &format!("{name}.mix_k"), vec![0.5; c]),
            mix_r: vector_param(store, &format!("{name}.mix_r"), vec![0.5; c]),
            key: pointwise(store, rng, &format!("{name}.key"), c, hidden),
            value: pointwise(store, rng, &format!("{name}.value"), hidden, c),
            receptance: pointwise(store, rng, &format!("{name}.receptance"), c, c),
        }
    }

    pub fn forward(&self, g: &mut Graph, seq: &[Var]) -> Result<Vec<Var>> {
        if seq.is_empty() {
            return Err(Error::Argument("channel mixing needs at least one frame".into()));
        }
        let mixed = token_shift(g, seq, &[self.mix_k, self.mix_r])?;
        (0..seq.len())
            .map(|t| {
                let k = self.key.forward(g, mixed[0][t])?;
                let k = g.relu(k);
                let k = g.square(k);
                let kv = self.value.forward(g, k)?;
                let r = self.receptance.forward(g, mixed[1][t])?;
                let r = g.sigmoid(r);
                g.mul(r, kv)
            })
            .collect()
    }
}

/// Pre-norm residual block: time mixing, then channel mixing.
#[derive(Clone, Debug)]
pub struct RwkvBlock {
    pub norm_time: ChannelNorm,
    pub time: TimeMix,
    pub norm_channel: ChannelNorm,
    pub channel: ChannelMix,
}

impl RwkvBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize) -> Self {
        Self {
            norm_time: ChannelNorm::new(store, &format!("{name}.norm_time"), c),
            time: TimeMix::new(store, rng, &format!("{name}.time"), c),
            norm_channel: ChannelNorm::new(store, &format!("{name}.norm_channel"), c),
            channel: ChannelMix::new(store, rng, &format!("{name}.channel"), c, 2 * c),
        }
    }

    pub fn forward(&self, g: &mut Graph, seq: &[Var]) -> Result<Vec<Var>> {
        let normed = seq
            .iter()
            .map(|&x| self.norm_time.forward(g, x))
            .collect::<Result<Vec<_>>>()?;
        let mixed = self.time.forward(g, &normed)?;
        let seq = seq
            .iter()
            .zip(&mixed)
            .map(|(&x, &m)| g.add(x, m))
            .collect::<Result<Vec<_>>>()?;
        let normed = seq
            .iter()
            .map(|&x| self.norm_channel.forward(g, x))
            .collect::<Result<Vec<_>>>()?;
        let mixed = self.channel.forward(g, &normed)?;
        seq.iter().zip(&mixed).map(|(&x, &m)| g.add(x, m)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_input_gradient, check_input_gradient_with_params, check_param_gradient, GradCheck};
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    /// Direct quadratic-cost evaluation of the weighted average.
    fn brute_force(w: &[f64], u: &[f64], k: &[Tensor], v: &[Tensor]) -> Vec<Tensor> {
        let c = w.len();
        let plane = k[0].len() / c;
        (0..k.len())
            .map(|t| {
                let mut out = Tensor::zeros(k[0].shape());
                for ch in 0..c {
                    for p in 0..plane {
                        let j = ch * plane + p;
                        let mut num = 0.0;
                        let mut den = 0.0;
                        for i in 0..t {
                            let e = (-((t - 1 - i) as f64) * w[ch] + k[i].data()[j]).exp();
                            num += e * v[i].data()[j];
                            den += e;
                        }
                        let e = (u[ch] + k[t].data()[j]).exp();
                        num += e * v[t].data()[j];
                        den += e;
                        out.data_mut()[j] = num / den;
                    }
                }
                out
            })
            .collect()
    }

    fn run_wkv(w: &[f64], u: &[f64], k: &[Tensor], v: &[Tensor]) -> Vec<Tensor> {
        let mut g = Graph::new();
        let wv = g.constant(Tensor::from_vec(&[w.len()], w.to_vec()).unwrap());
        let uv = g.constant(Tensor::from_vec(&[u.len()], u.to_vec()).unwrap());
        let kv: Vec<Var> = k.iter().map(|t| g.constant(t.clone())).collect();
        let vv: Vec<Var> = v.iter().map(|t| g.constant(t.clone())).collect();
        let out = wkv(&mut g, wv, uv, &kv, &vv).unwrap();
        out.iter().map(|&o| g.value(o).clone()).collect()
    }

    #[test]
    fn single_step_returns_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let k = vec![rand_tensor(&[2, 2, 2], -3.0, 3.0, &mut rng)];
        let v = vec![rand_tensor(&[2, 2, 2], -3.0, 3.0, &mut rng)];
        let out = run_wkv(&[0.5, 1.0], &[0.2, -0.4], &k, &v);
        assert_eq!(out[0], v[0]);
    }

    #[test]
    fn constant_values_are_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k: Vec<Tensor> = (0..6).map(|_| rand_tensor(&[2, 1, 3], -2.0, 2.0, &mut rng)).collect();
        let v = vec![Tensor::full(&[2, 1, 3], 0.37); 6];
        for o in run_wkv(&[0.3, -0.7], &[1.0, 0.0], &k, &v) {
            assert!(o.data().iter().all(|&x| (x - 0.37).abs() < 1e-14));
        }
    }

    #[test]
    fn recurrence_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..20 {
            let t = 1 + trial % 8;
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let k: Vec<Tensor> = (0..t).map(|_| rand_tensor(&[3, 2, 2], -3.0, 3.0, &mut rng)).collect();
            let v: Vec<Tensor> = (0..t).map(|_| rand_tensor(&[3, 2, 2], -3.0, 3.0, &mut rng)).collect();
            let fast = run_wkv(&w, &u, &k, &v);
            let slow = brute_force(&w, &u, &k, &v);
            for (a, b) in fast.iter().zip(&slow) {
                assert!(a.max_abs_diff(b) < 1e-10);
            }
        }
    }

    #[test]
    fn stable_for_large_decay_and_bonus() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k: Vec<Tensor> = (0..64).map(|_| rand_tensor(&[4, 1, 2], -20.0, 20.0, &mut rng)).collect();
        let v: Vec<Tensor> = (0..64).map(|_| rand_tensor(&[4, 1, 2], -1.0, 1.0, &mut rng)).collect();
        let out = run_wkv(&[20.0, -20.0, 20.0, -20.0], &[20.0, 20.0, -20.0, -20.0], &k, &v);
        for o in &out {
            assert!(o.is_finite());
            assert!(o.data().iter().all(|x| x.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn wkv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = 4;
        let mut inputs = vec![rand_tensor(&[2], 0.1, 1.5, &mut rng), rand_tensor(&[2], -1.0, 1.0, &mut rng)];
        inputs.extend((0..2 * t).map(|_| rand_tensor(&[2, 2, 2], -1.0, 1.0, &mut rng)));
        let probe: Vec<Tensor> = (0..t).map(|_| rand_tensor(&[2, 2, 2], -1.0, 1.0, &mut rng)).collect();
        check_input_gradient(&inputs, |g, v| {
            let out = wkv(g, v[0], v[1], &v[2..2 + t], &v[2 + t..]).unwrap();
            let terms: Vec<Var> = out
                .iter()
                .zip(&probe)
                .map(|(&o, p)| {
                    let pv = g.constant(p.clone());
                    let m = g.mul(o, pv).unwrap();
                    g.mean(m)
                })
                .collect();
            g.sum_scalars(&terms).unwrap()
        })
        .assert_below(1e-6);
    }

    #[test]
    fn channel_mix_zero_and_shape() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cm = ChannelMix::new(&mut store, &mut rng, "cm", 3, 6);
        let mut g = Graph::with_params(&store, false);
        let zeros: Vec<Var> = (0..3).map(|_| g.constant(Tensor::zeros(&[3, 2, 2]))).collect();
        for o in cm.forward(&mut g, &zeros).unwrap() {
            assert!(g.value(o).data().iter().all(|&v| v == 0.0));
        }
        let seq: Vec<Var> = (0..3).map(|_| g.constant(rand_tensor(&[3, 2, 4], -1.0, 1.0, &mut rng))).collect();
        let out = cm.forward(&mut g, &seq).unwrap();
        assert!(out.iter().all(|&o| g.value(o).shape() == [3, 2, 4]));
    }

    #[test]
    fn channel_and_time_mix_gradients() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tm = TimeMix::new(&mut store, &mut rng, "tm", 3);
        let cm = ChannelMix::new(&mut store, &mut rng, "cm", 3, 6);
        let seq: Vec<Tensor> = (0..4).map(|_| rand_tensor(&[3, 2, 2], -1.0, 1.0, &mut rng)).collect();
        let objective = |g: &mut Graph, s: &[Var]| {
            let a = tm.forward(g, s).unwrap();
            let b = cm.forward(g, &a).unwrap();
            let means: Vec<Var> = b.iter().map(|&x| g.mean(x)).collect();
            g.sum_scalars(&means).unwrap()
        };
        let ids: Vec<ParamId> = store.ids().collect();
        check_param_gradient(&GradCheck::default(), &store, &ids, |g| {
            let s: Vec<Var> = seq.iter().map(|t| g.constant(t.clone())).collect();
            objective(g, &s)
        })
        .assert_below(1e-3);
        check_input_gradient_with_params(&GradCheck::default(), &store, &seq, objective).assert_below(1e-3);
    }
}
