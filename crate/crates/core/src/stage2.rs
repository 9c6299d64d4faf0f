//! Global sequence consistency: `X = Z + Delta(Z)`.
//!
//! `Delta` is computed at quarter resolution. A strided encoder produces
//! `f0_t`; two passes of bidirectional recurrent propagation build
//! `[f0, fwd1, bwd1, fwd2, bwd2]`; a projection and `K` RWKV blocks mix the
//! whole sequence along time; an upsampling decoder whose last layer starts
//! at zero maps the result back to a 3-channel residual.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::imaging::ToneMapParams;
use crate::nn::{Conv, Init, ParamStore, LEAKY_SLOPE};
use crate::rwkv::RwkvBlock;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Config {
    /// Encoder width `C'`.
    pub width: usize,
    /// Number of stacked RWKV blocks `K`.
    pub blocks: usize,
    pub tone: ToneMapParams,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            width: 48,
            blocks: 2,
            tone: ToneMapParams::default(),
        }
    }
}

/// `G([h_prev, input])`: a fusing convolution followed by one residual block.
#[derive(Clone, Debug)]
pub struct PropagationCell {
    pub merge: Conv,
    pub res_a: Conv,
    pub res_b: Conv,
}

impl PropagationCell {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, c: usize) -> Self {
        Self {
            merge: Conv::k3(store, rng, &format!("{name}.merge"), cin, c),
            res_a: Conv::k3(store, rng, &format!("{name}.res.0"), c, c),
            res_b: Conv::k3(store, rng, &format!("{name}.res.1"), c, c),
        }
    }

    fn step(&self, g: &mut Graph, prev: Var, input: Var) -> Result<Var> {
        let x = g.concat(&[prev, input])?;
        let y = self.merge.forward(g, x)?;
        let y = g.leaky_relu(y, LEAKY_SLOPE);
        let r = self.res_a.forward(g, y)?;
        let r = g.leaky_relu(r, LEAKY_SLOPE);
        let r = self.res_b.forward(g, r)?;
        g.add(y, r)
    }

    /// Run over `inputs` in the given direction with a zero boundary state;
    /// the result is indexed by frame either way.
    fn scan(&self, g: &mut Graph, inputs: &[Var], reverse: bool, channels: usize) -> Result<Vec<Var>> {
        let (_, h, w) = g.value(inputs[0]).dims3()?;
        let mut state = g.constant(Tensor::zeros(&[channels, h, w]));
        let mut out = vec![state; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for t in order {
            state = self.step(g, state, inputs[t])?;
            out[t] = state;
        }
        Ok(out)
    }
}

/// All intermediate sequences of the two propagation passes.
#[derive(Clone, Debug)]
pub struct BcaOutput {
    pub forward1: Vec<Var>,
    pub backward1: Vec<Var>,
    pub forward2: Vec<Var>,
    pub backward2: Vec<Var>,
    /// `[f0, fwd1, bwd1, fwd2, bwd2]` per frame, `5 C'` channels.
    pub aggregated: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Stage2 {
    pub config: Stage2Config,
    pub encode_a: Conv,
    pub encode_b: Conv,
    pub forward1: PropagationCell,
    pub backward1: PropagationCell,
    pub forward2: PropagationCell,
    pub backward2: PropagationCell,
    pub project: Conv,
    pub blocks: Vec<RwkvBlock>,
    pub decode_hidden: Conv,
    pub decode_out: Conv,
}

impl Stage2 {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, config: Stage2Config) -> Self {
        let c = config.width;
        Self {
            encode_a: Conv::new(store, rng, "stage2.encode.0", 3, c, 3, 2, true, Init::Kaiming),
            encode_b: Conv::new(store, rng, "stage2.encode.1", c, c, 3, 2, true, Init::Kaiming),
            forward1: PropagationCell::new(store, rng, "stage2.bca.forward1", 2 * c, c),
            backward1: PropagationCell::new(store, rng, "stage2.bca.backward1", 2 * c, c),
            forward2: PropagationCell::new(store, rng, "stage2.bca.forward2", 3 * c, c),
            backward2: PropagationCell::new(store, rng, "stage2.bca.backward2", 3 * c, c),
            project: Conv::new(store, rng, "stage2.ltm.project", 5 * c, c, 1, 1, true, Init::Kaiming),
            blocks: (0..config.blocks)
                .map(|i| RwkvBlock::new(store, rng, &format!("stage2.ltm.block{i}"), c))
                .collect(),
            decode_hidden: Conv::k3(store, rng, "stage2.decode.0", c, c),
            decode_out: Conv::new(store, rng, "stage2.decode.1", c, 3, 3, 1, true, Init::Zeros),
            config,
        }
    }

    /// Tone-map each frame and apply two stride-2 convolutions.
    pub fn encode_downsample(&self, g: &mut Graph, frames: &[Var]) -> Result<Vec<Var>> {
        if frames.is_empty() {
            return Err(Error::Argument("stage 2 needs at least one frame".into()));
        }
        let shape = g.value(frames[0]).shape().to_vec();
        let (_, h, w) = g.value(frames[0]).dims3()?;
        if h % 4 != 0 || w % 4 != 0 {
            return shape_err(format!("stage 2 needs height and width divisible by 4, got {h}x{w}"));
        }
        let kappa = self.config.tone.kappa();
        frames
            .iter()
            .map(|&z| {
                if g.value(z).shape() != shape.as_slice() {
                    return shape_err(format!("frame {:?} vs {:?}", g.value(z).shape(), shape));
                }
                let x = g.tone_map(z, kappa);
                let x = self.encode_a.forward(g, x)?;
                let x = g.leaky_relu(x, LEAKY_SLOPE);
                let x = self.encode_b.forward(g, x)?;
                Ok(g.leaky_relu(x, LEAKY_SLOPE))
            })
            .collect()
    }

    pub fn bca_propagate(&self, g: &mut Graph, f0: &[Var]) -> Result<BcaOutput> {
        self.bca_propagate_inner(g, f0, false)
    }

    /// Propagation with the first-pass outputs replaced by zeros before they
    /// feed the second pass. Used to verify that pass 2 consumes pass 1.
    pub fn bca_propagate_severed(&self, g: &mut Graph, f0: &[Var]) -> Result<BcaOutput> {
        self.bca_propagate_inner(g, f0, true)
    }

    fn bca_propagate_inner(&self, g: &mut Graph, f0: &[Var], sever: bool) -> Result<BcaOutput> {
        if f0.is_empty() {
            return Err(Error::Argument("propagation needs at least one frame".into()));
        }
        let c = self.config.width;
        let forward1 = self.forward1.scan(g, f0, false, c)?;
        let backward1 = self.backward1.scan(g, f0, true, c)?;
        let (fwd_in, bwd_in) = if sever {
            let z = g.constant(Tensor::zeros(g.value(f0[0]).shape()));
            (vec![z; f0.len()], vec![z; f0.len()])
        } else {
            (forward1.clone(), backward1.clone())
        };
        let mut input_fwd2 = Vec::with_capacity(f0.len());
        let mut input_bwd2 = Vec::with_capacity(f0.len());
        for t in 0..f0.len() {
            input_fwd2.push(g.concat(&[bwd_in[t], f0[t]])?);
            input_bwd2.push(g.concat(&[fwd_in[t], f0[t]])?);
        }
        let forward2 = self.forward2.scan(g, &input_fwd2, false, c)?;
        let backward2 = self.backward2.scan(g, &input_bwd2, true, c)?;
        let aggregated = (0..f0.len())
            .map(|t| g.concat(&[f0[t], forward1[t], backward1[t], forward2[t], backward2[t]]))
            .collect::<Result<Vec<_>>>()?;
        Ok(BcaOutput {
            forward1,
            backward1,
            forward2,
            backward2,
            aggregated,
        })
    }

    /// Project `5 C' -> C'` and apply the RWKV stack along time.
    pub fn ltm_forward(&self, g: &mut Graph, aggregated: &[Var]) -> Result<Vec<Var>> {
        if aggregated.is_empty() {
            return Err(Error::Argument("temporal modeling needs at least one frame".into()));
        }
        let mut seq = aggregated
            .iter()
            .map(|&x| self.project.forward(g, x))
            .collect::<Result<Vec<_>>>()?;
        for block in &self.blocks {
            seq = block.forward(g, &seq)?;
        }
        Ok(seq)
    }

    pub fn decode_upsample(&self, g: &mut Graph, f: Var) -> Result<Var> {
        let x = g.upsample2(f)?;
        let x = self.decode_hidden.forward(g, x)?;
        let x = g.leaky_relu(x, LEAKY_SLOPE);
        let x = g.upsample2(x)?;
        self.decode_out.forward(g, x)
    }

    /// Returns `(X, Delta)` per frame.
    pub fn forward_with_residual(&self, g: &mut Graph, z: &[Var]) -> Result<(Vec<Var>, Vec<Var>)> {
        let f0 = self.encode_downsample(g, z)?;
        let bca = self.bca_propagate(g, &f0)?;
        let ltm = self.ltm_forward(g, &bca.aggregated)?;
        let mut xs = Vec::with_capacity(z.len());
        let mut deltas = Vec::with_capacity(z.len());
        for (&zt, &f) in z.iter().zip(&ltm) {
            let d = self.decode_upsample(g, f)?;
            xs.push(g.add(zt, d)?);
            deltas.push(d);
        }
        Ok((xs, deltas))
    }

    pub fn forward(&self, g: &mut Graph, z: &[Var]) -> Result<Vec<Var>> {
        Ok(self.forward_with_residual(g, z)?.0)
    }

    /// Inference without gradient bookkeeping.
    pub fn run(&self, store: &ParamStore, z: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut g = Graph::with_params(store, false);
        let zv: Vec<Var> = z.iter().map(|t| g.constant(t.clone())).collect();
        let x = self.forward(&mut g, &zv)?;
        Ok(x.iter().map(|&v| g.value(v).clone()).collect())
    }
}
