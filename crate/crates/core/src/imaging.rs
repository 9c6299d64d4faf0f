//! Radiometry: mu-law tone mapping, the power-law camera response, and
//! exposure simulation between scene-linear and display-encoded frames.

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scene-linear relative radiance, `[3, H, W]`, every sample finite and `>= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHdrFrame {
    pixels: Tensor,
}

impl LinearHdrFrame {
    pub fn new(pixels: Tensor) -> Result<Self> {
        let (c, _, _) = pixels.dims3()?;
        if c != 3 {
            return Err(Error::Shape(format!("HDR frame needs 3 channels, got {c}")));
        }
        if let Some(v) = pixels.data().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Domain(format!("HDR sample {v} is negative or not finite")));
        }
        Ok(Self { pixels })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self::new(Tensor::full(&[3, height, width], value)).expect("constant frame is valid")
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor {
        self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

/// Gamma-encoded, clipped observation in `[0, 1]` captured at `exposure`.
#[derive(Clone, Debug, PartialEq)]
pub struct LdrFrame {
    pixels: Tensor,
    exposure: f64,
}

impl LdrFrame {
    pub fn new(pixels: Tensor, exposure: f64) -> Result<Self> {
        let (c, _, _) = pixels.dims3()?;
        if c != 3 {
            return Err(Error::Shape(format!("LDR frame needs 3 channels, got {c}")));
        }
        if !(exposure > 0.0 && exposure.is_finite()) {
            return Err(Error::Domain(format!("exposure must be positive, got {exposure}")));
        }
        if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("LDR sample {v} outside [0, 1]")));
        }
        Ok(Self { pixels, exposure })
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn exposure(&self) -> f64 {
        self.exposure
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

/// `tau(x) = ln(1 + kappa x) / ln(1 + kappa)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToneMapParams {
    kappa: f64,
}

impl ToneMapParams {
    pub const DEFAULT_KAPPA: f64 = 5000.0;

    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Domain(format!("kappa must be positive, got {kappa}")));
        }
        Ok(Self { kappa })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Unchecked curve evaluation; callers guarantee `x >= 0`.
    pub fn curve<F: Float>(&self, x: F) -> F {
        let k = F::from(self.kappa).unwrap();
        (k * x).ln_1p() / k.ln_1p()
    }

    /// Inverse of [`Self::curve`]: radiance whose tone-mapped code is `t`.
    pub fn inverse(&self, t: f64) -> f64 {
        (t * self.kappa.ln_1p()).exp_m1() / self.kappa
    }
}

impl Default for ToneMapParams {
    fn default() -> Self {
        Self {
            kappa: Self::DEFAULT_KAPPA,
        }
    }
}

/// Power-law camera response `y = x^(1/gamma)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraResponse {
    gamma: f64,
}

impl CameraResponse {
    pub const DEFAULT_GAMMA: f64 = 2.2;

    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Encode exposed linear radiance to a clipped display value.
    pub fn encode<F: Float>(&self, exposed: F) -> F {
        let g = F::from(self.gamma).unwrap();
        exposed.max(F::zero()).powf(g.recip()).min(F::one())
    }

    /// Display value back to exposed linear radiance.
    pub fn decode<F: Float>(&self, y: F) -> F {
        y.powf(F::from(self.gamma).unwrap())
    }
}

impl Default for CameraResponse {
    fn default() -> Self {
        Self {
            gamma: Self::DEFAULT_GAMMA,
        }
    }
}

pub fn tone_map_value(x: f64, p: &ToneMapParams) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!("tone map input {x} is negative")));
    }
    Ok(p.curve(x))
}

pub fn tone_map(x: &LinearHdrFrame, p: &ToneMapParams) -> Tensor {
    // LinearHdrFrame already guarantees non-negative samples.
    x.pixels().map(|v| p.curve(v))
}

/// Tone-map an arbitrary tensor, rejecting negative samples.
pub fn tone_map_tensor(x: &Tensor, p: &ToneMapParams) -> Result<Tensor> {
    if let Some(v) = x.data().iter().find(|v| **v < 0.0 || v.is_nan()) {
        return Err(Error::Domain(format!("tone map input {v} is negative")));
    }
    Ok(x.map(|v| p.curve(v)))
}

/// Render an LDR observation: `clip((h * e + n)^(1/gamma), 0, 1)` with
/// `n ~ N(0, noise_sigma^2)` drawn in the linear domain from `seed`.
pub fn simulate_exposure(
    h: &LinearHdrFrame,
    exposure: f64,
    response: &CameraResponse,
    noise_sigma: f64,
    seed: u64,
) -> Result<LdrFrame> {
    if !(exposure > 0.0) {
        return Err(Error::Domain(format!("exposure must be positive, got {exposure}")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::Domain(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let pixels = if noise_sigma == 0.0 {
        h.pixels().map(|v| response.encode(v * exposure))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma).expect("sigma validated");
        let data = h
            .pixels()
            .data()
            .iter()
            .map(|&v| response.encode(v * exposure + normal.sample(&mut rng)))
            .collect();
        Tensor::from_vec(h.pixels().shape(), data)?
    };
    LdrFrame::new(pixels, exposure)
}

/// Invert the camera response and exposure: `h = y^gamma / e`.
pub fn linearize_ldr(y: &LdrFrame, response: &CameraResponse) -> LinearHdrFrame {
    let e = y.exposure();
    let pixels = y.pixels().map(|v| response.decode(v) / e);
    LinearHdrFrame::new(pixels).expect("decoded LDR values are non-negative")
}

/// Low/mid/high exposure multipliers `2^-s, 1, 2^s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExposureSet {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl ExposureSet {
    pub fn from_stops(stops: f64) -> Self {
        Self {
            low: 2f64.powf(-stops),
            mid: 1.0,
            high: 2f64.powf(stops),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.low > 0.0 && self.low < self.mid && self.mid < self.high) {
            return Err(Error::Argument(format!(
                "exposures must be positive and strictly increasing, got {:?}",
                self
            )));
        }
        Ok(())
    }
}

impl Default for ExposureSet {
    fn default() -> Self {
        Self::from_stops(2.0)
    }
}

/// Per-exposure Gaussian noise std in the linear domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseLevels {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl NoiseLevels {
    pub fn none() -> Self {
        Self {
            low: 0.0,
            mid: 0.0,
            high: 0.0,
        }
    }
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            low: 0.03,
            mid: 0.01,
            high: 0.005,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tone_map_endpoints() {
        let p = ToneMapParams::default();
        assert_eq!(tone_map_value(0.0, &p).unwrap(), 0.0);
        assert!((tone_map_value(1.0, &p).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tone_map_half() {
        // ln(2501) / ln(5001) evaluated independently.
        let expected = 2501f64.ln() / 5001f64.ln();
        let got = tone_map_value(0.5, &ToneMapParams::default()).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert!((got - 0.9186).abs() < 5e-5);
    }

    #[test]
    fn tone_map_rejects_negative() {
        assert!(tone_map_value(-1e-3, &ToneMapParams::default()).is_err());
        assert!(ToneMapParams::new(0.0).is_err());
    }

    #[test]
    fn tone_map_inverse() {
        let p = ToneMapParams::default();
        for x in [0.0, 1e-4, 0.3, 1.0, 7.5] {
            assert!((p.inverse(p.curve(x)) - x).abs() < 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn exposure_examples() {
        let r = CameraResponse::default();
        let zero = simulate_exposure(&LinearHdrFrame::constant(4, 4, 0.0), 3.0, &r, 0.0, 1).unwrap();
        assert!(zero.pixels().data().iter().all(|&v| v == 0.0));
        let one = simulate_exposure(&LinearHdrFrame::constant(4, 4, 1.0), 1.0, &r, 0.0, 1).unwrap();
        assert!(one.pixels().data().iter().all(|&v| v == 1.0));
        let q = simulate_exposure(&LinearHdrFrame::constant(4, 4, 0.25), 1.0, &r, 0.0, 1).unwrap();
        let expected = 0.25f64.powf(1.0 / 2.2);
        assert!((expected - 0.5326).abs() < 1e-4);
        assert!(q.pixels().data().iter().all(|&v| (v - expected).abs() < 1e-15));
    }

    #[test]
    fn linearize_examples() {
        let r = CameraResponse::default();
        let y0 = LdrFrame::new(Tensor::zeros(&[3, 2, 2]), 1.0).unwrap();
        assert!(linearize_ldr(&y0, &r).pixels().data().iter().all(|&v| v == 0.0));
        let y1 = LdrFrame::new(Tensor::full(&[3, 2, 2], 1.0), 1.0).unwrap();
        assert!(linearize_ldr(&y1, &r).pixels().data().iter().all(|&v| v == 1.0));
        let y = simulate_exposure(&LinearHdrFrame::constant(2, 2, 0.25), 1.0, &r, 0.0, 0).unwrap();
        assert!(linearize_ldr(&y, &r).pixels().data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let h = LinearHdrFrame::new(Tensor::from_vec(&[3, 2, 4], (0..24).map(|i| i as f64 / 20.0).collect()).unwrap()).unwrap();
        let r = CameraResponse::default();
        let a = simulate_exposure(&h, 1.0, &r, 0.05, 42).unwrap();
        let b = simulate_exposure(&h, 1.0, &r, 0.05, 42).unwrap();
        let c = simulate_exposure(&h, 1.0, &r, 0.05, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn exposure_defaults() {
        let e = ExposureSet::default();
        assert_eq!((e.low, e.mid, e.high), (0.25, 1.0, 4.0));
        assert!(e.validate().is_ok());
        assert!(ExposureSet { low: 1.0, mid: 1.0, high: 2.0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn tone_map_strictly_monotone(a in 0.0f64..100.0, b in 0.0f64..100.0, kappa in 0.01f64..1e5) {
            prop_assume!(a != b);
            let p = ToneMapParams::new(kappa).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(p.curve(lo) < p.curve(hi));
        }

        #[test]
        fn roundtrip_unclipped_f64(h in 0.0f64..0.999, e in 0.1f64..1.0) {
            let r = CameraResponse::default();
            prop_assume!(h * e < 1.0);
            let back = r.decode(r.encode(h * e)) / e;
            prop_assert!((back - h).abs() < 1e-12);
        }

        #[test]
        fn roundtrip_unclipped_f32(h in 0.0f32..0.999) {
            let r = CameraResponse::default();
            let back = r.decode(r.encode(h));
            prop_assert!((back - h).abs() < 1e-6);
        }
    }
}
