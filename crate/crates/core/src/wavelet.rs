//! Single-level orthonormal 2-D Haar transform.
//!
//! For every 2x2 block `[[a, b], [c, d]]` the analysis step produces
//!
//! ```text
//! ll = (a + b + c + d) / 2
//! lh = (a + b - c - d) / 2   vertical detail: top rows minus bottom rows
//! hl = (a - b + c - d) / 2   horizontal detail: left column minus right column
//! hh = (a - b - c + d) / 2
//! ```
//!
//! The basis is orthonormal, so synthesis is the transpose of analysis and
//! the sum of squares is preserved.

use num_traits::Float;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Channel-first grid of samples, `[channels, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<F> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<F>,
}

impl<F: Float> Grid<F> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != channels * height * width {
            return shape_err(format!(
                "grid {channels}x{height}x{width} needs {} samples, got {}",
                channels * height * width,
                data.len()
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![F::zero(); channels * height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn energy(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, &v| acc + v * v)
    }
}

impl Grid<f64> {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.dims3()?;
        Self::new(c, h, w, t.data().to_vec())
    }

    pub fn into_tensor(self) -> Tensor {
        Tensor::from_vec(&[self.channels, self.height, self.width], self.data)
            .expect("grid dimensions are consistent")
    }
}

/// The four half-resolution subbands of one decomposition level.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet<F> {
    pub ll: Grid<F>,
    pub lh: Grid<F>,
    pub hl: Grid<F>,
    pub hh: Grid<F>,
}

impl<F: Float> SubbandSet<F> {
    pub fn energy(&self) -> F {
        self.ll.energy() + self.lh.energy() + self.hl.energy() + self.hh.energy()
    }
}

fn half<F: Float>() -> F {
    F::from(0.5).unwrap()
}

/// Analysis on raw channel-first samples. `dst` receives the four subbands
/// stacked along the channel axis as `[ll, lh, hl, hh]`, each `channels` deep.
pub fn dwt_packed<F: Float>(src: &[F], channels: usize, height: usize, width: usize, dst: &mut [F]) {
    let (h2, w2) = (height / 2, width / 2);
    let band = channels * h2 * w2;
    let s = half::<F>();
    for c in 0..channels {
        let plane = &src[c * height * width..(c + 1) * height * width];
        for y in 0..h2 {
            let top = &plane[2 * y * width..(2 * y + 1) * width];
            let bot = &plane[(2 * y + 1) * width..(2 * y + 2) * width];
            for x in 0..w2 {
                let (a, b) = (top[2 * x], top[2 * x + 1]);
                let (cc, d) = (bot[2 * x], bot[2 * x + 1]);
                let o = c * h2 * w2 + y * w2 + x;
                dst[o] = (a + b + cc + d) * s;
                dst[band + o] = (a + b - cc - d) * s;
                dst[2 * band + o] = (a - b + cc - d) * s;
                dst[3 * band + o] = (a - b - cc + d) * s;
            }
        }
    }
}

/// Synthesis from the packed `[ll, lh, hl, hh]` layout of [`dwt_packed`].
/// `height` and `width` are the full-resolution output dimensions.
pub fn idwt_packed<F: Float>(src: &[F], channels: usize, height: usize, width: usize, dst: &mut [F]) {
    let (h2, w2) = (height / 2, width / 2);
    let band = channels * h2 * w2;
    let s = half::<F>();
    for c in 0..channels {
        for y in 0..h2 {
            for x in 0..w2 {
                let o = c * h2 * w2 + y * w2 + x;
                let (ll, lh, hl, hh) = (src[o], src[band + o], src[2 * band + o], src[3 * band + o]);
                let base = c * height * width + 2 * y * width + 2 * x;
                dst[base] = (ll + lh + hl + hh) * s;
                dst[base + 1] = (ll + lh - hl - hh) * s;
                dst[base + width] = (ll - lh + hl - hh) * s;
                dst[base + width + 1] = (ll - lh - hl + hh) * s;
            }
        }
    }
}

pub fn dwt_haar<F: Float>(f: &Grid<F>) -> Result<SubbandSet<F>> {
    let (c, h, w) = f.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return shape_err(format!("DWT needs even height and width, got {h}x{w}"));
    }
    let (h2, w2) = (h / 2, w / 2);
    let band = c * h2 * w2;
    let mut packed = vec![F::zero(); 4 * band];
    dwt_packed(&f.data, c, h, w, &mut packed);
    let take = |i: usize| Grid {
        channels: c,
        height: h2,
        width: w2,
        data: packed[i * band..(i + 1) * band].to_vec(),
    };
    Ok(SubbandSet {
        ll: take(0),
        lh: take(1),
        hl: take(2),
        hh: take(3),
    })
}

pub fn idwt_haar<F: Float>(s: &SubbandSet<F>) -> Result<Grid<F>> {
    let dims = s.ll.dims();
    if s.lh.dims() != dims || s.hl.dims() != dims || s.hh.dims() != dims {
        return shape_err(format!(
            "subband shapes differ: ll {:?}, lh {:?}, hl {:?}, hh {:?}",
            dims,
            s.lh.dims(),
            s.hl.dims(),
            s.hh.dims()
        ));
    }
    let (c, h2, w2) = dims;
    let mut packed = Vec::with_capacity(4 * c * h2 * w2);
    for band in [&s.ll, &s.lh, &s.hl, &s.hh] {
        packed.extend_from_slice(&band.data);
    }
    let mut out = Grid::zeros(c, 2 * h2, 2 * w2);
    idwt_packed(&packed, c, 2 * h2, 2 * w2, &mut out.data);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_grid_goes_to_ll() {
        let f = Grid::new(2, 4, 6, vec![0.75f64; 48]).unwrap();
        let s = dwt_haar(&f).unwrap();
        assert!(s.ll.data.iter().all(|&v| v == 1.5));
        for band in [&s.lh, &s.hl, &s.hh] {
            assert!(band.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_grid() {
        let s = dwt_haar(&Grid::<f64>::zeros(3, 2, 2)).unwrap();
        assert_eq!(s.energy(), 0.0);
        let back = idwt_haar(&s).unwrap();
        assert!(back.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_impulse_block() {
        // Hand computation: a = 1, b = c = d = 0 gives 1/2 in every band.
        let f = Grid::new(1, 2, 2, vec![1.0f64, 0.0, 0.0, 0.0]).unwrap();
        let s = dwt_haar(&f).unwrap();
        assert_eq!(s.ll.data, vec![0.5]);
        assert_eq!(s.lh.data, vec![0.5]);
        assert_eq!(s.hl.data, vec![0.5]);
        assert_eq!(s.hh.data, vec![0.5]);
    }

    #[test]
    fn sign_convention() {
        // Bright top row: vertical detail only.
        let s = dwt_haar(&Grid::new(1, 2, 2, vec![1.0f64, 1.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!((s.lh.data[0], s.hl.data[0], s.hh.data[0]), (1.0, 0.0, 0.0));
        // Bright left column: horizontal detail only.
        let s = dwt_haar(&Grid::new(1, 2, 2, vec![1.0f64, 0.0, 1.0, 0.0]).unwrap()).unwrap();
        assert_eq!((s.lh.data[0], s.hl.data[0], s.hh.data[0]), (0.0, 1.0, 0.0));
    }

    #[test]
    fn ll_only_inverts_to_constant() {
        let mut s = dwt_haar(&Grid::<f64>::zeros(2, 4, 4)).unwrap();
        s.ll.data.iter_mut().for_each(|v| *v = 2.0 * 0.3);
        let f = idwt_haar(&s).unwrap();
        assert!(f.data.iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn odd_dimensions_rejected() {
        assert!(dwt_haar(&Grid::<f64>::zeros(1, 3, 4)).is_err());
        assert!(dwt_haar(&Grid::<f64>::zeros(1, 4, 5)).is_err());
    }

    #[test]
    fn mismatched_subbands_rejected() {
        let mut s = dwt_haar(&Grid::<f64>::zeros(1, 4, 4)).unwrap();
        s.hh = Grid::zeros(1, 1, 2);
        assert!(idwt_haar(&s).is_err());
    }

    fn grid_strategy() -> impl Strategy<Value = Grid<f64>> {
        (1usize..4, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| {
            proptest::collection::vec(-10.0f64..10.0, c * 4 * h * w)
                .prop_map(move |data| Grid::new(c, 2 * h, 2 * w, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn perfect_reconstruction(f in grid_strategy()) {
            let back = idwt_haar(&dwt_haar(&f).unwrap()).unwrap();
            let err = f.data.iter().zip(&back.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-12);
        }

        #[test]
        fn parseval(f in grid_strategy()) {
            let e_in = f.energy();
            let e_out = dwt_haar(&f).unwrap().energy();
            prop_assert!((e_in - e_out).abs() <= 1e-12 * e_in.max(1.0));
        }

        #[test]
        fn linearity(f in grid_strategy(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let g = Grid::new(f.channels, f.height, f.width,
                f.data.iter().map(|v| (v * 1.7).sin()).collect()).unwrap();
            let mix = Grid::new(f.channels, f.height, f.width,
                f.data.iter().zip(&g.data).map(|(x, y)| a * x + b * y).collect()).unwrap();
            let (sf, sg, sm) = (dwt_haar(&f).unwrap(), dwt_haar(&g).unwrap(), dwt_haar(&mix).unwrap());
            for (bf, bg, bm) in [(&sf.ll, &sg.ll, &sm.ll), (&sf.lh, &sg.lh, &sm.lh),
                                 (&sf.hl, &sg.hl, &sm.hl), (&sf.hh, &sg.hh, &sm.hh)] {
                for i in 0..bm.data.len() {
                    prop_assert!((a * bf.data[i] + b * bg.data[i] - bm.data[i]).abs() < 1e-6);
                }
            }
        }
    }
}
