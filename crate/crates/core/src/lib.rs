//! Two-stage HDR video reconstruction from a medium-exposure backbone and a
//! single low/high exposure anchor pair per window.
//!
//! Stage 1 fuses anchor cues into the backbone in the Haar LL band under
//! learned reliability gates; stage 2 adds a sequence-level residual computed
//! by bidirectional recurrent propagation and stacked RWKV blocks.

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod gradcheck;
pub mod imaging;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rwkv;
pub mod stage1;
pub mod stage2;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::Tensor;
