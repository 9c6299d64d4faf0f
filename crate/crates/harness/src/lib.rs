//! Training, evaluation, inference and plotting around `hdrfuse-core`.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gendata;
pub mod infer;
pub mod optim;
pub mod plot;
pub mod train;
