//! Procedural obstacle scenes for channel-flow datasets: sampling, tessellation,
//! signed-distance voxelization, resampling, solver-parameter policy,
//! campaign orchestration and stationarity diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod npy;
pub mod orchestrator;
pub mod pipeline;
pub mod resample;
pub mod sampling;
pub mod sdf;
pub mod simparams;
pub mod util;

pub use error::{Error, Result};

pub const TOOL_VERSION: &str = concat!("flowforge ", env!("CARGO_PKG_VERSION"));
