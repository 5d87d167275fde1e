//! Latency-constrained, quantization-aware two-stage architecture search for
//! transformers built from identical encoder blocks.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`numerics`]: dense fp32 kernels, int8 quantization and the int8 linear kernel.
//! * [`transformer`]: the `(e, h, f)` architecture family, weights, submodel
//!   extraction, fp32/int8 forward passes and the checkpoint container.
//! * [`training`]: hand-written reverse-mode gradients, Adam, distillation and
//!   the weight-sharing supermodel training loop.
//! * [`latency`]: wall-clock benchmarking, latency datasets, the MLP latency
//!   predictor and regression/MAPE metrics.
//! * [`search`]: the architecture grid, latency narrowing and evolutionary search.
//! * [`pipeline`]: configuration, synthetic tasks and the stage commands used by
//!   the `speedlimit` binary.

pub mod error;
pub mod latency;
pub mod numerics;
pub mod pipeline;
pub mod search;
pub mod seed;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
