//! Bit-exact emulation of approximate multipliers over Q16.16 fixed point, a
//! pluggable-multiplier CNN executor, batch-normalization parameter
//! correction, and the error statistics that explain why inference tolerates
//! multiplier error.
//!
//! Modules:
//! - [`qformat`]: the fixed-point sample and lossless accumulator types.
//! - [`mulkit`]: the multiplier models and their selection grammar.
//! - [`nncore`]: tensors, the model graph, and the executor.
//! - [`errstat`]: multiplier characterization, dot-product error convergence,
//!   and per-layer/per-channel reports.
//! - [`modelio`]: manifests, weight blobs, datasets, and the BN adjustment.
//!
//! All randomized machinery is seeded and deterministic: pseudo-random
//! streams come from ChaCha8 keyed through SplitMix64, and every reduction
//! runs over fixed-size chunks merged in index order, so results are
//! bit-identical regardless of thread count.

pub mod errstat;
pub mod modelio;
pub mod mulkit;
pub mod nncore;
pub mod qformat;

pub use mulkit::{Multiplier, MultiplierKind, MultiplierSpec, PipelineMul, SignMode};
pub use nncore::{ModelGraph, Tensor};
pub use qformat::{ArithError, QAcc, QNum};
