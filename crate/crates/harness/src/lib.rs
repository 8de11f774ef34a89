//! Datasets, synthetic corpora, output parsing, metrics, benchmarks and the
//! acceptance checks for `hpd-core`.

pub mod bench;
pub mod dataset;
mod error;
pub mod metrics;
pub mod parse;
pub mod pipeline;
pub mod synth;
pub mod verify;

pub use error::{HarnessError, Result};
