//! Decoder-only inference with hyper-parallel value decoding.
//!
//! Structured extraction outputs (one value per document and attribute) are
//! decoded as many short, parallel token streams inside a single prompt. The
//! prompt carries a skeleton output with empty value fields; position IDs
//! leave a fixed-size gap after every field; new value tokens are appended to
//! the KV cache and slotted into the gaps logically through their position IDs
//! and a position-ordered causal mask.
//!
//! Modules:
//! - [`model`]: the backend trait, a seeded toy transformer and a scripted mock.
//! - [`scheduler`]: prompt/skeleton construction, position plans, slot state, padding.
//! - [`masks`]: inference and fine-tuning masks and their equivalence check.
//! - [`engine`]: autoregressive and parallel decoders, sampling, oracles.

pub mod engine;
mod error;
pub mod masks;
pub mod model;
pub mod scheduler;
pub mod tokenizer;

pub use error::{HpdError, Result};
