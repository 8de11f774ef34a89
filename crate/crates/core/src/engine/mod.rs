//! Decoding: the autoregressive baseline, the parallel value decoder and
//! the oracles that check it.

mod ar;
mod hpd;
mod oracle;
mod sample;

use std::time::Duration;

pub use ar::{ar_decode, ar_decode_batch, ArRequest};
pub use hpd::{hpd_decode, HpdSession};
pub use oracle::{oracle_full_recompute, oracle_independent};
pub use sample::{sample, Sampler};

use crate::tokenizer::{detokenize, TokenSeq, DELIM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Greedy,
    Temperature(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    /// Maximum value length and size of every position gap.
    pub k_max: usize,
    pub docs_per_prompt: usize,
    pub batch_size: usize,
    pub sampling: Sampling,
    pub seed: u64,
    /// Autoregressive safety cap; `None` means the empty output skeleton
    /// plus `k_max` tokens per value.
    pub max_new_tokens: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            k_max: 30,
            docs_per_prompt: 6,
            batch_size: 1,
            sampling: Sampling::Greedy,
            seed: 0,
            max_new_tokens: None,
        }
    }
}

impl DecodeConfig {
    /// Default autoregressive cap: the structure tokens of the output
    /// (`skeleton_tokens`) plus a full gap for every value.
    pub fn ar_token_cap(&self, skeleton_tokens: usize, docs: usize, attributes: usize) -> usize {
        self.max_new_tokens
            .unwrap_or(skeleton_tokens + docs * attributes * self.k_max)
    }
}

/// Counters for one decode run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeTrace {
    pub forward_passes: usize,
    /// Sampled tokens per pass, delimiters included, padding excluded.
    pub tokens_emitted_per_pass: Vec<usize>,
    /// Passes that produced at least one non-delimiter token.
    pub steps_excluding_delimiter: usize,
    pub wall_clock: Duration,
    pub peak_cache_entries: usize,
}

impl DecodeTrace {
    pub fn total_tokens(&self) -> usize {
        self.tokens_emitted_per_pass.iter().sum()
    }

    /// Folds another run into this one (sequential batches).
    pub fn absorb(&mut self, other: &DecodeTrace) {
        self.forward_passes += other.forward_passes;
        self.tokens_emitted_per_pass
            .extend_from_slice(&other.tokens_emitted_per_pass);
        self.steps_excluding_delimiter += other.steps_excluding_delimiter;
        self.wall_clock += other.wall_clock;
        self.peak_cache_entries = self.peak_cache_entries.max(other.peak_cache_entries);
    }
}

/// One decoded value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedValue {
    pub doc_id: String,
    pub attribute: String,
    /// Value tokens, delimiter excluded.
    pub tokens: TokenSeq,
    /// Hit `k_max` without a delimiter.
    pub truncated: bool,
}

impl ExtractedValue {
    pub fn bytes(&self) -> Vec<u8> {
        detokenize(&self.tokens)
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.bytes()).into_owned()
    }
}

/// Values for every (document, attribute) pair of one prompt, in slot order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractionResult {
    pub values: Vec<ExtractedValue>,
}

impl ExtractionResult {
    pub fn get(&self, doc_id: &str, attribute: &str) -> Option<&ExtractedValue> {
        self.values
            .iter()
            .find(|v| v.doc_id == doc_id && v.attribute == attribute)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub(crate) fn is_delim_only(tokens: &[u32]) -> bool {
    tokens.iter().all(|&t| t == DELIM)
}
