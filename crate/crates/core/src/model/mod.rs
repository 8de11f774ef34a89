//! Model core: configuration, the [`Backend`] trait, attention masks,
//! the append-only KV cache and two backends.
//!
//! Every backend takes explicit position IDs and an arbitrary boolean
//! attention mask per forward call. Memory order and logical order are
//! decoupled: the cache only ever grows at the end, while the position IDs
//! carried by each entry drive rotary embeddings and masking.

mod cache;
mod early_stop;
mod scripted;
mod tiny;

use std::sync::Arc;

pub use cache::KvCache;
pub use early_stop::EarlyStop;
pub use scripted::{ScriptedBackend, ScriptedCompute, ValueScript, SCRIPT_LOGIT};
pub use tiny::TinyModel;

use crate::error::{capacity, contract, HpdError, Result};
use crate::tokenizer::{TokenId, TokenSeq, MIN_VOCAB};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub rope_base: f64,
    pub max_position: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Four layers, width 64, four heads, byte vocabulary, 8192 positions.
    pub fn toy(seed: u64) -> Self {
        Self {
            vocab_size: MIN_VOCAB,
            num_layers: 4,
            hidden_dim: 64,
            num_heads: 4,
            head_dim: 16,
            rope_base: 10_000.0,
            max_position: 8192,
            seed,
        }
    }

    /// Sets the width and head count, deriving the head dimension.
    pub fn with_width(mut self, hidden_dim: usize, num_heads: usize) -> Result<Self> {
        if num_heads == 0 || hidden_dim % num_heads != 0 {
            return Err(HpdError::Config(format!(
                "hidden_dim {hidden_dim} is not divisible by num_heads {num_heads}"
            )));
        }
        self.hidden_dim = hidden_dim;
        self.num_heads = num_heads;
        self.head_dim = hidden_dim / num_heads;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HpdError::Config(msg));
        if self.num_heads == 0 || self.head_dim == 0 {
            return fail("num_heads and head_dim must be positive".into());
        }
        if self.hidden_dim != self.num_heads * self.head_dim {
            return fail(format!(
                "hidden_dim {} != num_heads {} x head_dim {}",
                self.hidden_dim, self.num_heads, self.head_dim
            ));
        }
        if self.head_dim % 2 != 0 {
            return fail(format!("head_dim {} must be even for rotary pairs", self.head_dim));
        }
        if self.vocab_size < MIN_VOCAB {
            return fail(format!("vocab_size {} < {MIN_VOCAB}", self.vocab_size));
        }
        if self.num_layers == 0 {
            return fail("num_layers must be positive".into());
        }
        if !(self.rope_base.is_finite() && self.rope_base > 1.0) {
            return fail(format!("rope_base {} must be a finite value > 1", self.rope_base));
        }
        if self.max_position == 0 {
            return fail("max_position must be positive".into());
        }
        Ok(())
    }
}

/// Boolean attention relation between the queries of one forward call and
/// all keys visible to it: the cache entries in memory order followed by
/// the call's own tokens.
#[derive(Clone, PartialEq, Eq)]
pub struct AttentionMask {
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Everything blocked.
    pub fn blocked(queries: usize, keys: usize) -> Self {
        Self {
            queries,
            keys,
            allowed: vec![false; queries * keys],
        }
    }

    pub fn from_fn(queries: usize, keys: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(queries * keys);
        for q in 0..queries {
            for k in 0..keys {
                allowed.push(f(q, k));
            }
        }
        Self {
            queries,
            keys,
            allowed,
        }
    }

    /// Plain causal mask for `queries` new tokens on top of `cached` entries.
    pub fn causal(cached: usize, queries: usize) -> Self {
        Self::from_fn(queries, cached + queries, |q, k| k <= cached + q)
    }

    pub fn num_queries(&self) -> usize {
        self.queries
    }

    pub fn num_keys(&self) -> usize {
        self.keys
    }

    #[inline]
    pub fn allowed(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.keys + key]
    }

    pub fn set(&mut self, query: usize, key: usize, allowed: bool) {
        self.allowed[query * self.keys + key] = allowed;
    }

    pub fn row(&self, query: usize) -> &[bool] {
        &self.allowed[query * self.keys..(query + 1) * self.keys]
    }

    /// Key indices a query may attend to, in key order.
    pub fn allowed_keys(&self, query: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(query)
            .iter()
            .enumerate()
            .filter_map(|(k, &a)| a.then_some(k))
    }

    /// Plain PBM (P1) rendering, one row per query, `1` where attention is allowed.
    pub fn to_pbm(&self) -> String {
        let mut out = format!("P1\n{} {}\n", self.keys, self.queries);
        for q in 0..self.queries {
            let row: Vec<&str> = self
                .row(q)
                .iter()
                .map(|&a| if a { "1" } else { "0" })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

impl std::fmt::Debug for AttentionMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "AttentionMask {}x{}", self.queries, self.keys)?;
        for q in 0..self.queries {
            let row: String = self.row(q).iter().map(|&a| if a { '#' } else { '.' }).collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

/// Raw next-token scores, one row per query token.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    vocab: usize,
    data: Vec<f32>,
}

impl Logits {
    pub fn zeros(rows: usize, vocab: usize) -> Self {
        Self {
            vocab,
            data: vec![0.0; rows * vocab],
        }
    }

    pub fn from_rows(vocab: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len() % vocab.max(1), 0, "ragged logits");
        Self { vocab, data }
    }

    pub fn num_rows(&self) -> usize {
        if self.vocab == 0 {
            0
        } else {
            self.data.len() / self.vocab
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.vocab.max(1))
    }
}

/// Decoding context attached to a query token. Learned backends ignore it;
/// the scripted backend uses it to look up the value it should emit.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum QueryTag {
    #[default]
    None,
    /// The row predicts the next token of one value slot.
    Slot {
        doc_id: Arc<str>,
        attribute: Arc<str>,
        prefix: TokenSeq,
    },
    /// The row predicts the next token of a free-running structured output.
    Output {
        request: Arc<OutputRequest>,
        generated: TokenSeq,
    },
}

/// The documents and attributes an autoregressive output is expected to cover.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputRequest {
    pub doc_ids: Vec<String>,
    pub attributes: Vec<String>,
}

/// One forward call: new tokens, their position IDs, the mask over
/// (cache + new) keys, and optional per-query tags.
#[derive(Debug, Clone, Copy)]
pub struct ForwardStep<'a> {
    pub tokens: &'a [TokenId],
    pub position_ids: &'a [usize],
    pub mask: &'a AttentionMask,
    /// Empty, or one tag per token.
    pub tags: &'a [QueryTag],
    /// Empty, or one flag per token marking batch padding. Padding entries
    /// are stored but never live as keys.
    pub padding: &'a [bool],
}

impl<'a> ForwardStep<'a> {
    pub fn new(tokens: &'a [TokenId], position_ids: &'a [usize], mask: &'a AttentionMask) -> Self {
        Self {
            tokens,
            position_ids,
            mask,
            tags: &[],
            padding: &[],
        }
    }

    pub fn with_tags(mut self, tags: &'a [QueryTag]) -> Self {
        self.tags = tags;
        self
    }

    pub fn with_padding(mut self, padding: &'a [bool]) -> Self {
        self.padding = padding;
        self
    }

    pub fn is_padding(&self, i: usize) -> bool {
        self.padding.get(i).copied().unwrap_or(false)
    }

    pub fn tag(&self, i: usize) -> &QueryTag {
        static NONE: QueryTag = QueryTag::None;
        self.tags.get(i).unwrap_or(&NONE)
    }

    /// Checks shapes and bounds against a cache before anything is mutated.
    pub fn validate(&self, cache: &KvCache, vocab_size: usize, max_position: usize) -> Result<()> {
        let n = self.tokens.len();
        if self.position_ids.len() != n {
            return Err(contract!(
                "{} tokens but {} position ids",
                n,
                self.position_ids.len()
            ));
        }
        if !self.tags.is_empty() && self.tags.len() != n {
            return Err(contract!("{} tokens but {} query tags", n, self.tags.len()));
        }
        if !self.padding.is_empty() && self.padding.len() != n {
            return Err(contract!("{} tokens but {} padding flags", n, self.padding.len()));
        }
        if self.mask.num_queries() != n || self.mask.num_keys() != cache.len() + n {
            return Err(contract!(
                "mask is {}x{}, expected {}x{}",
                self.mask.num_queries(),
                self.mask.num_keys(),
                n,
                cache.len() + n
            ));
        }
        if let Some(&p) = self.position_ids.iter().find(|&&p| p >= max_position) {
            return Err(capacity!("position id {p} >= max_position {max_position}"));
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(contract!("token {t} outside vocabulary of {vocab_size}"));
        }
        Ok(())
    }
}

/// A next-token model that honours explicit positions, masks and an append-only cache.
///
/// Implementations are immutable after construction and may be shared across
/// decode sessions; each session owns its caches.
pub trait Backend: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn max_position(&self) -> usize;

    fn new_cache(&self) -> KvCache;

    /// Appends one cache entry per new token (in order, with the given
    /// position IDs) and returns one logit row per new token.
    fn forward(&self, step: &ForwardStep<'_>, cache: &mut KvCache) -> Result<Logits>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn max_position(&self) -> usize {
        (**self).max_position()
    }
    fn new_cache(&self) -> KvCache {
        (**self).new_cache()
    }
    fn forward(&self, step: &ForwardStep<'_>, cache: &mut KvCache) -> Result<Logits> {
        (**self).forward(step, cache)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn max_position(&self) -> usize {
        (**self).max_position()
    }
    fn new_cache(&self) -> KvCache {
        (**self).new_cache()
    }
    fn forward(&self, step: &ForwardStep<'_>, cache: &mut KvCache) -> Result<Logits> {
        (**self).forward(step, cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_must_divide_into_heads() {
        let cfg = ModelConfig::toy(1).with_width(64, 4).unwrap();
        assert_eq!(cfg.head_dim, 16);
        assert!(matches!(
            ModelConfig::toy(1).with_width(65, 4),
            Err(HpdError::Config(_))
        ));
    }

    #[test]
    fn odd_head_dim_rejected() {
        let err = ModelConfig::toy(1).with_width(12, 4).unwrap_err();
        assert!(err.to_string().contains("even"), "{err}");
    }

    #[test]
    fn small_vocab_rejected() {
        let cfg = ModelConfig {
            vocab_size: 259,
            ..ModelConfig::toy(0)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn causal_mask_is_lower_triangular_with_offset() {
        let m = AttentionMask::causal(2, 3);
        assert_eq!(m.num_keys(), 5);
        for q in 0..3 {
            for k in 0..5 {
                assert_eq!(m.allowed(q, k), k <= 2 + q);
            }
        }
    }

    #[test]
    fn pbm_dump_has_header_and_rows() {
        let m = AttentionMask::causal(0, 2);
        assert_eq!(m.to_pbm(), "P1\n2 2\n1 0\n1 1\n");
    }
}
