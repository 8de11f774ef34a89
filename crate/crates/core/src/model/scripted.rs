//! Scripted mock backends.
//!
//! [`ScriptedBackend`] answers from a table of planted values instead of
//! computing anything. It reads the [`QueryTag`] attached to each query row,
//! ignores the attention mask completely, and puts a single large logit on the
//! token the script says comes next. Untagged rows get all-zero logits.
//!
//! [`ScriptedCompute`] runs a real model for its cost and cache side effects
//! and then overwrites the tagged rows with the scripted answer, which gives
//! realistic wall-clock numbers with controlled output lengths.

use std::collections::HashMap;

use super::{Backend, ForwardStep, KvCache, Logits, QueryTag};
use crate::error::Result;
use crate::scheduler::Template;
use crate::tokenizer::{tokenize, TokenId, DELIM, MIN_VOCAB};

/// Logit given to the scripted token; every other entry is zero.
pub const SCRIPT_LOGIT: f32 = 30.0;

/// Planted values keyed by (document id, attribute name).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValueScript {
    values: HashMap<(String, String), String>,
}

impl ValueScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc_id: impl Into<String>, attribute: impl Into<String>, value: impl Into<String>) {
        self.values
            .insert((doc_id.into(), attribute.into()), value.into());
    }

    pub fn get(&self, doc_id: &str, attribute: &str) -> Option<&str> {
        self.values
            .get(&(doc_id.to_owned(), attribute.to_owned()))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Next token of the planted value after `prefix`, or DELIM once the value
    /// is exhausted or when no value is planted for the key.
    pub fn scripted_next(&self, doc_id: &str, attribute: &str, prefix: &[TokenId]) -> TokenId {
        self.get(doc_id, attribute)
            .and_then(|v| v.as_bytes().get(prefix.len()))
            .map_or(DELIM, |&b| b as TokenId)
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: ValueScript,
    template: Template,
    vocab_size: usize,
    max_position: usize,
}

impl ScriptedBackend {
    pub fn new(script: ValueScript, template: Template) -> Self {
        Self {
            script,
            template,
            vocab_size: MIN_VOCAB,
            max_position: 1 << 20,
        }
    }

    pub fn with_max_position(mut self, max_position: usize) -> Self {
        self.max_position = max_position;
        self
    }

    pub fn script(&self) -> &ValueScript {
        &self.script
    }

    /// The token this backend emits for a tagged query, if the row is tagged.
    pub fn answer(&self, tag: &QueryTag) -> Option<TokenId> {
        match tag {
            QueryTag::None => None,
            QueryTag::Slot {
                doc_id,
                attribute,
                prefix,
            } => Some(self.script.scripted_next(doc_id, attribute, prefix)),
            QueryTag::Output { request, generated } => {
                let target = self.template.render_output(&request.doc_ids, &request.attributes, |d, a| {
                    self.script.get(d, a).map(str::to_owned)
                });
                let target = tokenize(target.as_bytes());
                Some(target.get(generated.len()).copied().unwrap_or(DELIM))
            }
        }
    }

    fn overwrite(&self, step: &ForwardStep<'_>, logits: &mut Logits) {
        for i in 0..step.tokens.len() {
            if let Some(token) = self.answer(step.tag(i)) {
                let row = logits.row_mut(i);
                row.fill(0.0);
                row[token as usize] = SCRIPT_LOGIT;
            }
        }
    }
}

impl Backend for ScriptedBackend {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_position(&self) -> usize {
        self.max_position
    }

    fn new_cache(&self) -> KvCache {
        KvCache::new(0, 0)
    }

    fn forward(&self, step: &ForwardStep<'_>, cache: &mut KvCache) -> Result<Logits> {
        step.validate(cache, self.vocab_size, self.max_position)?;
        cache.push_entries(step);
        let mut logits = Logits::zeros(step.tokens.len(), self.vocab_size);
        self.overwrite(step, &mut logits);
        Ok(logits)
    }
}

/// A real model whose tagged rows are overridden by a script.
#[derive(Debug, Clone)]
pub struct ScriptedCompute<B> {
    inner: B,
    script: ScriptedBackend,
}

impl<B: Backend> ScriptedCompute<B> {
    pub fn new(inner: B, script: ValueScript, template: Template) -> Self {
        Self {
            inner,
            script: ScriptedBackend::new(script, template),
        }
    }
}

impl<B: Backend> Backend for ScriptedCompute<B> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn max_position(&self) -> usize {
        self.inner.max_position()
    }

    fn new_cache(&self) -> KvCache {
        self.inner.new_cache()
    }

    fn forward(&self, step: &ForwardStep<'_>, cache: &mut KvCache) -> Result<Logits> {
        let mut logits = self.inner.forward(step, cache)?;
        self.script.overwrite(step, &mut logits);
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::AttentionMask;

    fn script() -> ValueScript {
        let mut s = ValueScript::new();
        s.insert("tv-1", "Resolution", "4K");
        s
    }

    #[test]
    fn first_token_then_exhaustion() {
        let s = script();
        assert_eq!(s.scripted_next("tv-1", "Resolution", &[]), b'4' as TokenId);
        assert_eq!(s.scripted_next("tv-1", "Resolution", &tokenize(b"4")), b'K' as TokenId);
        assert_eq!(s.scripted_next("tv-1", "Resolution", &tokenize(b"4K")), DELIM);
    }

    #[test]
    fn unknown_attribute_yields_delim() {
        assert_eq!(script().scripted_next("tv-1", "Brand", &[]), DELIM);
        assert_eq!(script().scripted_next("tv-2", "Resolution", &[]), DELIM);
    }

    #[test]
    fn backend_ignores_mask_and_tags_rows() {
        let backend = ScriptedBackend::new(script(), Template::default());
        let mut cache = backend.new_cache();
        let tags = vec![
            QueryTag::None,
            QueryTag::Slot {
                doc_id: Arc::from("tv-1"),
                attribute: Arc::from("Resolution"),
                prefix: vec![],
            },
        ];
        // A mask that blocks everything except self would change a real model's
        // output; the script does not care.
        let mask = AttentionMask::from_fn(2, 2, |q, k| q == k);
        let logits = backend
            .forward(&ForwardStep::new(&[1, 2], &[0, 9], &mask).with_tags(&tags), &mut cache)
            .unwrap();
        assert!(logits.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(logits.row(1)[b'4' as usize], SCRIPT_LOGIT);
        assert_eq!(cache.positions(), &[0, 9]);
    }
}
