//! The parallel value decoder.
//!
//! Pass 1 forwards every prompt's full layout and samples the first token of
//! every slot from the logit row at its anchor. Each later pass forwards only
//! the previous pass's surviving value tokens, at their gap positions, against
//! the whole cache. Slots leave the query set when they sample the delimiter
//! or fill their gap; decoding ends when no slot in the batch is active.

use std::sync::Arc;
use std::time::Instant;

use super::{is_delim_only, DecodeConfig, DecodeTrace, ExtractedValue, ExtractionResult, Sampler};
use crate::error::{contract, Result};
use crate::masks::inference_mask;
use crate::model::{Backend, ForwardStep, KvCache, Logits, QueryTag};
use crate::scheduler::{advance, pad_batch, PaddedBatch, SlotState, StackedPrompt, ValueSlot};
use crate::tokenizer::TokenId;

struct Row {
    prompt: StackedPrompt,
    cache: KvCache,
    slots: Vec<ValueSlot>,
    doc_ids: Vec<Arc<str>>,
    attributes: Vec<Arc<str>>,
}

impl Row {
    fn tag(&self, slot: &ValueSlot) -> QueryTag {
        QueryTag::Slot {
            doc_id: self.doc_ids[slot.doc_index].clone(),
            attribute: self.attributes[slot.attr_index].clone(),
            prefix: slot.emitted.clone(),
        }
    }
}

/// A batch of stacked prompts being decoded together. Each prompt owns its cache.
pub struct HpdSession<'b, B: Backend + ?Sized> {
    backend: &'b B,
    rows: Vec<Row>,
    sampler: Sampler,
    trace: DecodeTrace,
    last_queries: Vec<usize>,
}

impl<'b, B: Backend + ?Sized> HpdSession<'b, B> {
    pub fn new(backend: &'b B, prompts: &[StackedPrompt], config: &DecodeConfig) -> Result<Self> {
        if prompts.is_empty() {
            return Err(contract!("batch needs at least one prompt"));
        }
        let mut rows = Vec::with_capacity(prompts.len());
        for p in prompts {
            if p.layout.slots().is_empty() {
                return Err(contract!("prompt has no value slots"));
            }
            if p.k_max() != config.k_max {
                return Err(contract!(
                    "prompt planned with k_max {} but decode uses {}",
                    p.k_max(),
                    config.k_max
                ));
            }
            rows.push(Row {
                prompt: p.clone(),
                cache: backend.new_cache(),
                slots: p.new_slots(),
                doc_ids: p.layout.doc_ids().iter().map(|s| Arc::from(s.as_str())).collect(),
                attributes: p.layout.attributes().iter().map(|s| Arc::from(s.as_str())).collect(),
            });
        }
        Ok(Self {
            backend,
            rows,
            sampler: Sampler::new(config.sampling, config.seed)?,
            trace: DecodeTrace::default(),
            last_queries: Vec::new(),
        })
    }

    pub fn is_prefilled(&self) -> bool {
        self.trace.forward_passes > 0
    }

    pub fn is_done(&self) -> bool {
        self.is_prefilled() && self.rows.iter().all(|r| r.slots.iter().all(|s| !s.is_active()))
    }

    pub fn trace(&self) -> &DecodeTrace {
        &self.trace
    }

    pub fn slots(&self, row: usize) -> &[ValueSlot] {
        &self.rows[row].slots
    }

    pub fn cache(&self, row: usize) -> &KvCache {
        &self.rows[row].cache
    }

    /// Direct cache access for fault-injection tests.
    #[doc(hidden)]
    pub fn cache_mut(&mut self, row: usize) -> &mut KvCache {
        &mut self.rows[row].cache
    }

    /// Query tokens submitted per prompt on the most recent pass (padding excluded).
    pub fn last_query_counts(&self) -> &[usize] {
        &self.last_queries
    }

    /// Forwards one padded batch. `queries[r]` lists (logit row, slot index)
    /// pairs to sample for prompt `r`. Returns the sampled tokens per prompt.
    fn run_pass(&mut self, batch: &PaddedBatch, tags: Vec<Vec<QueryTag>>, queries: &[Vec<(usize, usize)>]) -> Result<Vec<Vec<TokenId>>> {
        let mut logits: Vec<Logits> = Vec::with_capacity(self.rows.len());
        for (r, row) in self.rows.iter_mut().enumerate() {
            let cached = row.cache.len();
            let mut key_positions = row.cache.positions().to_vec();
            key_positions.extend_from_slice(&batch.positions[r]);
            let mut key_live = row.cache.live().to_vec();
            key_live.extend(batch.is_pad[r].iter().map(|&p| !p));
            let mut mask = inference_mask(&batch.positions[r], &key_positions, &key_live);
            for (i, &pad) in batch.is_pad[r].iter().enumerate() {
                if pad {
                    mask.set(i, cached + i, true);
                }
            }
            let step = ForwardStep::new(&batch.tokens[r], &batch.positions[r], &mask)
                .with_tags(&tags[r])
                .with_padding(&batch.is_pad[r]);
            logits.push(self.backend.forward(&step, &mut row.cache)?);
        }

        let mut sampled = Vec::with_capacity(self.rows.len());
        for (r, rows) in queries.iter().enumerate() {
            let mut tokens = Vec::with_capacity(rows.len());
            for &(logit_row, _) in rows {
                tokens.push(self.sampler.sample(logits[r].row(logit_row))?);
            }
            sampled.push(tokens);
        }

        let emitted: usize = sampled.iter().map(Vec::len).sum();
        self.trace.forward_passes += 1;
        self.trace.tokens_emitted_per_pass.push(emitted);
        if !sampled.iter().all(|s| is_delim_only(s)) {
            self.trace.steps_excluding_delimiter += 1;
        }
        self.trace.peak_cache_entries = self.rows.iter().map(|r| r.cache.len()).sum();
        self.last_queries = queries.iter().map(Vec::len).collect();
        Ok(sampled)
    }

    /// Pass 1: the whole layout of every prompt; one token per slot from its anchor row.
    pub fn prefill(&mut self) -> Result<Vec<Vec<TokenId>>> {
        if self.is_prefilled() {
            return Err(contract!("prefill runs once, on an empty cache"));
        }
        if self.rows.iter().any(|r| !r.cache.is_empty()) {
            return Err(contract!("prefill needs an empty cache"));
        }
        let items: Vec<Vec<(TokenId, usize)>> = self
            .rows
            .iter()
            .map(|r| {
                r.prompt
                    .layout
                    .tokens()
                    .iter()
                    .copied()
                    .zip(r.prompt.plan.position_ids.iter().copied())
                    .collect()
            })
            .collect();
        let batch = pad_batch(&items);
        let mut tags = Vec::with_capacity(self.rows.len());
        let mut queries = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let mut row_tags = vec![QueryTag::None; batch.width];
            for slot in &r.slots {
                row_tags[slot.anchor] = r.tag(slot);
            }
            tags.push(row_tags);
            queries.push(r.slots.iter().enumerate().map(|(i, s)| (s.anchor, i)).collect::<Vec<_>>());
        }
        let sampled = self.run_pass(&batch, tags, &queries)?;
        for (row, tokens) in self.rows.iter_mut().zip(&sampled) {
            advance(&mut row.slots, tokens)?;
        }
        Ok(sampled)
    }

    /// One later pass. Returns `false` (and forwards nothing) once no slot is active.
    pub fn step(&mut self) -> Result<bool> {
        if !self.is_prefilled() {
            return Err(contract!("step before prefill"));
        }
        if self.is_done() {
            return Ok(false);
        }
        let mut items = Vec::with_capacity(self.rows.len());
        let mut tags = Vec::with_capacity(self.rows.len());
        let mut queries = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let mut row_items = Vec::new();
            let mut row_tags = Vec::new();
            let mut row_queries = Vec::new();
            for (i, slot) in r.slots.iter().enumerate().filter(|(_, s)| s.is_active()) {
                let last = *slot.emitted.last().ok_or_else(|| contract!("active slot without a token"))?;
                let position = slot.last_position().expect("non-empty");
                row_queries.push((row_items.len(), i));
                row_items.push((last, position));
                row_tags.push(r.tag(slot));
            }
            items.push(row_items);
            tags.push(row_tags);
            queries.push(row_queries);
        }
        let batch = pad_batch(&items);
        for t in tags.iter_mut() {
            t.resize(batch.width, QueryTag::None);
        }
        let sampled = self.run_pass(&batch, tags, &queries)?;
        for (row, tokens) in self.rows.iter_mut().zip(&sampled) {
            advance(&mut row.slots, tokens)?;
        }
        Ok(true)
    }

    /// Runs every remaining pass.
    pub fn run(&mut self) -> Result<()> {
        let started = Instant::now();
        if !self.is_prefilled() {
            self.prefill()?;
        }
        while self.step()? {}
        self.trace.wall_clock += started.elapsed();
        Ok(())
    }

    pub fn results(&self) -> Vec<ExtractionResult> {
        self.rows
            .iter()
            .map(|r| ExtractionResult {
                values: r
                    .slots
                    .iter()
                    .map(|s| ExtractedValue {
                        doc_id: r.doc_ids[s.doc_index].to_string(),
                        attribute: r.attributes[s.attr_index].to_string(),
                        tokens: s.emitted.clone(),
                        truncated: s.state == SlotState::Truncated,
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Decodes a batch of stacked prompts to completion.
pub fn hpd_decode<B: Backend + ?Sized>(
    backend: &B,
    prompts: &[StackedPrompt],
    config: &DecodeConfig,
) -> Result<(Vec<ExtractionResult>, DecodeTrace)> {
    let mut session = HpdSession::new(backend, prompts, config)?;
    session.run()?;
    Ok((session.results(), session.trace.clone()))
}
