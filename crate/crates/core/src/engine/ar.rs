//! Autoregressive baseline: contiguous positions, plain causal masking,
//! one token per prompt per forward pass.

use std::sync::Arc;
use std::time::Instant;

use super::{DecodeConfig, DecodeTrace, Sampler};
use crate::error::{contract, Result};
use crate::masks::inference_mask;
use crate::model::{Backend, ForwardStep, OutputRequest, QueryTag};
use crate::scheduler::{pad_batch, AttributeSet, Document, Template};
use crate::tokenizer::{tokenize, TokenId, TokenSeq};

#[derive(Debug, Clone, PartialEq)]
pub struct ArRequest {
    pub prompt: TokenSeq,
    /// Generation stops right after the output ends with this sequence.
    pub stop: TokenSeq,
    pub max_new_tokens: usize,
    /// What the output is expected to cover; only the scripted backend reads it.
    pub context: Option<Arc<OutputRequest>>,
}

impl ArRequest {
    /// Structured-output request for documents of one category. Stops at the
    /// template's end marker or at the configured token cap.
    pub fn for_documents(
        template: &Template,
        instruction: &str,
        docs: &[Document],
        attrs: &AttributeSet,
        config: &DecodeConfig,
    ) -> Result<Self> {
        let doc_ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
        let skeleton = template.render_output(&doc_ids, attrs.names(), |_, _| None).len();
        Ok(Self {
            prompt: template.build_prompt(instruction, docs, attrs)?,
            stop: tokenize(template.end_marker().as_bytes()),
            max_new_tokens: config.ar_token_cap(skeleton, docs.len(), attrs.len()),
            context: Some(Arc::new(OutputRequest {
                doc_ids,
                attributes: attrs.names().to_vec(),
            })),
        })
    }

    fn tag(&self, generated: &[TokenId]) -> QueryTag {
        match &self.context {
            Some(request) => QueryTag::Output {
                request: request.clone(),
                generated: generated.to_vec(),
            },
            None => QueryTag::None,
        }
    }

    fn finished(&self, generated: &[TokenId]) -> bool {
        generated.len() >= self.max_new_tokens || (!self.stop.is_empty() && generated.ends_with(&self.stop))
    }
}

pub fn ar_decode<B: Backend + ?Sized>(backend: &B, request: &ArRequest, config: &DecodeConfig) -> Result<(TokenSeq, DecodeTrace)> {
    let (mut outputs, trace) = ar_decode_batch(backend, std::slice::from_ref(request), config)?;
    Ok((outputs.pop().expect("one request"), trace))
}

/// Decodes several prompts together, right-padding ragged rows.
pub fn ar_decode_batch<B: Backend + ?Sized>(
    backend: &B,
    requests: &[ArRequest],
    config: &DecodeConfig,
) -> Result<(Vec<TokenSeq>, DecodeTrace)> {
    if requests.is_empty() {
        return Err(contract!("batch needs at least one prompt"));
    }
    if let Some(r) = requests.iter().find(|r| r.prompt.is_empty()) {
        return Err(contract!("empty prompt ({} stop tokens)", r.stop.len()));
    }
    let started = Instant::now();
    let mut sampler = Sampler::new(config.sampling, config.seed)?;
    let mut caches: Vec<_> = requests.iter().map(|_| backend.new_cache()).collect();
    let mut outputs: Vec<TokenSeq> = vec![Vec::new(); requests.len()];
    let mut trace = DecodeTrace::default();

    // Each row: (token, position) items for this pass, and the logit row to sample.
    let mut items: Vec<Vec<(TokenId, usize)>> = requests
        .iter()
        .map(|r| r.prompt.iter().copied().zip(0..).collect())
        .collect();
    let mut sample_rows: Vec<Option<usize>> = requests
        .iter()
        .map(|r| (r.max_new_tokens > 0).then(|| r.prompt.len() - 1))
        .collect();

    loop {
        let batch = pad_batch(&items);
        let mut emitted = 0;
        let mut next_items = Vec::with_capacity(requests.len());
        let mut next_rows = Vec::with_capacity(requests.len());
        let mut forward_logits = Vec::with_capacity(requests.len());

        for (r, cache) in caches.iter_mut().enumerate() {
            let cached = cache.len();
            let mut key_positions = cache.positions().to_vec();
            key_positions.extend_from_slice(&batch.positions[r]);
            let mut live = cache.live().to_vec();
            live.extend(batch.is_pad[r].iter().map(|&p| !p));
            let mut mask = inference_mask(&batch.positions[r], &key_positions, &live);
            for (i, &pad) in batch.is_pad[r].iter().enumerate() {
                if pad {
                    mask.set(i, cached + i, true);
                }
            }
            let mut tags = vec![QueryTag::None; batch.width];
            if let Some(row) = sample_rows[r] {
                tags[row] = requests[r].tag(&outputs[r]);
            }
            let step = ForwardStep::new(&batch.tokens[r], &batch.positions[r], &mask)
                .with_tags(&tags)
                .with_padding(&batch.is_pad[r]);
            forward_logits.push(backend.forward(&step, cache)?);
        }

        for (r, logits) in forward_logits.iter().enumerate() {
            match sample_rows[r] {
                Some(row) => {
                    let token = sampler.sample(logits.row(row))?;
                    outputs[r].push(token);
                    emitted += 1;
                    if requests[r].finished(&outputs[r]) {
                        next_items.push(Vec::new());
                        next_rows.push(None);
                    } else {
                        let position = requests[r].prompt.len() + outputs[r].len() - 1;
                        next_items.push(vec![(token, position)]);
                        next_rows.push(Some(0));
                    }
                }
                None => {
                    next_items.push(Vec::new());
                    next_rows.push(None);
                }
            }
        }

        trace.forward_passes += 1;
        trace.tokens_emitted_per_pass.push(emitted);
        trace.steps_excluding_delimiter += 1;
        trace.peak_cache_entries = caches.iter().map(|c| c.len()).sum();

        if next_rows.iter().all(Option::is_none) {
            break;
        }
        items = next_items;
        sample_rows = next_rows;
    }
    trace.wall_clock = started.elapsed();
    Ok((outputs, trace))
}
