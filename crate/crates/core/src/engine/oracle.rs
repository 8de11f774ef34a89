//! Cache-free reference decoders used to check [`super::hpd_decode`].

use std::sync::Arc;

use super::{DecodeConfig, ExtractedValue, ExtractionResult, Sampler, Sampling};
use crate::error::{contract, Result};
use crate::masks::{inference_mask, replay_mask};
use crate::model::{Backend, ForwardStep, QueryTag};
use crate::scheduler::{advance, SlotState, StackedPrompt};
use crate::tokenizer::{TokenSeq, DELIM};

fn require_greedy(config: &DecodeConfig) -> Result<()> {
    if config.sampling != Sampling::Greedy {
        return Err(contract!("oracles need greedy sampling"));
    }
    Ok(())
}

/// Replays parallel decoding without a KV cache.
///
/// Every pass re-forwards the whole memory-ordered sequence (layout, then the
/// generated tokens in the order the cached decoder appends them) from an
/// empty cache, under a mask that combines position-ID causality with the
/// pass each token was introduced in. Greedy output must match
/// [`super::hpd_decode`] token for token.
pub fn oracle_full_recompute<B: Backend + ?Sized>(
    backend: &B,
    stacked: &StackedPrompt,
    config: &DecodeConfig,
) -> Result<ExtractionResult> {
    require_greedy(config)?;
    let layout = &stacked.layout;
    let doc_ids: Vec<Arc<str>> = layout.doc_ids().iter().map(|s| Arc::from(s.as_str())).collect();
    let attributes: Vec<Arc<str>> = layout.attributes().iter().map(|s| Arc::from(s.as_str())).collect();
    let mut slots = stacked.new_slots();
    if slots.is_empty() {
        return Err(contract!("prompt has no value slots"));
    }
    let mut sampler = Sampler::new(Sampling::Greedy, config.seed)?;

    let mut tokens: TokenSeq = layout.tokens().to_vec();
    let mut positions = stacked.plan.position_ids.clone();
    let mut introduced = vec![0usize; tokens.len()];
    // (sequence row, slot index) to sample this pass.
    let mut queries: Vec<(usize, usize)> = slots.iter().enumerate().map(|(i, s)| (s.anchor, i)).collect();

    for pass in 0.. {
        if pass > stacked.k_max() {
            return Err(contract!("oracle exceeded its pass bound"));
        }
        let mut tags = vec![QueryTag::None; tokens.len()];
        for &(row, s) in &queries {
            let slot = &slots[s];
            tags[row] = QueryTag::Slot {
                doc_id: doc_ids[slot.doc_index].clone(),
                attribute: attributes[slot.attr_index].clone(),
                prefix: slot.emitted.clone(),
            };
        }
        let live = vec![true; tokens.len()];
        let mask = replay_mask(&positions, &live, &introduced);
        let mut cache = backend.new_cache();
        let logits = backend.forward(&ForwardStep::new(&tokens, &positions, &mask).with_tags(&tags), &mut cache)?;

        let mut sampled = Vec::with_capacity(queries.len());
        for &(row, _) in &queries {
            sampled.push(sampler.sample(logits.row(row))?);
        }
        advance(&mut slots, &sampled)?;

        queries.clear();
        for (i, slot) in slots.iter().enumerate().filter(|(_, s)| s.is_active()) {
            queries.push((tokens.len(), i));
            tokens.push(*slot.emitted.last().expect("active slots hold a token"));
            positions.push(slot.last_position().expect("non-empty"));
            introduced.push(pass + 1);
        }
        if queries.is_empty() {
            break;
        }
    }

    Ok(ExtractionResult {
        values: slots
            .iter()
            .map(|s| ExtractedValue {
                doc_id: doc_ids[s.doc_index].to_string(),
                attribute: attributes[s.attr_index].to_string(),
                tokens: s.emitted.clone(),
                truncated: s.state == SlotState::Truncated,
            })
            .collect(),
    })
}

/// Decodes one slot on its own: the layout cut right after the slot's anchor
/// (gapped positions kept), then plain autoregressive continuation at the
/// slot's gap positions until the delimiter or `k_max` tokens.
pub fn oracle_independent<B: Backend + ?Sized>(
    backend: &B,
    stacked: &StackedPrompt,
    slot_index: usize,
    config: &DecodeConfig,
) -> Result<TokenSeq> {
    require_greedy(config)?;
    let layout = &stacked.layout;
    let anchor = layout
        .slots()
        .get(slot_index)
        .ok_or_else(|| contract!("slot {slot_index} out of range"))?;
    let doc_id: Arc<str> = Arc::from(layout.doc_ids()[anchor.doc_index].as_str());
    let attribute: Arc<str> = Arc::from(layout.attributes()[anchor.attr_index].as_str());
    let tag = |prefix: &TokenSeq| QueryTag::Slot {
        doc_id: doc_id.clone(),
        attribute: attribute.clone(),
        prefix: prefix.clone(),
    };
    let mut sampler = Sampler::new(Sampling::Greedy, config.seed)?;
    let mut cache = backend.new_cache();

    let tokens = &layout.tokens()[..=anchor.anchor];
    let positions = &stacked.plan.position_ids[..=anchor.anchor];
    let mask = inference_mask(positions, positions, &vec![true; positions.len()]);
    let mut tags = vec![QueryTag::None; tokens.len()];
    let mut emitted = TokenSeq::new();
    tags[anchor.anchor] = tag(&emitted);
    let logits = backend.forward(&ForwardStep::new(tokens, positions, &mask).with_tags(&tags), &mut cache)?;
    let mut next = sampler.sample(logits.row(anchor.anchor))?;

    let anchor_position = stacked.plan.at(anchor.anchor);
    while next != DELIM {
        emitted.push(next);
        if emitted.len() >= stacked.k_max() {
            break;
        }
        let position = [anchor_position + emitted.len()];
        let mut key_positions = cache.positions().to_vec();
        key_positions.push(position[0]);
        let mask = inference_mask(&position, &key_positions, &vec![true; key_positions.len()]);
        let tags = [tag(&emitted)];
        let logits = backend.forward(&ForwardStep::new(&[next], &position, &mask).with_tags(&tags), &mut cache)?;
        next = sampler.sample(logits.row(0))?;
    }
    Ok(emitted)
}
