#![allow(dead_code)]

use hpd_core::model::{EarlyStop, ModelConfig, TinyModel, ValueScript};
use hpd_core::scheduler::{LayoutShape, SkeletonLayout, StackedPrompt};
use hpd_core::tokenizer::TokenSeq;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny(seed: u64) -> TinyModel {
    TinyModel::new(ModelConfig::toy(seed)).unwrap()
}

/// Tiny model whose values end after a data-dependent number of tokens.
pub fn stopping_tiny(seed: u64) -> EarlyStop<TinyModel> {
    EarlyStop::new(tiny(seed), 3).unwrap()
}

pub fn random_shape(rng: &mut impl Rng, max_docs: usize, max_attrs: usize) -> LayoutShape {
    LayoutShape {
        prompt_len: rng.gen_range(3..16),
        docs: rng.gen_range(1..=max_docs),
        attributes: rng.gen_range(1..=max_attrs),
        doc_open_len: rng.gen_range(0..3),
        key_len: rng.gen_range(1..4),
        close_len: rng.gen_range(0..3),
    }
}

pub fn random_layout(rng: &mut impl Rng, max_docs: usize, max_attrs: usize) -> SkeletonLayout {
    let shape = random_shape(rng, max_docs, max_attrs);
    let tokens: Vec<u32> = (0..4096).map(|_| rng.gen_range(32..127)).collect();
    shape.build(|i| tokens[i]).unwrap()
}

pub fn random_values(rng: &mut impl Rng, slots: usize, max_len: usize) -> Vec<TokenSeq> {
    (0..slots)
        .map(|_| {
            let len = rng.gen_range(0..=max_len);
            (0..len).map(|_| rng.gen_range(b'a' as u32..=b'z' as u32)).collect()
        })
        .collect()
}

/// Three one-document slots with anchors at 12, 15, 18 and `k_max` = 7.
pub fn three_slots() -> StackedPrompt {
    let layout = LayoutShape::THREE_SLOTS.build(|i| 65 + i as u32).unwrap();
    StackedPrompt::new(layout, 7).unwrap()
}

pub fn script_for(layout: &SkeletonLayout, values: &[&str]) -> ValueScript {
    let n = layout.attributes().len();
    let mut script = ValueScript::new();
    for (i, v) in values.iter().enumerate() {
        script.insert(layout.doc_ids()[i / n].clone(), layout.attributes()[i % n].clone(), *v);
    }
    script
}
