//! Deterministic synthetic product corpus with planted attribute values.

use hpd_core::model::ValueScript;
use hpd_core::scheduler::AttributeSet;
use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Map;

use crate::dataset::DatasetRecord;
use crate::error::Result;

/// Text the scripted backend emits for an absent attribute.
pub const NULL_VALUE: &str = "null";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub categories: usize,
    pub products: usize,
    pub attrs_per_category: usize,
    /// Probability that a label is null (and missing from the text).
    pub absent_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            categories: 2,
            products: 24,
            attrs_per_category: 16,
            absent_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub records: Vec<DatasetRecord>,
    pub attribute_sets: IndexMap<String, AttributeSet>,
    /// Planted values per (id, attribute); absent labels map to [`NULL_VALUE`].
    pub script: ValueScript,
}

const ATTRIBUTE_STEMS: [&str; 20] = [
    "Brand", "Color", "Material", "Size", "Weight", "Style", "Pattern", "Finish", "Capacity", "Power",
    "Voltage", "Length", "Width", "Height", "Flavor", "Scent", "Model", "Series", "Origin", "Fit",
];
const CATEGORY_STEMS: [&str; 6] = ["kitchen", "garden", "audio", "apparel", "toys", "tools"];
const SYLLABLES: [&str; 12] = ["ka", "lo", "mi", "ne", "ru", "ta", "vo", "zi", "be", "do", "fu", "ge"];

/// A lowercase word of 2 to 6 letters (mean 4).
fn value(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(2..=6);
    let mut s = String::with_capacity(len + 1);
    while s.len() < len {
        s.push_str(SYLLABLES.choose(rng).expect("non-empty"));
    }
    s.truncate(len);
    s
}

pub fn synth_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut attribute_sets = IndexMap::new();
    for c in 0..config.categories {
        let category = match CATEGORY_STEMS.get(c) {
            Some(s) => s.to_string(),
            None => format!("category{c}"),
        };
        let names = (0..config.attrs_per_category)
            .map(|a| match ATTRIBUTE_STEMS.get(a) {
                Some(s) => s.to_string(),
                None => format!("Attr{a}"),
            })
            .collect();
        attribute_sets.insert(category.clone(), AttributeSet::new(category, names)?);
    }

    let mut records = Vec::with_capacity(config.products);
    let mut script = ValueScript::new();
    let sets: Vec<&AttributeSet> = attribute_sets.values().collect();
    for p in 0..config.products {
        if sets.is_empty() {
            break;
        }
        let set = sets[p % sets.len()];
        let id = format!("p{p:04}");
        let mut labels = IndexMap::new();
        let mut text = format!("Item {id}.");
        for name in set.names() {
            if rng.gen_bool(config.absent_fraction.clamp(0.0, 1.0)) {
                labels.insert(name.clone(), None);
                script.insert(id.clone(), name.clone(), NULL_VALUE);
            } else {
                let v = value(&mut rng);
                text.push_str(&format!(" {name}: {v}."));
                script.insert(id.clone(), name.clone(), v.clone());
                labels.insert(name.clone(), Some(v));
            }
        }
        records.push(DatasetRecord {
            id,
            category: set.category().to_owned(),
            text,
            labels: Some(labels),
            extra: Map::new(),
        });
    }
    Ok(SynthCorpus {
        records,
        attribute_sets,
        script,
    })
}

/// Script planting the gold labels of `records`, with null as [`NULL_VALUE`].
pub fn script_from_labels(records: &[DatasetRecord]) -> ValueScript {
    let mut script = ValueScript::new();
    for r in records {
        for (attr, v) in r.labels.iter().flatten() {
            script.insert(r.id.clone(), attr.clone(), v.as_deref().unwrap_or(NULL_VALUE));
        }
    }
    script
}
