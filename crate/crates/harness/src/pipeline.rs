//! Corpus-level extraction: group products by category, stack `J` per
//! prompt, decode `b` prompts at a time, parse.

use std::str::FromStr;

use hpd_core::engine::{ar_decode_batch, hpd_decode, ArRequest, DecodeConfig, DecodeTrace};
use hpd_core::model::Backend;
use hpd_core::scheduler::{AttributeSet, Document, StackedPrompt, Template};
use indexmap::IndexMap;

use crate::dataset::DatasetRecord;
use crate::error::{HarnessError, Result};
use crate::parse::{parse_ar, parse_hpd, Predictions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Ar,
    Hpd,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ar => "ar",
            Mode::Hpd => "hpd",
        }
    }
}

impl FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ar" => Ok(Mode::Ar),
            "hpd" => Ok(Mode::Hpd),
            other => Err(HarnessError::Contract(format!("unknown mode {other:?}"))),
        }
    }
}

pub struct Extraction {
    pub predictions: Predictions,
    pub trace: DecodeTrace,
    /// AR rows that could not be recovered.
    pub parse_warnings: usize,
    pub prompts: usize,
}

/// Prompts of up to `docs_per_prompt` same-category documents, in corpus order.
pub fn group_documents<'a>(
    records: &'a [DatasetRecord],
    sets: &'a IndexMap<String, AttributeSet>,
    docs_per_prompt: usize,
) -> Result<Vec<(&'a AttributeSet, Vec<Document>)>> {
    if docs_per_prompt == 0 {
        return Err(HarnessError::Contract("docs per prompt must be positive".into()));
    }
    let mut by_category: IndexMap<&str, Vec<Document>> = IndexMap::new();
    for r in records {
        by_category.entry(&r.category).or_default().push(r.document());
    }
    let mut groups = Vec::new();
    for (cat, docs) in by_category {
        let set = sets
            .get(cat)
            .ok_or_else(|| HarnessError::Contract(format!("no attribute set for category {cat:?}")))?;
        for chunk in docs.chunks(docs_per_prompt) {
            groups.push((set, chunk.to_vec()));
        }
    }
    Ok(groups)
}

pub fn extract<B: Backend + ?Sized>(
    backend: &B,
    template: &Template,
    instruction: &str,
    records: &[DatasetRecord],
    sets: &IndexMap<String, AttributeSet>,
    mode: Mode,
    config: &DecodeConfig,
) -> Result<Extraction> {
    if config.batch_size == 0 {
        return Err(HarnessError::Contract("batch size must be positive".into()));
    }
    let groups = group_documents(records, sets, config.docs_per_prompt)?;
    let mut predictions = Predictions::new();
    let mut trace = DecodeTrace::default();
    let mut warnings = 0;
    for batch in groups.chunks(config.batch_size) {
        match mode {
            Mode::Hpd => {
                let prompts = batch
                    .iter()
                    .map(|(set, docs)| StackedPrompt::build(template, instruction, docs, set, config.k_max))
                    .collect::<Result<Vec<_>, _>>()?;
                let (results, t) = hpd_decode(backend, &prompts, config)?;
                predictions.extend(parse_hpd(&results));
                trace.absorb(&t);
            }
            Mode::Ar => {
                let requests = batch
                    .iter()
                    .map(|(set, docs)| ArRequest::for_documents(template, instruction, docs, set, config))
                    .collect::<Result<Vec<_>, _>>()?;
                let (outputs, t) = ar_decode_batch(backend, &requests, config)?;
                for ((set, docs), out) in batch.iter().zip(&outputs) {
                    let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
                    let parsed = parse_ar(out, template, &ids, set.names());
                    warnings += parsed.warnings;
                    predictions.extend(parsed.predictions);
                }
                trace.absorb(&t);
            }
        }
    }
    Ok(Extraction {
        predictions,
        trace,
        parse_warnings: warnings,
        prompts: groups.len(),
    })
}
