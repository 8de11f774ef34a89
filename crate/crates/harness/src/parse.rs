//! Turning decoder output into (document, attribute) → value maps.

use hpd_core::engine::ExtractionResult;
use hpd_core::scheduler::Template;
use hpd_core::tokenizer::{detokenize, TokenId};
use indexmap::IndexMap;

use crate::synth::NULL_VALUE;

/// document id → attribute → value (`None` for null).
pub type Predictions = IndexMap<String, IndexMap<String, Option<String>>>;

fn clean(value: &str) -> Option<String> {
    let v = value.trim();
    (!v.is_empty() && v != NULL_VALUE).then(|| value.to_owned())
}

/// Reads slot values directly.
pub fn parse_hpd(results: &[ExtractionResult]) -> Predictions {
    let mut out = Predictions::new();
    for result in results {
        for v in &result.values {
            out.entry(v.doc_id.clone())
                .or_default()
                .insert(v.attribute.clone(), clean(&v.text()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArParse {
    pub predictions: Predictions,
    /// Rows that were truncated, malformed or missing.
    pub warnings: usize,
}

/// Parses templated autoregressive output leniently. Rows are recognised
/// line by line; a truncated last row is dropped, and any requested pair
/// that was not recovered comes back as null and counts as a warning.
pub fn parse_ar(output: &[TokenId], template: &Template, doc_ids: &[String], attributes: &[String]) -> ArParse {
    let text = String::from_utf8_lossy(&detokenize(output)).into_owned();
    let parts = template.row_parts();
    let heads: Vec<(usize, String)> = {
        let mut h: Vec<_> = attributes
            .iter()
            .enumerate()
            .map(|(i, a)| (i, parts.head.replace("{name}", a)))
            .collect();
        // Longest first so "Size" never shadows "Size Unit".
        h.sort_by_key(|(_, s)| std::cmp::Reverse(s.len()));
        h
    };
    let opens: Vec<String> = doc_ids
        .iter()
        .map(|id| template.doc_open(id).trim_end_matches('\n').to_owned())
        .collect();

    let mut found: IndexMap<(usize, usize), Option<String>> = IndexMap::new();
    let mut warnings = 0;
    let mut doc = None;
    let terminated = text.ends_with('\n');
    let lines: Vec<&str> = text.split('\n').collect();
    let last = lines.len() - 1;
    for (li, line) in lines.iter().enumerate() {
        if li == last && (terminated || line.is_empty()) {
            break;
        }
        if let Some(d) = opens.iter().position(|o| o == line) {
            doc = Some(d);
            continue;
        }
        let Some(&(a, ref head)) = heads.iter().find(|(_, h)| line.starts_with(h.as_str())) else {
            continue;
        };
        let value = &line[head.len()..];
        match (doc, value.strip_suffix(parts.tail.as_str())) {
            (Some(d), Some(v)) if li < last => {
                found.insert((d, a), clean(v));
            }
            _ => warnings += 1,
        }
    }

    let mut predictions = Predictions::new();
    for (d, id) in doc_ids.iter().enumerate() {
        let row = predictions.entry(id.clone()).or_default();
        for (a, name) in attributes.iter().enumerate() {
            let v = match found.get(&(d, a)) {
                Some(v) => v.clone(),
                None => {
                    warnings += 1;
                    None
                }
            };
            row.insert(name.clone(), v);
        }
    }
    ArParse { predictions, warnings }
}
