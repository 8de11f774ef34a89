//! JSONL datasets and result files.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use hpd_core::engine::DecodeTrace;
use hpd_core::scheduler::{AttributeSet, Document};
use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{io_err, HarnessError, Result};
use crate::parse::Predictions;

/// One product: `{"id", "category", "text", "labels": {attr: value|null}}`.
/// Fields this crate does not know are kept in `extra` and written back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub category: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<IndexMap<String, Option<String>>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl DatasetRecord {
    pub fn document(&self) -> Document {
        Document::new(self.id.clone(), self.category.clone(), self.text.as_bytes())
    }
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut records: Vec<DatasetRecord> = Vec::new();
    let mut seen = IndexSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|source| HarnessError::Parse {
            path: path.to_owned(),
            line: i + 1,
            source,
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(HarnessError::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn save_jsonl(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Attribute sets per category, in order of first appearance in the labels.
pub fn attribute_sets(records: &[DatasetRecord]) -> Result<IndexMap<String, AttributeSet>> {
    let mut names: IndexMap<String, IndexSet<String>> = IndexMap::new();
    for r in records {
        let entry = names.entry(r.category.clone()).or_default();
        if let Some(labels) = &r.labels {
            entry.extend(labels.keys().cloned());
        }
    }
    names
        .into_iter()
        .map(|(cat, attrs)| {
            if attrs.is_empty() {
                return Err(HarnessError::Contract(format!("category {cat:?} has no labelled attributes")));
            }
            let set = AttributeSet::new(cat.clone(), attrs.into_iter().collect())?;
            Ok((cat, set))
        })
        .collect()
}

/// Gold labels over the full key space: every attribute of the record's
/// category, null where the label is absent. Unlabelled records are skipped.
pub fn gold_labels(records: &[DatasetRecord], sets: &IndexMap<String, AttributeSet>) -> Predictions {
    let mut gold = Predictions::new();
    for r in records {
        let (Some(labels), Some(set)) = (&r.labels, sets.get(&r.category)) else {
            continue;
        };
        let row = set
            .names()
            .iter()
            .map(|a| (a.clone(), labels.get(a).cloned().flatten()))
            .collect();
        gold.insert(r.id.clone(), row);
    }
    gold
}

/// Summary of a decode run as written into result files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub forward_passes: usize,
    pub tokens: usize,
    pub steps_excluding_delimiter: usize,
    pub peak_cache_entries: usize,
    pub wall_clock_s: f64,
}

impl From<&DecodeTrace> for TraceSummary {
    fn from(t: &DecodeTrace) -> Self {
        Self {
            forward_passes: t.forward_passes,
            tokens: t.total_tokens(),
            steps_excluding_delimiter: t.steps_excluding_delimiter,
            peak_cache_entries: t.peak_cache_entries,
            wall_clock_s: t.wall_clock.as_secs_f64(),
        }
    }
}

/// Writes `{"doc_id": {"attr": value|null}, ..., "_trace": {...}}`.
pub fn save_results(path: impl AsRef<Path>, predictions: &Predictions, trace: &TraceSummary) -> Result<()> {
    let path = path.as_ref();
    let mut root = Map::new();
    for (doc, row) in predictions {
        root.insert(doc.clone(), serde_json::to_value(row)?);
    }
    root.insert("_trace".into(), serde_json::to_value(trace)?);
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(&mut file, &root)?;
    file.write_all(b"\n").map_err(io_err(path))
}

pub fn load_results(path: impl AsRef<Path>) -> Result<(Predictions, Option<TraceSummary>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut root: Map<String, Value> = serde_json::from_str(&text)?;
    let trace = root
        .shift_remove("_trace")
        .map(serde_json::from_value)
        .transpose()?;
    let predictions = root
        .into_iter()
        .map(|(doc, row)| Ok((doc, serde_json::from_value(row)?)))
        .collect::<Result<_>>()?;
    Ok((predictions, trace))
}
