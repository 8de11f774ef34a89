//! Sweeps documents-per-prompt and batch size for both decoders.

use std::io::Write;
use std::time::Duration;

use hpd_core::engine::DecodeConfig;
use hpd_core::model::Backend;
use hpd_core::scheduler::{AttributeSet, Template};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetRecord;
use crate::error::{HarnessError, Result};
use crate::pipeline::{extract, Mode};

/// One CSV row: `j,b,mode,products_per_s,forward_passes,tokens,speedup`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub j: usize,
    pub b: usize,
    pub mode: String,
    pub products_per_s: f64,
    pub forward_passes: usize,
    pub tokens: usize,
    /// Forward passes of the AR baseline divided by this row's passes.
    pub speedup: f64,
}

pub struct BenchSpec<'a> {
    pub records: &'a [DatasetRecord],
    pub sets: &'a IndexMap<String, AttributeSet>,
    pub template: &'a Template,
    pub instruction: &'a str,
    pub docs: Vec<usize>,
    pub batches: Vec<usize>,
    pub modes: Vec<Mode>,
    pub base: DecodeConfig,
}

fn rate(products: usize, wall: Duration) -> f64 {
    let s = wall.as_secs_f64();
    if s > 0.0 {
        products as f64 / s
    } else {
        f64::INFINITY
    }
}

/// Runs the AR baseline (one document per prompt, largest batch) and then
/// every (mode, J, b) cell in that order. Wall-clock covers decode loops only.
pub fn bench_sweep<B: Backend + ?Sized>(backend: &B, spec: &BenchSpec<'_>) -> Result<Vec<BenchRow>> {
    if spec.docs.is_empty() || spec.batches.is_empty() || spec.modes.is_empty() {
        return Err(HarnessError::Contract("sweep needs J values, batch sizes and modes".into()));
    }
    let products = spec.records.len();
    let run = |mode: Mode, j: usize, b: usize| -> Result<(usize, usize, Duration)> {
        let config = DecodeConfig {
            docs_per_prompt: j,
            batch_size: b,
            ..spec.base.clone()
        };
        let out = extract(backend, spec.template, spec.instruction, spec.records, spec.sets, mode, &config)?;
        Ok((out.trace.forward_passes, out.trace.total_tokens(), out.trace.wall_clock))
    };

    let max_b = *spec.batches.iter().max().expect("non-empty");
    let (baseline, _, _) = run(Mode::Ar, 1, max_b)?;
    let mut rows = Vec::new();
    for &mode in &spec.modes {
        for &j in &spec.docs {
            for &b in &spec.batches {
                let (passes, tokens, wall) = run(mode, j, b)?;
                rows.push(BenchRow {
                    j,
                    b,
                    mode: mode.as_str().into(),
                    products_per_s: rate(products, wall),
                    forward_passes: passes,
                    tokens,
                    speedup: baseline as f64 / passes.max(1) as f64,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_csv(out: impl Write, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
