//! Exact-match F1, judge-count F1 and the rental cost model.

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::parse::Predictions;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// A denominator was zero, so at least one ratio is 0 by convention.
    pub degenerate: bool,
}

impl MetricsReport {
    /// Builds the report from numerator and denominators.
    pub fn from_counts(hits: u64, predicted: u64, relevant: u64) -> Self {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(hits, predicted);
        let recall = ratio(hits, relevant);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            degenerate: predicted == 0 || relevant == 0,
        }
    }
}

/// Trim, casefold and collapse internal whitespace.
pub fn normalize(value: &str) -> String {
    value.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Confusion counts behind an exact-match score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Compares predictions with gold labels over an identical key space.
///
/// A non-null prediction equal to a non-null gold value (after
/// [`normalize`]) is a true positive. Any other non-null prediction is a
/// false positive, and any non-null gold value not matched is a false
/// negative; a wrong value is therefore both. Null/null pairs count nowhere.
pub fn match_counts(predictions: &Predictions, gold: &Predictions) -> Result<MatchCounts> {
    let mut c = MatchCounts::default();
    if predictions.len() != gold.len() {
        return Err(HarnessError::Contract(format!(
            "{} predicted documents, {} gold documents",
            predictions.len(),
            gold.len()
        )));
    }
    for (doc, gold_row) in gold {
        let pred_row = predictions
            .get(doc)
            .ok_or_else(|| HarnessError::Contract(format!("no prediction for document {doc:?}")))?;
        if pred_row.len() != gold_row.len() {
            return Err(HarnessError::Contract(format!("attribute sets differ for document {doc:?}")));
        }
        for (attr, g) in gold_row {
            let p = pred_row
                .get(attr)
                .ok_or_else(|| HarnessError::Contract(format!("no prediction for {doc:?}/{attr:?}")))?;
            match (p, g) {
                (Some(p), Some(g)) if normalize(p) == normalize(g) => c.tp += 1,
                (Some(_), Some(_)) => {
                    c.fp += 1;
                    c.fn_ += 1;
                }
                (Some(_), None) => c.fp += 1,
                (None, Some(_)) => c.fn_ += 1,
                (None, None) => {}
            }
        }
    }
    Ok(c)
}

pub fn exact_f1(predictions: &Predictions, gold: &Predictions) -> Result<MetricsReport> {
    let c = match_counts(predictions, gold)?;
    Ok(MetricsReport::from_counts(c.tp, c.tp + c.fp, c.tp + c.fn_))
}

/// Verdict counts from an external judge: correct, correct-null, incorrect,
/// missing, hallucination.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeCounts {
    #[serde(rename = "C")]
    pub c: u64,
    #[serde(rename = "CN")]
    pub cn: u64,
    #[serde(rename = "I")]
    pub i: u64,
    #[serde(rename = "M")]
    pub m: u64,
    #[serde(rename = "H")]
    pub h: u64,
}

/// P = (C+CN)/(C+CN+H+I), R = (C+CN)/(C+CN+M+I), F1 their harmonic mean.
pub fn judge_f1(counts: &JudgeCounts) -> MetricsReport {
    let hits = counts.c + counts.cn;
    MetricsReport::from_counts(hits, hits + counts.h + counts.i, hits + counts.m + counts.i)
}

/// Rental cost of processing 1000 products when a server billed at
/// `hourly_rate` is split evenly over `num_gpus` GPUs.
pub fn cost_per_1k(products_per_second_per_gpu: f64, hourly_rate: f64, num_gpus: u32) -> Result<f64> {
    if !(products_per_second_per_gpu > 0.0) || num_gpus == 0 {
        return Err(HarnessError::Contract(format!(
            "throughput must be positive (got {products_per_second_per_gpu}) with at least one GPU"
        )));
    }
    Ok(hourly_rate / num_gpus as f64 / (3600.0 * products_per_second_per_gpu) * 1000.0)
}

/// Inverse of [`cost_per_1k`]: the per-GPU throughput that yields `cost`.
pub fn rate_for_cost(cost: f64, hourly_rate: f64, num_gpus: u32) -> Result<f64> {
    if !(cost > 0.0) || num_gpus == 0 {
        return Err(HarnessError::Contract(format!("cost must be positive (got {cost})")));
    }
    Ok(hourly_rate / num_gpus as f64 * 1000.0 / (3600.0 * cost))
}

#[cfg(test)]
mod tests {
    use indexmap::IndexMap;
    use proptest::prelude::*;

    use super::*;

    fn preds(rows: &[(&str, &str, Option<&str>)]) -> Predictions {
        let mut p = Predictions::new();
        for (d, a, v) in rows {
            p.entry(d.to_string())
                .or_insert_with(IndexMap::new)
                .insert(a.to_string(), v.map(str::to_owned));
        }
        p
    }

    #[test]
    fn perfect_predictions() {
        let g = preds(&[("1", "Brand", Some("LG")), ("1", "Size", None)]);
        let r = exact_f1(&g, &g).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn two_hits_one_spurious_one_missed() {
        let gold = preds(&[
            ("1", "a", Some("x")),
            ("1", "b", Some("y")),
            ("1", "c", None),
            ("1", "d", Some("z")),
        ]);
        let pred = preds(&[
            ("1", "a", Some(" X ")),
            ("1", "b", Some("y")),
            ("1", "c", Some("w")),
            ("1", "d", None),
        ]);
        let c = match_counts(&pred, &gold).unwrap();
        assert_eq!(c, MatchCounts { tp: 2, fp: 1, fn_: 1 });
        let r = exact_f1(&pred, &gold).unwrap();
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_null_is_degenerate_zero() {
        let g = preds(&[("1", "a", None)]);
        let r = exact_f1(&g, &g).unwrap();
        assert_eq!(r.f1, 0.0);
        assert!(r.degenerate);
    }

    #[test]
    fn key_mismatch_is_an_error() {
        let g = preds(&[("1", "a", None)]);
        assert!(exact_f1(&preds(&[("1", "b", None)]), &g).is_err());
        assert!(exact_f1(&preds(&[("2", "a", None)]), &g).is_err());
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize("  Deep   Blue\t"), "deep blue");
    }

    #[test]
    fn judge_examples() {
        let one = judge_f1(&JudgeCounts { c: 1, ..Default::default() });
        assert_eq!((one.precision, one.recall, one.f1), (1.0, 1.0, 1.0));
        let r = judge_f1(&JudgeCounts { c: 8, cn: 2, i: 1, m: 1, h: 0 });
        assert!((r.precision - 10.0 / 11.0).abs() < 1e-12);
        assert!((r.recall - 10.0 / 12.0).abs() < 1e-12);
        assert!((r.f1 - 0.8696).abs() < 1e-4);
        let zero = judge_f1(&JudgeCounts { i: 3, ..Default::default() });
        assert_eq!(zero.f1, 0.0);
        assert!(judge_f1(&JudgeCounts::default()).degenerate);
    }

    #[test]
    fn judge_counts_use_upper_case_keys() {
        let c: JudgeCounts = serde_json::from_str(r#"{"C":8,"CN":2,"I":1,"M":1,"H":0}"#).unwrap();
        assert_eq!(c, JudgeCounts { c: 8, cn: 2, i: 1, m: 1, h: 0 });
    }

    #[test]
    fn cost_examples() {
        let c = cost_per_1k(1.17, 30.13, 8).unwrap();
        assert!((c - 0.8942).abs() < 1e-4, "{c}");
        let fast = cost_per_1k(1000.0, 30.13, 8).unwrap();
        assert!((fast - 0.001046).abs() < 1e-6);
        assert!(cost_per_1k(0.0, 30.13, 8).is_err());
        assert!(cost_per_1k(-1.0, 30.13, 8).is_err());
    }

    proptest! {
        #[test]
        fn cost_round_trips(rate in 1e-3f64..1e4, hourly in 0.1f64..100.0, gpus in 1u32..16) {
            let cost = cost_per_1k(rate, hourly, gpus).unwrap();
            let back = rate_for_cost(cost, hourly, gpus).unwrap();
            prop_assert!((back - rate).abs() <= 1e-9 * rate);
        }

        #[test]
        fn cost_falls_with_rate_and_gpus(rate in 1e-3f64..1e3, hourly in 0.1f64..100.0, gpus in 1u32..8) {
            prop_assert!(cost_per_1k(rate * 2.0, hourly, gpus).unwrap() < cost_per_1k(rate, hourly, gpus).unwrap());
            let half = cost_per_1k(rate, hourly, gpus * 2).unwrap();
            prop_assert!((half * 2.0 - cost_per_1k(rate, hourly, gpus).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn exact_f1_ignores_record_order_and_attribute_names(
            rows in prop::collection::vec((prop::option::of("[ab]"), prop::option::of("[ab]")), 1..30),
            rotate in 0usize..30,
        ) {
            let mut pred = Predictions::new();
            let mut gold = Predictions::new();
            for (i, (p, g)) in rows.iter().enumerate() {
                pred.insert(format!("d{i}"), [("x".to_string(), p.clone())].into_iter().collect());
                gold.insert(format!("d{i}"), [("x".to_string(), g.clone())].into_iter().collect());
            }
            let base = exact_f1(&pred, &gold).unwrap();
            let k = rotate % rows.len();
            let mut pr: Vec<_> = pred.clone().into_iter().collect();
            let mut gr: Vec<_> = gold.clone().into_iter().collect();
            pr.rotate_left(k);
            gr.reverse();
            let renamed = |v: Vec<(String, IndexMap<String, Option<String>>)>| -> Predictions {
                v.into_iter()
                    .map(|(d, row)| (d, row.into_iter().map(|(_, v)| ("renamed".to_string(), v)).collect()))
                    .collect()
            };
            prop_assert_eq!(exact_f1(&renamed(pr), &renamed(gr)).unwrap(), base);
        }
    }
}
