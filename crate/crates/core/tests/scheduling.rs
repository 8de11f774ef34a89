mod common;

use common::{random_layout, random_values, rng};
use hpd_core::masks::{inference_mask, mask_equivalence_check};
use hpd_core::model::AttentionMask;
use hpd_core::scheduler::{assign_position_ids, build_skeleton, AttributeSet, Document, LayoutShape};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn training_and_inference_masks_agree(seed in any::<u64>(), k_max in 1usize..6) {
        let mut r = rng(seed);
        let layout = random_layout(&mut r, 3, 6);
        let plan = assign_position_ids(&layout, k_max).unwrap();
        let gold = random_values(&mut r, layout.slots().len(), k_max);
        let report = mask_equivalence_check(&layout, &plan, &gold).unwrap();
        prop_assert!(report.is_equal(), "{:?}", &report.diffs[..report.diffs.len().min(3)]);
    }

    #[test]
    fn gaps_are_exact_and_positions_increase(seed in any::<u64>(), k_max in 1usize..40) {
        let mut r = rng(seed);
        let layout = random_layout(&mut r, 3, 6);
        let plan = assign_position_ids(&layout, k_max).unwrap();
        prop_assert!(plan.position_ids.windows(2).all(|w| w[0] < w[1]));
        for w in layout.slots().windows(2) {
            let logical = plan.at(w[1].anchor) - plan.at(w[0].anchor);
            prop_assert_eq!(logical, w[1].anchor - w[0].anchor + k_max);
        }
    }

    #[test]
    fn one_slot_generation_is_plain_causal(prefix in 1usize..20, k_max in 1usize..8, generated in 0usize..8) {
        let generated = generated.min(k_max);
        let layout = LayoutShape { prompt_len: prefix, docs: 1, attributes: 1, doc_open_len: 0, key_len: 1, close_len: 0 }
            .build(|i| i as u32)
            .unwrap();
        let plan = assign_position_ids(&layout, k_max).unwrap();
        let mut keys = plan.position_ids.clone();
        let first = keys.len();
        keys.extend((1..=generated).map(|k| plan.at(layout.slots()[0].anchor) + k));
        let queries = keys[first..].to_vec();
        let mask = inference_mask(&queries, &keys, &vec![true; keys.len()]);
        prop_assert_eq!(mask, AttentionMask::causal(first, generated));
    }

    #[test]
    fn stacking_documents_unions_their_slots(j in 1usize..5, n in 1usize..5) {
        let attrs = AttributeSet::new("cat", (0..n).map(|i| format!("attr {i}")).collect()).unwrap();
        let docs: Vec<_> = (0..j).map(|i| Document::new(format!("doc{i}"), "cat", format!("text {i}"))).collect();
        let stacked = build_skeleton("Extract.", &docs, &attrs).unwrap();
        prop_assert_eq!(stacked.slots().len(), j * n);
        let text = String::from_utf8_lossy(&stacked.tokens().iter().map(|&t| t as u8).collect::<Vec<_>>()).into_owned();
        prop_assert_eq!(text.matches("Attributes:").count(), 1);
        for (i, doc) in docs.iter().enumerate() {
            let single = build_skeleton("Extract.", std::slice::from_ref(doc), &attrs).unwrap();
            for (a, b) in stacked.slots()[i * n..(i + 1) * n].iter().zip(single.slots()) {
                prop_assert_eq!((a.doc_index, a.attr_index), (i, b.attr_index));
                prop_assert_eq!(&stacked.tokens()[a.attr_span.clone()], &single.tokens()[b.attr_span.clone()]);
            }
        }
    }
}
