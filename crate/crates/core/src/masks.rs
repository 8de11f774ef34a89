//! Attention masks for parallel value decoding.
//!
//! At inference time value tokens are appended to the cache out of logical
//! order, so causality is enforced on position IDs rather than memory order
//! ([`inference_mask`]). For fine-tuning the same tokens are laid out in
//! regular order and [`training_mask`] blocks exactly the pairs that cannot
//! see each other during decoding. [`mask_equivalence_check`] replays the
//! decode schedule and verifies that the two patterns agree pair for pair.

use std::collections::{BTreeSet, HashMap};

use crate::error::{contract, Result};
use crate::model::AttentionMask;
use crate::scheduler::{PositionPlan, SkeletonLayout};
use crate::tokenizer::TokenSeq;

/// `allowed(q, k)` iff key `k` is live and its position does not exceed the query's.
pub fn inference_mask(query_positions: &[usize], key_positions: &[usize], key_live: &[bool]) -> AttentionMask {
    assert_eq!(key_positions.len(), key_live.len(), "one live flag per key");
    AttentionMask::from_fn(query_positions.len(), key_positions.len(), |q, k| {
        key_live[k] && key_positions[k] <= query_positions[q]
    })
}

/// Position-ordered mask over a whole memory-ordered sequence that also
/// respects when each token entered the cache: a key is visible only if it was
/// forwarded in the same or an earlier call than the query.
///
/// This is the effective pattern of an incremental cached decode, expressed as
/// one square mask so the sequence can be recomputed from scratch.
pub fn replay_mask(positions: &[usize], live: &[bool], forward_index: &[usize]) -> AttentionMask {
    let n = positions.len();
    assert!(live.len() == n && forward_index.len() == n);
    AttentionMask::from_fn(n, n, |q, k| {
        live[k] && positions[k] <= positions[q] && forward_index[k] <= forward_index[q]
    })
}

/// What a token in a training sequence is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenRole {
    /// A prompt, attribute or structure token, by layout index.
    Layout(usize),
    /// The `k`-th (1-based) value token of slot `slot`.
    Value { slot: usize, k: usize },
}

/// A layout with gold values spliced in after their anchors, in regular
/// reading order with gapped position IDs, plus its fine-tuning mask.
#[derive(Debug, Clone)]
pub struct TrainingLayout {
    pub tokens: TokenSeq,
    pub positions: Vec<usize>,
    pub roles: Vec<TokenRole>,
    pub mask: AttentionMask,
}

fn check_gold(layout: &SkeletonLayout, plan: &PositionPlan, gold_values: &[TokenSeq]) -> Result<()> {
    if gold_values.len() != layout.slots().len() {
        return Err(contract!(
            "{} gold values for {} slots",
            gold_values.len(),
            layout.slots().len()
        ));
    }
    if plan.len() != layout.len() {
        return Err(contract!("position plan does not match the layout"));
    }
    if let Some((i, v)) = gold_values.iter().enumerate().find(|(_, v)| v.len() > plan.k_max) {
        return Err(contract!(
            "gold value for slot {i} has {} tokens, k_max is {}",
            v.len(),
            plan.k_max
        ));
    }
    Ok(())
}

/// Causal mask in position order, additionally blocking
/// value token (n, k) from value tokens (n', k') with n' < n and k' > k, and
/// every non-value token from every value token.
pub fn training_mask(layout: &SkeletonLayout, plan: &PositionPlan, gold_values: &[TokenSeq]) -> Result<TrainingLayout> {
    check_gold(layout, plan, gold_values)?;
    let mut tokens = Vec::new();
    let mut positions = Vec::new();
    let mut roles = Vec::new();
    let mut slots = layout.slots().iter().enumerate().peekable();
    for (i, &t) in layout.tokens().iter().enumerate() {
        tokens.push(t);
        positions.push(plan.at(i));
        roles.push(TokenRole::Layout(i));
        if let Some((s, anchor)) = slots.next_if(|(_, a)| a.anchor == i) {
            for (k, &v) in gold_values[s].iter().enumerate() {
                tokens.push(v);
                positions.push(plan.at(anchor.anchor) + k + 1);
                roles.push(TokenRole::Value { slot: s, k: k + 1 });
            }
        }
    }
    let mask = AttentionMask::from_fn(tokens.len(), tokens.len(), |q, k| {
        if positions[k] > positions[q] {
            return false;
        }
        match (roles[q], roles[k]) {
            (TokenRole::Layout(_), TokenRole::Value { .. }) => false,
            (TokenRole::Value { slot: n, k: kq }, TokenRole::Value { slot: n2, k: kk }) => !(n2 < n && kk > kq),
            _ => true,
        }
    });
    Ok(TrainingLayout {
        tokens,
        positions,
        roles,
        mask,
    })
}

/// One disagreeing (query, key) pair, in training-sequence indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskDiff {
    pub query: usize,
    pub key: usize,
    pub query_role: TokenRole,
    pub key_role: TokenRole,
    pub training: bool,
    pub inference: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalenceReport {
    pub pairs_checked: usize,
    pub diffs: Vec<MaskDiff>,
}

impl EquivalenceReport {
    pub fn is_equal(&self) -> bool {
        self.diffs.is_empty()
    }
}

/// Replays the parallel decode schedule for known values.
///
/// Forward 0 submits the layout. Forward `t` submits the `t`-th token of
/// every value that has one, in slot order. Each forward's queries see the
/// cache as it stands after appending that forward's tokens, filtered by
/// [`inference_mask`]. Returns the memory-ordered roles and, per memory entry,
/// the set of memory entries it attended to.
pub fn replay_attendable(
    layout: &SkeletonLayout,
    plan: &PositionPlan,
    gold_values: &[TokenSeq],
) -> Result<(Vec<TokenRole>, Vec<BTreeSet<usize>>)> {
    check_gold(layout, plan, gold_values)?;
    let mut roles: Vec<TokenRole> = (0..layout.len()).map(TokenRole::Layout).collect();
    let mut positions: Vec<usize> = plan.position_ids.clone();
    let mut visible = Vec::new();

    let forward = |first: usize, roles: &[TokenRole], positions: &[usize], visible: &mut Vec<BTreeSet<usize>>| {
        let live = vec![true; positions.len()];
        let mask = inference_mask(&positions[first..], positions, &live);
        for q in 0..positions.len() - first {
            visible.push(mask.allowed_keys(q).collect());
        }
        debug_assert_eq!(visible.len(), roles.len());
    };

    forward(0, &roles, &positions, &mut visible);
    let longest = gold_values.iter().map(Vec::len).max().unwrap_or(0);
    for t in 1..=longest {
        let first = roles.len();
        for (s, v) in gold_values.iter().enumerate() {
            if v.len() >= t {
                roles.push(TokenRole::Value { slot: s, k: t });
                positions.push(plan.at(layout.slots()[s].anchor) + t);
            }
        }
        forward(first, &roles, &positions, &mut visible);
    }
    Ok((roles, visible))
}

/// Builds the training mask and compares it with the replayed inference pattern.
pub fn mask_equivalence_check(
    layout: &SkeletonLayout,
    plan: &PositionPlan,
    gold_values: &[TokenSeq],
) -> Result<EquivalenceReport> {
    let training = training_mask(layout, plan, gold_values)?;
    check_against_replay(layout, plan, gold_values, &training)
}

/// Compares a given training layout (possibly hand-modified) with the replay.
pub fn check_against_replay(
    layout: &SkeletonLayout,
    plan: &PositionPlan,
    gold_values: &[TokenSeq],
    training: &TrainingLayout,
) -> Result<EquivalenceReport> {
    let (memory_roles, visible) = replay_attendable(layout, plan, gold_values)?;
    let train_index: HashMap<TokenRole, usize> = training
        .roles
        .iter()
        .enumerate()
        .map(|(i, &r)| (r, i))
        .collect();
    if train_index.len() != memory_roles.len() {
        return Err(contract!("training sequence and replay cover different tokens"));
    }
    let to_train = |m: usize| train_index[&memory_roles[m]];

    let n = training.roles.len();
    let mut inference_rows = vec![BTreeSet::new(); n];
    for (m, keys) in visible.iter().enumerate() {
        inference_rows[to_train(m)] = keys.iter().map(|&k| to_train(k)).collect();
    }

    let mut diffs = Vec::new();
    for (q, row) in inference_rows.iter().enumerate() {
        for k in 0..n {
            let inference = row.contains(&k);
            let train = training.mask.allowed(q, k);
            if inference != train {
                diffs.push(MaskDiff {
                    query: q,
                    key: k,
                    query_role: training.roles[q],
                    key_role: training.roles[k],
                    training: train,
                    inference,
                });
            }
        }
    }
    Ok(EquivalenceReport {
        pairs_checked: n * n,
        diffs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{assign_position_ids, SlotAnchor};

    fn three_by_three() -> (SkeletonLayout, PositionPlan) {
        let slots = (0..3)
            .map(|n| SlotAnchor {
                doc_index: 0,
                attr_index: n,
                anchor: 12 + 3 * n,
                attr_span: 10 + 3 * n..13 + 3 * n,
            })
            .collect();
        let layout = SkeletonLayout::from_parts(
            (0..20).map(|t| 65 + t).collect(),
            slots,
            vec![],
            vec!["d".into()],
            vec!["a".into(), "b".into(), "c".into()],
            10,
        )
        .unwrap();
        let plan = assign_position_ids(&layout, 7).unwrap();
        (layout, plan)
    }

    fn gold3() -> Vec<TokenSeq> {
        vec![vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]]
    }

    fn index_of(t: &TrainingLayout, role: TokenRole) -> usize {
        t.roles.iter().position(|&r| r == role).unwrap()
    }

    #[test]
    fn increasing_positions_give_plain_causal() {
        let pos: Vec<usize> = (0..6).collect();
        let m = inference_mask(&pos, &pos, &[true; 6]);
        assert_eq!(m, AttentionMask::causal(0, 6));
    }

    #[test]
    fn later_logical_key_is_blocked_even_if_earlier_in_memory() {
        // v(1,2) at 14 as the query; v(2,1) at 23 already in the cache.
        let m = inference_mask(&[14], &[13, 23, 14], &[true; 3]);
        assert!(m.allowed(0, 0));
        assert!(!m.allowed(0, 1));
        assert!(m.allowed(0, 2));
    }

    #[test]
    fn pad_keys_blocked_for_everyone() {
        let m = inference_mask(&[5, 9], &[0, 1, 0], &[true, true, false]);
        assert!((0..2).all(|q| !m.allowed(q, 2)));
    }

    #[test]
    fn training_mask_blocks_later_tokens_of_earlier_values() {
        let (layout, plan) = three_by_three();
        let t = training_mask(&layout, &plan, &gold3()).unwrap();
        let v = |slot, k| index_of(&t, TokenRole::Value { slot, k });
        // slot indices are 0-based: v(2,1) is slot 1, k 1.
        assert!(!t.mask.allowed(v(1, 1), v(0, 3)));
        assert!(t.mask.allowed(v(1, 3), v(0, 2)));
        assert!(t.mask.allowed(v(1, 2), v(0, 2)));
        assert!(!t.mask.allowed(v(0, 1), v(1, 1)));
        let a3 = index_of(&t, TokenRole::Layout(18));
        for s in 0..3 {
            for k in 1..=3 {
                assert!(!t.mask.allowed(a3, v(s, k)));
            }
        }
    }

    #[test]
    fn gold_longer_than_k_max_rejected() {
        let (layout, plan) = three_by_three();
        let gold = vec![vec![1; 8], vec![], vec![]];
        assert!(training_mask(&layout, &plan, &gold).is_err());
    }

    #[test]
    fn three_by_three_masks_agree() {
        let (layout, plan) = three_by_three();
        let report = mask_equivalence_check(&layout, &plan, &gold3()).unwrap();
        assert!(report.is_equal(), "{:?}", report.diffs);
        assert_eq!(report.pairs_checked, 29 * 29);
    }

    #[test]
    fn ragged_values_agree() {
        let (layout, plan) = three_by_three();
        let gold = vec![vec![1], vec![], vec![7, 8, 9, 10, 11, 12, 13]];
        assert!(mask_equivalence_check(&layout, &plan, &gold).unwrap().is_equal());
    }

    #[test]
    fn corrupted_pair_is_pinpointed() {
        let (layout, plan) = three_by_three();
        let mut t = training_mask(&layout, &plan, &gold3()).unwrap();
        let q = index_of(&t, TokenRole::Value { slot: 1, k: 1 });
        let k = index_of(&t, TokenRole::Value { slot: 0, k: 3 });
        t.mask.set(q, k, true);
        let report = check_against_replay(&layout, &plan, &gold3(), &t).unwrap();
        assert_eq!(report.diffs.len(), 1);
        let d = &report.diffs[0];
        assert_eq!((d.query, d.key, d.training, d.inference), (q, k, true, false));
    }

    #[test]
    fn replay_mask_hides_later_forwards() {
        // Layout token at position 20 was forwarded before a value at 13.
        let m = replay_mask(&[0, 20, 13], &[true; 3], &[0, 0, 1]);
        assert!(!m.allowed(1, 2));
        assert!(m.allowed(2, 0));
        assert!(!m.allowed(2, 1));
    }
}
