use super::{PositionPlan, SlotAnchor};
use crate::error::{contract, Result};
use crate::tokenizer::{TokenId, TokenSeq, DELIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotState {
    Active,
    /// The delimiter was sampled; the value is complete.
    Pruned,
    /// `k_max` tokens were emitted without a delimiter.
    Truncated,
}

/// Decoding state of one (document, attribute) value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueSlot {
    pub doc_index: usize,
    pub attr_index: usize,
    /// Token index of the slot anchor in the layout.
    pub anchor: usize,
    pub anchor_position: usize,
    pub k_max: usize,
    pub state: SlotState,
    /// Value tokens so far, delimiter excluded.
    pub emitted: TokenSeq,
    /// Position ID the next value token will occupy.
    pub next_position: usize,
}

impl ValueSlot {
    pub fn new(anchor: &SlotAnchor, plan: &PositionPlan) -> Self {
        let anchor_position = plan.at(anchor.anchor);
        Self {
            doc_index: anchor.doc_index,
            attr_index: anchor.attr_index,
            anchor: anchor.anchor,
            anchor_position,
            k_max: plan.k_max,
            state: SlotState::Active,
            emitted: Vec::new(),
            next_position: anchor_position + 1,
        }
    }

    pub fn is_active(&self) -> bool {
        self.state == SlotState::Active
    }

    /// Position ID of the most recently emitted token.
    pub fn last_position(&self) -> Option<usize> {
        (!self.emitted.is_empty()).then(|| self.anchor_position + self.emitted.len())
    }

    fn accept(&mut self, token: TokenId) {
        if token == DELIM {
            self.state = SlotState::Pruned;
            return;
        }
        self.emitted.push(token);
        self.next_position += 1;
        if self.emitted.len() >= self.k_max {
            self.state = SlotState::Truncated;
        }
    }
}

/// Feeds one sampled token to every active slot, in slot order.
///
/// A delimiter prunes the slot without being stored. Any other token is
/// appended, and a slot that reaches `k_max` tokens is truncated. Returns the
/// indices of slots that left the active set.
pub fn advance(slots: &mut [ValueSlot], sampled: &[TokenId]) -> Result<Vec<usize>> {
    let active = slots.iter().filter(|s| s.is_active()).count();
    if active != sampled.len() {
        return Err(contract!("{} sampled tokens for {} active slots", sampled.len(), active));
    }
    let mut left = Vec::new();
    let mut tokens = sampled.iter();
    for (i, slot) in slots.iter_mut().enumerate().filter(|(_, s)| s.is_active()) {
        slot.accept(*tokens.next().expect("counted above"));
        if !slot.is_active() {
            left.push(i);
        }
    }
    Ok(left)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slot(k_max: usize) -> ValueSlot {
        let plan = PositionPlan {
            position_ids: (0..20).collect(),
            k_max,
        };
        ValueSlot::new(
            &SlotAnchor {
                doc_index: 0,
                attr_index: 0,
                anchor: 12,
                attr_span: 10..13,
            },
            &plan,
        )
    }

    #[test]
    fn delim_prunes_without_storing() {
        let mut slots = vec![slot(30)];
        slots[0].emitted = vec![65, 66];
        let left = advance(&mut slots, &[DELIM]).unwrap();
        assert_eq!(left, vec![0]);
        assert_eq!(slots[0].state, SlotState::Pruned);
        assert_eq!(slots[0].emitted, vec![65, 66]);
    }

    #[test]
    fn reaching_k_max_truncates() {
        let mut s = slot(30);
        for _ in 0..29 {
            s.accept(b'x' as u32);
        }
        assert!(s.is_active());
        let mut slots = vec![s];
        let left = advance(&mut slots, &[b'y' as u32]).unwrap();
        assert_eq!(left, vec![0]);
        assert_eq!(slots[0].emitted.len(), 30);
        assert_eq!(slots[0].state, SlotState::Truncated);
    }

    #[test]
    fn only_active_slots_consume_tokens() {
        let mut slots = vec![slot(5), slot(5), slot(5)];
        slots[1].state = SlotState::Pruned;
        advance(&mut slots, &[b'a' as u32, DELIM]).unwrap();
        assert_eq!(slots[0].emitted, vec![b'a' as u32]);
        assert!(slots[1].emitted.is_empty());
        assert_eq!(slots[2].state, SlotState::Pruned);
        assert!(advance(&mut slots, &[1, 2]).is_err());
    }

    #[test]
    fn next_position_tracks_emitted() {
        let mut slots = vec![slot(5)];
        assert_eq!(slots[0].next_position, 13);
        advance(&mut slots, &[b'a' as u32]).unwrap();
        assert_eq!(slots[0].next_position, 14);
        assert_eq!(slots[0].last_position(), Some(13));
    }

    proptest! {
        #[test]
        fn any_stream_terminates_within_k_max(
            k_max in 1usize..12,
            n in 1usize..6,
            stream in proptest::collection::vec(prop_oneof![Just(DELIM), 0u32..256], 0..400),
        ) {
            let mut slots = vec![slot(k_max); n];
            let mut tokens = stream.into_iter().chain(std::iter::repeat(b'z' as u32));
            let mut steps = 0;
            while slots.iter().any(|s| s.is_active()) {
                let active = slots.iter().filter(|s| s.is_active()).count();
                let sampled: Vec<_> = tokens.by_ref().take(active).collect();
                advance(&mut slots, &sampled).unwrap();
                steps += 1;
                for s in &slots {
                    prop_assert!(s.emitted.len() <= k_max);
                    if s.emitted.len() == k_max {
                        prop_assert_eq!(s.state, SlotState::Truncated);
                    }
                    if s.is_active() {
                        prop_assert_eq!(s.next_position, s.anchor_position + s.emitted.len() + 1);
                    }
                }
            }
            prop_assert!(steps <= k_max);
        }
    }
}
