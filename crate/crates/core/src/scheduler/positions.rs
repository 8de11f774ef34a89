use super::{SkeletonLayout, ValueSlot};
use crate::error::{capacity, contract, Result};

/// Gapped logical position IDs for every token of a layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionPlan {
    pub position_ids: Vec<usize>,
    pub k_max: usize,
}

impl PositionPlan {
    pub fn len(&self) -> usize {
        self.position_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position_ids.is_empty()
    }

    pub fn at(&self, index: usize) -> usize {
        self.position_ids[index]
    }
}

/// Reserves `k_max` unused position IDs right after every slot anchor.
///
/// Tokens are numbered 0.. in layout order; each anchor adds `k_max` to a
/// running offset that applies to every later token. Structure tokens between
/// one value field and the next attribute therefore sit in the next slot's
/// offset group.
pub fn assign_position_ids(layout: &SkeletonLayout, k_max: usize) -> Result<PositionPlan> {
    if k_max == 0 {
        return Err(contract!("k_max must be at least 1"));
    }
    let mut anchors = layout.slots().iter().map(|s| s.anchor).peekable();
    let mut offset = 0;
    let mut position_ids = Vec::with_capacity(layout.len());
    for i in 0..layout.len() {
        position_ids.push(i + offset);
        if anchors.next_if_eq(&i).is_some() {
            offset += k_max;
        }
    }
    Ok(PositionPlan { position_ids, k_max })
}

/// Position ID of the `k`-th (1-based) value token of a slot.
pub fn slot_position(slot: &ValueSlot, k: usize, plan: &PositionPlan) -> Result<usize> {
    if k == 0 {
        return Err(contract!("value token index is 1-based"));
    }
    if k > plan.k_max {
        return Err(capacity!("value token {k} exceeds k_max {}", plan.k_max));
    }
    Ok(plan.position_ids[slot.anchor] + k)
}
