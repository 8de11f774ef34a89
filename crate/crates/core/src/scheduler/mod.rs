//! Input construction and value-slot bookkeeping for parallel decoding.
//!
//! A prompt is laid out as instruction, attribute list and documents, followed
//! by a skeleton of the structured output whose value fields are empty. Each
//! empty field is a slot. Position IDs leave a gap of `k_max` after every slot
//! anchor so generated value tokens can be appended in memory yet ordered
//! logically right after their attribute.

mod batch;
mod positions;
mod skeleton;
mod slots;
mod template;

pub use batch::{pad_batch, PaddedBatch};
pub use positions::{assign_position_ids, slot_position, PositionPlan};
pub use skeleton::{build_skeleton, AttributeSet, Document, LayoutShape, SkeletonLayout, SlotAnchor};
pub use slots::{advance, SlotState, ValueSlot};
pub use template::{RowParts, Template, DEFAULT_INSTRUCTION, DEFAULT_TEMPLATE};

use crate::error::{contract, Result};

/// J documents of one category sharing a single instruction and attribute header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackedPrompt {
    pub layout: SkeletonLayout,
    pub plan: PositionPlan,
    pub docs_per_prompt: usize,
}

impl StackedPrompt {
    pub fn new(layout: SkeletonLayout, k_max: usize) -> Result<Self> {
        let plan = assign_position_ids(&layout, k_max)?;
        let docs_per_prompt = layout.num_docs();
        if docs_per_prompt == 0 {
            return Err(contract!("a stacked prompt needs at least one document"));
        }
        Ok(Self {
            layout,
            plan,
            docs_per_prompt,
        })
    }

    pub fn build(
        template: &Template,
        instruction: &str,
        docs: &[Document],
        attrs: &AttributeSet,
        k_max: usize,
    ) -> Result<Self> {
        Self::new(template.build_skeleton(instruction, docs, attrs)?, k_max)
    }

    pub fn k_max(&self) -> usize {
        self.plan.k_max
    }

    pub fn new_slots(&self) -> Vec<ValueSlot> {
        self.layout
            .slots()
            .iter()
            .map(|a| ValueSlot::new(a, &self.plan))
            .collect()
    }
}
