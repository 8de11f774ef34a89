use std::ops::Range;

use super::Template;
use crate::error::{contract, Result};
use crate::tokenizer::{tokenize, TokenSeq};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub category: String,
    pub text: Vec<u8>,
}

impl Document {
    pub fn new(id: impl Into<String>, category: impl Into<String>, text: impl Into<Vec<u8>>) -> Self {
        Self {
            id: id.into(),
            category: category.into(),
            text: text.into(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(contract!("document id is empty"));
        }
        if self.text.is_empty() {
            return Err(contract!("document {} has no text", self.id));
        }
        Ok(())
    }
}

/// Ordered, duplicate-free attribute names for one category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSet {
    category: String,
    attributes: Vec<String>,
}

impl AttributeSet {
    pub fn new(category: impl Into<String>, attributes: Vec<String>) -> Result<Self> {
        for (i, a) in attributes.iter().enumerate() {
            if attributes[..i].contains(a) {
                return Err(contract!("duplicate attribute {a:?}"));
            }
            if a.contains('\n') {
                return Err(contract!("attribute {a:?} contains the delimiter"));
            }
        }
        Ok(Self {
            category: category.into(),
            attributes,
        })
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn names(&self) -> &[String] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }
}

/// Where one value field sits in the layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotAnchor {
    pub doc_index: usize,
    pub attr_index: usize,
    /// Token index of the last token before the (empty) value field.
    pub anchor: usize,
    /// Tokens of the attribute row up to and including the anchor.
    pub attr_span: Range<usize>,
}

/// The model input for parallel decoding: prompt followed by the skeleton
/// output with empty value fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonLayout {
    tokens: TokenSeq,
    slots: Vec<SlotAnchor>,
    structure_spans: Vec<Range<usize>>,
    doc_ids: Vec<String>,
    attributes: Vec<String>,
    prompt_len: usize,
}

impl SkeletonLayout {
    /// Assembles a layout from pre-tokenized parts. Slots must be ordered by
    /// (document, attribute), cover every pair exactly once, and have strictly
    /// increasing anchors.
    pub fn from_parts(
        tokens: TokenSeq,
        slots: Vec<SlotAnchor>,
        structure_spans: Vec<Range<usize>>,
        doc_ids: Vec<String>,
        attributes: Vec<String>,
        prompt_len: usize,
    ) -> Result<Self> {
        let n = attributes.len();
        if slots.len() != doc_ids.len() * n {
            return Err(contract!(
                "{} slots for {} documents x {} attributes",
                slots.len(),
                doc_ids.len(),
                n
            ));
        }
        for (i, s) in slots.iter().enumerate() {
            if (s.doc_index, s.attr_index) != (i / n.max(1), i % n.max(1)) {
                return Err(contract!("slot {i} is out of (document, attribute) order"));
            }
            if s.anchor >= tokens.len() {
                return Err(contract!("slot {i} anchor {} outside layout", s.anchor));
            }
            if i > 0 && s.anchor <= slots[i - 1].anchor {
                return Err(contract!("slot anchors must strictly increase"));
            }
            if s.attr_span.end != s.anchor + 1 || s.attr_span.start > s.anchor {
                return Err(contract!("slot {i} attribute span must end at its anchor"));
            }
        }
        Ok(Self {
            tokens,
            slots,
            structure_spans,
            doc_ids,
            attributes,
            prompt_len,
        })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn slots(&self) -> &[SlotAnchor] {
        &self.slots
    }

    pub fn structure_spans(&self) -> &[Range<usize>] {
        &self.structure_spans
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    /// Length of the shared prompt (instruction, attribute list, documents).
    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    /// Replaces tokens in place, keeping slot geometry. Used to probe which
    /// tokens influence a given slot.
    pub fn with_tokens_replaced(&self, range: Range<usize>, with: &[u32]) -> Self {
        assert_eq!(range.len(), with.len(), "replacement must keep the layout length");
        let mut out = self.clone();
        out.tokens[range].copy_from_slice(with);
        out
    }
}

/// Geometry of a synthetic layout: `prompt_len` prompt tokens, then for each
/// document `doc_open_len` structure tokens, `attributes` keys of `key_len`
/// tokens each (the last one is the anchor), and `close_len` structure tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutShape {
    pub prompt_len: usize,
    pub docs: usize,
    pub attributes: usize,
    pub doc_open_len: usize,
    pub key_len: usize,
    pub close_len: usize,
}

impl LayoutShape {
    /// One document, three 3-token keys after a 10-token prompt, one closing
    /// token: anchors at 12, 15 and 18.
    pub const THREE_SLOTS: Self = Self {
        prompt_len: 10,
        docs: 1,
        attributes: 3,
        doc_open_len: 0,
        key_len: 3,
        close_len: 1,
    };

    /// Builds the layout, taking the token at each index from `token`.
    pub fn build(&self, mut token: impl FnMut(usize) -> u32) -> Result<SkeletonLayout> {
        if self.key_len == 0 || self.prompt_len == 0 {
            return Err(contract!("keys and prompt need at least one token"));
        }
        let mut len = self.prompt_len;
        let mut slots = Vec::with_capacity(self.docs * self.attributes);
        let mut spans = Vec::new();
        for j in 0..self.docs {
            if self.doc_open_len > 0 {
                spans.push(len..len + self.doc_open_len);
                len += self.doc_open_len;
            }
            for n in 0..self.attributes {
                let anchor = len + self.key_len - 1;
                slots.push(SlotAnchor {
                    doc_index: j,
                    attr_index: n,
                    anchor,
                    attr_span: len..anchor + 1,
                });
                len += self.key_len;
            }
            if self.close_len > 0 {
                spans.push(len..len + self.close_len);
                len += self.close_len;
            }
        }
        SkeletonLayout::from_parts(
            (0..len).map(&mut token).collect(),
            slots,
            spans,
            (0..self.docs).map(|j| format!("d{j}")).collect(),
            (0..self.attributes).map(|n| format!("a{n}")).collect(),
            self.prompt_len,
        )
    }
}

/// Builds prompt + skeleton for `docs` using the default template.
pub fn build_skeleton(instruction: &str, docs: &[Document], attrs: &AttributeSet) -> Result<SkeletonLayout> {
    Template::default().build_skeleton(instruction, docs, attrs)
}

impl Template {
    /// Prompt text (instruction, attribute definitions, documents) without any output.
    pub fn build_prompt(&self, instruction: &str, docs: &[Document], attrs: &AttributeSet) -> Result<TokenSeq> {
        check_inputs(docs, attrs)?;
        Ok(tokenize(&self.render_prompt(
            instruction,
            attrs.names(),
            docs.iter().map(|d| (d.id.as_str(), d.text.as_slice())),
        )))
    }

    pub fn build_skeleton(&self, instruction: &str, docs: &[Document], attrs: &AttributeSet) -> Result<SkeletonLayout> {
        let mut tokens = self.build_prompt(instruction, docs, attrs)?;
        let prompt_len = tokens.len();
        let parts = self.row_parts();
        let mut slots = Vec::with_capacity(docs.len() * attrs.len());
        let mut spans = Vec::new();

        let push_structure = |tokens: &mut TokenSeq, spans: &mut Vec<Range<usize>>, text: &str| {
            let start = tokens.len();
            tokens.extend(tokenize(text.as_bytes()));
            if tokens.len() > start {
                spans.push(start..tokens.len());
            }
        };

        push_structure(&mut tokens, &mut spans, self.output_open());
        for (j, doc) in docs.iter().enumerate() {
            push_structure(&mut tokens, &mut spans, &self.doc_open(&doc.id));
            for (n, name) in attrs.names().iter().enumerate() {
                let start = tokens.len();
                tokens.extend(tokenize(parts.head.replace("{name}", name).as_bytes()));
                let anchor = tokens.len() - 1;
                slots.push(SlotAnchor {
                    doc_index: j,
                    attr_index: n,
                    anchor,
                    attr_span: start..anchor + 1,
                });
                push_structure(&mut tokens, &mut spans, &format!("{}\n{}", parts.tail, parts.rest));
            }
            push_structure(&mut tokens, &mut spans, self.doc_close());
        }
        push_structure(&mut tokens, &mut spans, self.output_close());

        SkeletonLayout::from_parts(
            tokens,
            slots,
            spans,
            docs.iter().map(|d| d.id.clone()).collect(),
            attrs.names().to_vec(),
            prompt_len,
        )
    }
}

fn check_inputs(docs: &[Document], attrs: &AttributeSet) -> Result<()> {
    if docs.is_empty() {
        return Err(contract!("at least one document is required"));
    }
    if attrs.is_empty() {
        return Err(contract!("attribute list is empty"));
    }
    for d in docs {
        d.check()?;
        if d.category != attrs.category() {
            return Err(contract!(
                "document {} has category {:?}, attributes are for {:?}",
                d.id,
                d.category,
                attrs.category()
            ));
        }
    }
    for (i, d) in docs.iter().enumerate() {
        if docs[..i].iter().any(|o| o.id == d.id) {
            return Err(contract!("document id {} appears twice in one prompt", d.id));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::detokenize_lossy;

    fn tv_attrs() -> AttributeSet {
        AttributeSet::new(
            "tv",
            vec!["Brand".into(), "Screen Size".into(), "Resolution".into()],
        )
        .unwrap()
    }

    fn tv(id: &str) -> Document {
        Document::new(id, "tv", "Samsung 65 inch 4K UHD Smart TV")
    }

    #[test]
    fn one_doc_three_slots_in_order() {
        let layout = build_skeleton("Extract.", &[tv("a")], &tv_attrs()).unwrap();
        assert_eq!(layout.slots().len(), 3);
        assert!(layout.slots().windows(2).all(|w| w[0].anchor < w[1].anchor));
    }

    #[test]
    fn two_docs_slot_order_is_lexicographic() {
        let layout = build_skeleton("Extract.", &[tv("a"), tv("b")], &tv_attrs()).unwrap();
        let order: Vec<_> = layout.slots().iter().map(|s| (s.doc_index, s.attr_index)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]);
    }

    #[test]
    fn skeleton_text_carries_keys_and_empty_values() {
        let layout = build_skeleton("Extract.", &[tv("a")], &tv_attrs()).unwrap();
        let text = detokenize_lossy(layout.tokens());
        let output = &text[text.find("Output:\n").unwrap() + 8..];
        assert_eq!(
            output,
            "{\n\"a\": {\n\"Brand\": \"\"\n\"Screen Size\": \"\"\n\"Resolution\": \"\"\n}\n}\n"
        );
        for slot in layout.slots() {
            assert_eq!(layout.tokens()[slot.anchor], b'"' as u32);
            let key = detokenize_lossy(&layout.tokens()[slot.attr_span.clone()]);
            assert_eq!(key, format!("\"{}\": \"", tv_attrs().names()[slot.attr_index]));
        }
    }

    #[test]
    fn header_is_shared_across_stacked_documents() {
        let one = build_skeleton("Extract.", &[tv("a")], &tv_attrs()).unwrap();
        let two = build_skeleton("Extract.", &[tv("a"), tv("b")], &tv_attrs()).unwrap();
        let text = detokenize_lossy(two.tokens());
        assert_eq!(text.matches("Attributes:").count(), 1);
        assert_eq!(text.matches("- Brand").count(), 1);
        assert!(two.prompt_len() > one.prompt_len());
    }

    #[test]
    fn contract_violations() {
        let other = Document::new("x", "phone", "Pixel");
        assert!(build_skeleton("", &[tv("a"), other], &tv_attrs()).is_err());
        let empty = AttributeSet::new("tv", vec![]).unwrap();
        assert!(build_skeleton("", &[tv("a")], &empty).is_err());
        assert!(build_skeleton("", &[], &tv_attrs()).is_err());
        assert!(build_skeleton("", &[Document::new("", "tv", "x")], &tv_attrs()).is_err());
        assert!(build_skeleton("", &[Document::new("a", "tv", "")], &tv_attrs()).is_err());
        assert!(AttributeSet::new("tv", vec!["a".into(), "a".into()]).is_err());
    }
}
