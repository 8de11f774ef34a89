use super::ForwardStep;

/// Append-only key/value store.
///
/// Entries are kept in the order they were forwarded. Each entry carries the
/// logical position ID it was forwarded with and a live flag (false for batch
/// padding). Position IDs need not be monotone in memory order.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    width: usize,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    positions: Vec<usize>,
    live: Vec<bool>,
}

impl KvCache {
    /// `width` is the per-layer key (and value) length of one entry.
    pub fn new(num_layers: usize, width: usize) -> Self {
        Self {
            width,
            keys: vec![Vec::new(); num_layers],
            values: vec![Vec::new(); num_layers],
            positions: Vec::new(),
            live: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.keys.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn live(&self) -> &[bool] {
        &self.live
    }

    /// Registers new entries. Layer tensors are filled separately via [`KvCache::extend_layer`].
    pub(crate) fn push_entries(&mut self, step: &ForwardStep<'_>) {
        self.positions.extend_from_slice(step.position_ids);
        self.live.extend((0..step.tokens.len()).map(|i| !step.is_padding(i)));
    }

    pub(crate) fn extend_layer(&mut self, layer: usize, keys: &[f32], values: &[f32]) {
        self.keys[layer].extend_from_slice(keys);
        self.values[layer].extend_from_slice(values);
        debug_assert!(self.keys[layer].len() <= self.positions.len() * self.width);
    }

    pub fn layer_keys(&self, layer: usize) -> &[f32] {
        &self.keys[layer]
    }

    pub fn layer_values(&self, layer: usize) -> &[f32] {
        &self.values[layer]
    }

    /// Overwrites the logical position of an existing entry. Only meant for
    /// fault-injection tests of the decode oracles.
    #[doc(hidden)]
    pub fn corrupt_position(&mut self, entry: usize, position: usize) {
        self.positions[entry] = position;
    }
}
