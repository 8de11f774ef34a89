use super::{Backend, ForwardStep, KvCache, Logits};
use crate::error::{contract, Result};
use crate::tokenizer::{TokenId, DELIM};

/// Makes a backend end values early: whenever a row's greedy choice falls in
/// the residue class `token % modulus == 0`, the delimiter is lifted just
/// above it. The rewrite depends only on the row's own logits, so any two
/// decoders that agree on the inner model's logits still agree afterwards.
/// Random weights rarely pick the delimiter on their own; this gives them
/// data-dependent value lengths.
#[derive(Debug, Clone)]
pub struct EarlyStop<B> {
    inner: B,
    modulus: TokenId,
}

impl<B: Backend> EarlyStop<B> {
    pub fn new(inner: B, modulus: TokenId) -> Result<Self> {
        if modulus == 0 {
            return Err(contract!("modulus must be positive"));
        }
        Ok(Self { inner, modulus })
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for EarlyStop<B> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn max_position(&self) -> usize {
        self.inner.max_position()
    }

    fn new_cache(&self) -> KvCache {
        self.inner.new_cache()
    }

    fn forward(&self, step: &ForwardStep<'_>, cache: &mut KvCache) -> Result<Logits> {
        let mut logits = self.inner.forward(step, cache)?;
        for i in 0..logits.num_rows() {
            let row = logits.row_mut(i);
            let (best, max) = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |(b, m), (t, &x)| if x > m { (t, x) } else { (b, m) });
            if best as TokenId % self.modulus == 0 {
                row[DELIM as usize] = max + 1.0;
            }
        }
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttentionMask, ModelConfig, TinyModel};

    #[test]
    fn modulus_one_always_stops() {
        let b = EarlyStop::new(TinyModel::new(ModelConfig::toy(3)).unwrap(), 1).unwrap();
        let tokens = [65, 66, 67];
        let positions = [0, 1, 2];
        let mask = AttentionMask::causal(0, 3);
        let logits = b.forward(&ForwardStep::new(&tokens, &positions, &mask), &mut b.new_cache()).unwrap();
        for row in logits.rows() {
            let best = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            assert_eq!(row[DELIM as usize], best);
        }
    }

    #[test]
    fn zero_modulus_rejected() {
        assert!(EarlyStop::new(TinyModel::new(ModelConfig::toy(3)).unwrap(), 0).is_err());
    }
}
