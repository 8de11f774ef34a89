use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::Sampling;
use crate::error::{contract, Result};
use crate::tokenizer::TokenId;

/// Picks a token from one logit row.
///
/// Greedy takes the argmax, lowest ID on ties. Temperature sampling divides
/// by `tau` and draws from the softmax with `rng`.
pub fn sample(row: &[f32], sampling: Sampling, rng: &mut impl Rng) -> Result<TokenId> {
    if row.is_empty() {
        return Err(contract!("empty logit row"));
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(contract!("non-finite logits"));
    }
    match sampling {
        Sampling::Greedy => Ok(argmax(row)),
        Sampling::Temperature(tau) => {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(contract!("temperature must be positive, got {tau}"));
            }
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let weights: Vec<f64> = row
                .iter()
                .map(|&v| ((v as f64 - max) / tau as f64).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    return Ok(i as TokenId);
                }
                u -= w;
            }
            // Rounding left `u` past the last bucket; fall back to the mode.
            Ok(argmax(row))
        }
    }
}

fn argmax(row: &[f32]) -> TokenId {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Sampling mode plus its seeded random stream.
#[derive(Debug, Clone)]
pub struct Sampler {
    sampling: Sampling,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(sampling: Sampling, seed: u64) -> Result<Self> {
        if let Sampling::Temperature(tau) = sampling {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(contract!("temperature must be positive, got {tau}"));
            }
        }
        Ok(Self {
            sampling,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn sample(&mut self, row: &[f32]) -> Result<TokenId> {
        sample(row, self.sampling, &mut self.rng)
    }
}
