//! Seeded random-weight decoder-only transformer.
//!
//! Pre-norm blocks (RMSNorm, rotary multi-head attention, SiLU MLP), f32
//! throughout. Every row of every matmul and every attention reduction is
//! computed independently in a fixed order, so the result for a token does not
//! depend on how its forward call was chunked or batched. Masked keys are left
//! out of the softmax normalizer entirely rather than given a large negative
//! score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Backend, ForwardStep, KvCache, Logits, ModelConfig};
use crate::error::{contract, Result};

const MLP_RATIO: usize = 4;
const NORM_EPS: f32 = 1e-5;

/// Dense `[in][out]` row-major matrix.
#[derive(Debug, Clone)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        Self { rows, cols, data }
    }

    /// `x` is `n x rows`; returns `n x cols`.
    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let n = x.len() / self.rows;
        let mut out = vec![0.0f32; n * self.cols];
        out.par_chunks_mut(self.cols)
            .zip(x.par_chunks(self.rows))
            .for_each(|(o, xr)| {
                for (i, &xi) in xr.iter().enumerate() {
                    let w = &self.data[i * self.cols..(i + 1) * self.cols];
                    for (oj, &wj) in o.iter_mut().zip(w) {
                        *oj += xi * wj;
                    }
                }
            });
        out
    }
}

#[derive(Debug, Clone)]
struct Layer {
    attn_norm: Vec<f32>,
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
    mlp_norm: Vec<f32>,
    w_up: Matrix,
    w_down: Matrix,
}

#[derive(Debug, Clone)]
pub struct TinyModel {
    config: ModelConfig,
    embed: Matrix,
    layers: Vec<Layer>,
    final_norm: Vec<f32>,
    lm_head: Matrix,
    inv_freq: Vec<f64>,
}

impl TinyModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let fan = |n: usize| 1.0 / (n as f32).sqrt();

        let embed = Matrix::random(&mut rng, config.vocab_size, d, 1.0);
        let layers = (0..config.num_layers)
            .map(|_| Layer {
                attn_norm: vec![1.0; d],
                wq: Matrix::random(&mut rng, d, d, fan(d) * 2.0),
                wk: Matrix::random(&mut rng, d, d, fan(d) * 2.0),
                wv: Matrix::random(&mut rng, d, d, fan(d)),
                wo: Matrix::random(&mut rng, d, d, fan(d)),
                mlp_norm: vec![1.0; d],
                w_up: Matrix::random(&mut rng, d, d * MLP_RATIO, fan(d)),
                w_down: Matrix::random(&mut rng, d * MLP_RATIO, d, fan(d * MLP_RATIO)),
            })
            .collect();
        let lm_head = Matrix::random(&mut rng, d, config.vocab_size, fan(d) * 4.0);

        let half = config.head_dim / 2;
        let inv_freq = (0..half)
            .map(|i| config.rope_base.powf(-(2.0 * i as f64) / config.head_dim as f64))
            .collect();

        Ok(Self {
            config,
            embed,
            layers,
            final_norm: vec![1.0; d],
            lm_head,
            inv_freq,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// FNV-1a over the bit patterns of the first layer's query projection.
    pub fn first_layer_checksum(&self) -> u64 {
        self.layers[0]
            .wq
            .data
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, w| {
                (h ^ w.to_bits() as u64).wrapping_mul(0x0000_0100_0000_01b3)
            })
    }

    fn rms_norm(&self, x: &[f32], gain: &[f32]) -> Vec<f32> {
        let d = self.config.hidden_dim;
        let mut out = vec![0.0f32; x.len()];
        out.par_chunks_mut(d).zip(x.par_chunks(d)).for_each(|(o, r)| {
            let ms = r.iter().map(|v| v * v).sum::<f32>() / d as f32;
            let inv = 1.0 / (ms + NORM_EPS).sqrt();
            for ((oi, &ri), &g) in o.iter_mut().zip(r).zip(gain) {
                *oi = ri * inv * g;
            }
        });
        out
    }

    /// Rotates each head of each row in place (half-split pairing).
    fn apply_rope(&self, x: &mut [f32], positions: &[usize]) {
        let d = self.config.hidden_dim;
        let hd = self.config.head_dim;
        let half = hd / 2;
        x.par_chunks_mut(d)
            .zip(positions.par_iter())
            .for_each(|(row, &pos)| {
                let (cos, sin): (Vec<f32>, Vec<f32>) = self
                    .inv_freq
                    .iter()
                    .map(|f| {
                        let angle = pos as f64 * f;
                        (angle.cos() as f32, angle.sin() as f32)
                    })
                    .unzip();
                for head in row.chunks_mut(hd) {
                    for i in 0..half {
                        let a = head[i];
                        let b = head[i + half];
                        head[i] = a * cos[i] - b * sin[i];
                        head[i + half] = a * sin[i] + b * cos[i];
                    }
                }
            });
    }

    fn attend(&self, q: &[f32], cache: &KvCache, layer: usize, step: &ForwardStep<'_>) -> Vec<f32> {
        let d = self.config.hidden_dim;
        let hd = self.config.head_dim;
        let scale = 1.0 / (hd as f32).sqrt();
        let keys = cache.layer_keys(layer);
        let values = cache.layer_values(layer);
        let mut out = vec![0.0f32; q.len()];
        out.par_chunks_mut(d)
            .zip(q.par_chunks(d))
            .enumerate()
            .for_each(|(qi, (o, qrow))| {
                let visible: Vec<usize> = step.mask.allowed_keys(qi).collect();
                if visible.is_empty() {
                    return;
                }
                let mut scores = vec![0.0f32; visible.len()];
                for h in 0..self.config.num_heads {
                    let qh = &qrow[h * hd..(h + 1) * hd];
                    for (s, &k) in scores.iter_mut().zip(&visible) {
                        let kh = &keys[k * d + h * hd..k * d + (h + 1) * hd];
                        *s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f32>() * scale;
                    }
                    let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let mut norm = 0.0f32;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        norm += *s;
                    }
                    let oh = &mut o[h * hd..(h + 1) * hd];
                    for (&w, &k) in scores.iter().zip(&visible) {
                        let vh = &values[k * d + h * hd..k * d + (h + 1) * hd];
                        let w = w / norm;
                        for (a, &v) in oh.iter_mut().zip(vh) {
                            *a += w * v;
                        }
                    }
                }
            });
        out
    }
}

impl Backend for TinyModel {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn max_position(&self) -> usize {
        self.config.max_position
    }

    fn new_cache(&self) -> KvCache {
        KvCache::new(self.config.num_layers, self.config.hidden_dim)
    }

    fn forward(&self, step: &ForwardStep<'_>, cache: &mut KvCache) -> Result<Logits> {
        step.validate(cache, self.config.vocab_size, self.config.max_position)?;
        if cache.num_layers() != self.config.num_layers || cache.width() != self.config.hidden_dim {
            return Err(contract!("cache geometry does not match the model"));
        }
        let d = self.config.hidden_dim;
        cache.push_entries(step);

        let mut h: Vec<f32> = step
            .tokens
            .iter()
            .flat_map(|&t| self.embed.data[t as usize * d..(t as usize + 1) * d].iter().copied())
            .collect();

        for (l, layer) in self.layers.iter().enumerate() {
            let x = self.rms_norm(&h, &layer.attn_norm);
            let mut q = layer.wq.apply(&x);
            let mut k = layer.wk.apply(&x);
            let v = layer.wv.apply(&x);
            self.apply_rope(&mut q, step.position_ids);
            self.apply_rope(&mut k, step.position_ids);
            cache.extend_layer(l, &k, &v);

            let attn = self.attend(&q, cache, l, step);
            for (hi, oi) in h.iter_mut().zip(layer.wo.apply(&attn)) {
                *hi += oi;
            }

            let x = self.rms_norm(&h, &layer.mlp_norm);
            let mut up = layer.w_up.apply(&x);
            for u in up.iter_mut() {
                *u = *u / (1.0 + (-*u).exp());
            }
            for (hi, oi) in h.iter_mut().zip(layer.w_down.apply(&up)) {
                *hi += oi;
            }
        }

        let x = self.rms_norm(&h, &self.final_norm);
        Ok(Logits::from_rows(self.config.vocab_size, self.lm_head.apply(&x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionMask;
    use crate::tokenizer::tokenize;

    fn toy() -> TinyModel {
        TinyModel::new(ModelConfig::toy(7)).unwrap()
    }

    fn run(model: &TinyModel, tokens: &[u32], positions: &[usize], mask: &AttentionMask) -> Logits {
        let mut cache = model.new_cache();
        model
            .forward(&ForwardStep::new(tokens, positions, mask), &mut cache)
            .unwrap()
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(toy().first_layer_checksum(), toy().first_layer_checksum());
        let other = TinyModel::new(ModelConfig::toy(8)).unwrap();
        assert_ne!(toy().first_layer_checksum(), other.first_layer_checksum());
    }

    #[test]
    fn rows_and_cache_growth() {
        let model = toy();
        let tokens = tokenize(b"hello");
        let mut cache = model.new_cache();
        let mask = AttentionMask::causal(0, 5);
        let logits = model
            .forward(&ForwardStep::new(&tokens, &[0, 1, 2, 3, 4], &mask), &mut cache)
            .unwrap();
        assert_eq!(logits.num_rows(), 5);
        assert_eq!(cache.len(), 5);
        assert_eq!(cache.layer_keys(3).len(), 5 * 64);
        assert!(logits.rows().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn position_beyond_capacity_is_rejected_without_mutation() {
        let model = toy();
        let mut cache = model.new_cache();
        let mask = AttentionMask::causal(0, 1);
        let err = model
            .forward(&ForwardStep::new(&[65], &[8192], &mask), &mut cache)
            .unwrap_err();
        assert!(matches!(err, crate::HpdError::Capacity(_)));
        assert!(cache.is_empty());
    }

    #[test]
    fn mask_shape_mismatch_is_contract_error() {
        let model = toy();
        let mut cache = model.new_cache();
        let mask = AttentionMask::causal(0, 3);
        let err = model
            .forward(&ForwardStep::new(&[65, 66], &[0, 1], &mask), &mut cache)
            .unwrap_err();
        assert!(matches!(err, crate::HpdError::Contract(_)));
    }

    #[test]
    fn masked_key_token_has_no_influence() {
        // Token 3 sits at logical position 50 so no other query can see it.
        let model = toy();
        let positions = [0, 1, 2, 50, 3, 4];
        let mask = AttentionMask::from_fn(6, 6, |q, k| positions[k] <= positions[q]);
        let a = run(&model, &tokenize(b"abcdef"), &positions, &mask);
        let b = run(&model, &tokenize(b"abcZef"), &positions, &mask);
        for r in [0, 1, 2, 4, 5] {
            assert_eq!(a.row(r), b.row(r), "row {r} leaked the masked key");
        }
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn repeat_runs_are_bit_identical() {
        let model = toy();
        let tokens = tokenize(b"determinism");
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let mask = AttentionMask::causal(0, tokens.len());
        assert_eq!(
            run(&model, &tokens, &positions, &mask),
            run(&model, &tokens, &positions, &mask)
        );
    }
}
