//! Gumbel-max watermark: distortion-free embedding and offset-scanning
//! detection.
//!
//! Embedding replaces every categorical draw of the reverse process with
//! `argmax_x ln(r_x) / p_x` over the position's keyed uniform vector, which
//! leaves each row's sampling law unchanged while making the output a
//! deterministic function of `(model, schedule, key)`. Detection rebuilds the
//! uniforms from the key and scores `(1/L) sum_i -ln(1 - r_{i, x_i})`: about
//! 1 on independent text, higher when the tokens were chosen to ride the
//! large `r` values. Seeds repeat with period `m`, so scanning all offsets
//! re-aligns the score after a prefix deletion.

use crate::diffusion::{reverse_diffuse, Schedule, ToyModel};
use crate::error::{Error, Result};
use crate::prf::{derive_uniforms, effective_seed, uniform_at, UniformVector};
use crate::types::{DetectionReport, SequenceState, WatermarkKey};

/// Threshold preset tuned for low-entropy completions (math/logic style).
pub const TAU_PRESET_STRICT: f64 = 1.015;
/// Threshold preset tuned for open-ended generation.
pub const TAU_PRESET_OPEN_ENDED: f64 = 1.11;
/// Default seed modulus; small relative to typical sequence lengths.
pub const DEFAULT_MODULUS: u32 = 16;

/// Argmax of `ln(r_x) / p_x`. Zero-probability tokens score negative
/// infinity and are never returned; ties break toward the lowest index.
pub fn gumbel_select(p_row: &[f64], r_row: &UniformVector) -> Result<usize> {
    debug_assert_eq!(p_row.len(), r_row.len());
    let ln_r: Vec<f64> = r_row.values().iter().map(|r| r.ln()).collect();
    select_from_ln(p_row, &ln_r)
}

fn select_from_ln(p_row: &[f64], ln_r: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (x, &p) in p_row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let score = ln_r[x] / p;
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((x, score)),
        }
    }
    best.map(|(x, _)| x).ok_or(Error::AllZeroRow { row: 0 })
}

/// Log-uniform vectors for the seed classes a sequence of length `d` can
/// touch, derived lazily and shared across steps (the vectors do not depend
/// on the diffusion step).
struct LnUniformCache<'k> {
    key: &'k WatermarkKey,
    vocab_size: usize,
    per_class: Vec<Option<Vec<f64>>>,
}

impl<'k> LnUniformCache<'k> {
    fn new(key: &'k WatermarkKey, vocab_size: usize) -> Self {
        Self {
            key,
            vocab_size,
            per_class: vec![None; key.modulus() as usize],
        }
    }

    fn class_for_position(&mut self, position_1based: usize) -> &[f64] {
        let class = effective_seed(position_1based, 0, self.key.modulus());
        let slot = &mut self.per_class[class as usize];
        if slot.is_none() {
            let r = derive_uniforms(self.key, class, self.vocab_size);
            *slot = Some(r.values().iter().map(|v| v.ln()).collect());
        }
        slot.as_deref().unwrap()
    }
}

/// Watermarked generation: the full reverse process with every token choice
/// made by [`gumbel_select`] against the position's keyed uniforms.
/// Embedding always runs at offset 0; no free randomness remains, so the
/// output is a pure function of `(model, schedule, d, key)`.
pub fn generate_watermarked(
    model: &ToyModel,
    schedule: &Schedule,
    d: usize,
    key: &WatermarkKey,
) -> Result<Vec<usize>> {
    let mut cache = LnUniformCache::new(key, model.vocab().size());
    reverse_diffuse(model, schedule, d, |ctx, row| {
        let ln_r = cache.class_for_position(ctx.position + 1);
        select_from_ln(row, ln_r)
    })
}

/// Tokens selected at the first reverse step (fully masked prediction),
/// before any re-masking. With `m >= d` the per-position choices are
/// independent, which makes the joint law enumerable for small models.
pub fn first_step_tokens(model: &ToyModel, d: usize, key: &WatermarkKey) -> Result<Vec<usize>> {
    let state = SequenceState::all_masked(d, model.vocab())?;
    let probs = model.predict(&state);
    let mut cache = LnUniformCache::new(key, model.vocab().size());
    (0..d)
        .map(|i| select_from_ln(probs.row(i), cache.class_for_position(i + 1)))
        .collect()
}

/// Normalized score of a token sequence at one alignment offset:
/// `(1/L) sum_i -ln(1 - r_{i, x_i})` with the uniforms reseeded by
/// `(i + offset) mod m`. Expectation 1 on independent text.
pub fn detection_score(tokens: &[usize], key: &WatermarkKey, offset: u32) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut total = 0.0;
    for (idx, &tok) in tokens.iter().enumerate() {
        let class = effective_seed(idx + 1, offset, key.modulus());
        let r = uniform_at(key, class, tok);
        total -= (1.0 - r).ln();
    }
    Ok(total / tokens.len() as f64)
}

/// Scores every offset in `{0, ..., m-1}` and reports the best alignment.
/// The verdict is "watermarked" iff any offset exceeds `threshold`; all
/// offsets are computed so the report carries the full statistic vector.
pub fn detect(tokens: &[usize], key: &WatermarkKey, threshold: f64) -> Result<DetectionReport> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    let m = key.modulus() as usize;
    let max_token = *tokens.iter().max().expect("nonempty");

    // Bulk route: one table of -ln(1 - r) per seed class, then each offset
    // is a sum of table lookups. Must agree bit-exactly with the per-element
    // route in `detection_score`.
    let tables: Vec<Vec<f64>> = (0..m as u32)
        .map(|class| {
            derive_uniforms(key, class, max_token + 1)
                .values()
                .iter()
                .map(|r| -(1.0 - r).ln())
                .collect()
        })
        .collect();

    let len = tokens.len() as f64;
    let per_offset: Vec<f64> = (0..m)
        .map(|s| {
            let mut total = 0.0;
            for (idx, &tok) in tokens.iter().enumerate() {
                let class = (idx + 1 + s) % m;
                total += tables[class][tok];
            }
            total / len
        })
        .collect();

    Ok(DetectionReport::from_offset_statistics(per_offset, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::sample_unwatermarked;
    use crate::types::Vocabulary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn key(m: u32) -> WatermarkKey {
        WatermarkKey::new([0x5A; 32], m).unwrap()
    }

    fn uniforms(values: Vec<f64>) -> UniformVector {
        UniformVector::from_values(values)
    }

    #[test]
    fn select_prefers_hand_computed_score() {
        // p = (0.5, 0.5), r = (0.9, 0.4): scores -0.2107 vs -1.8326.
        let scores = [0.9f64.ln() / 0.5, 0.4f64.ln() / 0.5];
        assert!((scores[0] - -0.210_721).abs() < 1e-6);
        assert!((scores[1] - -1.832_581).abs() < 1e-6);
        assert_eq!(gumbel_select(&[0.5, 0.5], &uniforms(vec![0.9, 0.4])), Ok(0));
    }

    #[test]
    fn select_point_mass_and_zero_rows() {
        let r = uniforms(vec![0.2, 0.99, 0.99]);
        // Point mass: zero-probability tokens score -inf and lose.
        assert_eq!(gumbel_select(&[1.0, 0.0, 0.0], &r), Ok(0));
        assert_eq!(
            gumbel_select(&[0.0, 0.0, 0.0], &r),
            Err(Error::AllZeroRow { row: 0 })
        );
        // Exact tie between equal (p, r) pairs goes to the lowest index.
        let tie = uniforms(vec![0.7, 0.7]);
        assert_eq!(gumbel_select(&[0.5, 0.5], &tie), Ok(0));
    }

    #[test]
    fn select_uniform_row_is_argmax_r() {
        let k = key(8);
        let r = derive_uniforms(&k, 3, 16);
        let p = vec![1.0 / 16.0; 16];
        let selected = gumbel_select(&p, &r).unwrap();
        let argmax = r
            .values()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(selected, argmax);
    }

    #[test]
    fn generation_is_deterministic() {
        let vocab = Vocabulary::with_mask(8).unwrap();
        let model = ToyModel::uniform(vocab);
        let schedule = Schedule::new(4).unwrap();
        let a = generate_watermarked(&model, &schedule, 12, &key(16)).unwrap();
        let b = generate_watermarked(&model, &schedule, 12, &key(16)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&t| t != vocab.mask_id()));
    }

    #[test]
    fn point_mass_model_matches_unwatermarked_output() {
        let vocab = Vocabulary::with_mask(3).unwrap();
        let tables = vec![vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]];
        let model = ToyModel::factorized(vocab, tables).unwrap();
        let schedule = Schedule::new(2).unwrap();
        let wm = generate_watermarked(&model, &schedule, 2, &key(16)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plain = sample_unwatermarked(&model, &schedule, 2, &mut rng).unwrap();
        assert_eq!(wm, plain);
        assert_eq!(wm, vec![1, 2]);
    }

    #[test]
    fn detection_score_hand_value() {
        // Two tokens whose selected r values are (0.5, 0.75):
        // score = (ln 2 + ln 4) / 2 = 1.0397207708399179.
        // Build the identity directly from the formula, then check the
        // function against uniforms probed from a real key.
        let expect = (2f64.ln() + 4f64.ln()) / 2.0;
        assert!((expect - 1.039_720_770_839_917_9).abs() < 1e-15);

        let k = key(4);
        let tokens = vec![5, 9];
        let manual: f64 = tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let class = effective_seed(i + 1, 0, 4);
                -(1.0 - uniform_at(&k, class, t)).ln()
            })
            .sum::<f64>()
            / 2.0;
        assert_eq!(detection_score(&tokens, &k, 0).unwrap(), manual);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        assert_eq!(detection_score(&[], &key(4), 0), Err(Error::EmptySequence));
        assert_eq!(detect(&[], &key(4), 1.0).map(|_| ()), Err(Error::EmptySequence));
    }

    #[test]
    fn detect_matches_per_offset_scores_bit_exactly() {
        // Bulk-table route vs per-element route.
        let k = key(8);
        let tokens: Vec<usize> = (0..50).map(|i| (i * 13 + 5) % 40).collect();
        let report = detect(&tokens, &k, 1.0).unwrap();
        assert_eq!(report.per_offset_statistics.len(), 8);
        for s in 0..8u32 {
            assert_eq!(
                report.per_offset_statistics[s as usize],
                detection_score(&tokens, &k, s).unwrap(),
                "offset {s}"
            );
        }
    }

    #[test]
    fn fresh_generation_detects_at_offset_zero() {
        let vocab = Vocabulary::with_mask(64).unwrap();
        let model = ToyModel::uniform(vocab);
        let schedule = Schedule::new(4).unwrap();
        let k = key(16);
        let tokens = generate_watermarked(&model, &schedule, 48, &k).unwrap();
        let report = detect(&tokens, &k, TAU_PRESET_OPEN_ENDED).unwrap();
        assert!(report.is_watermarked());
        assert_eq!(report.best_offset, 0);
        // Round trip: offset-0 scoring reuses exactly the embedded uniforms,
        // so the statistic is far above the unwatermarked expectation of 1.
        assert!(report.best_statistic > 2.0, "{}", report.best_statistic);
    }

    #[test]
    fn seed_reuse_repeats_every_m_positions() {
        let k = key(4);
        let a = derive_uniforms(&k, effective_seed(3, 0, 4), 10);
        let b = derive_uniforms(&k, effective_seed(7, 0, 4), 10);
        assert_eq!(a, b);
    }
}
