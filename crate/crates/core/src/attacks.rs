//! Bounded text modifications for robustness evaluation: prefix deletion,
//! random substitution, and suffix truncation. All attacks are deterministic
//! given their RNG stream, so attack-then-detect pipelines replay exactly
//! from a recorded seed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Vocabulary;

/// One attack step; arrays of these apply in order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    DeletePrefix { k: usize },
    SubstituteRandom { rho: f64 },
    TruncateSuffix { keep: usize },
}

/// Drops the first `k` tokens. `k = 0` is the identity; `k` must leave at
/// least one token.
pub fn delete_prefix(tokens: &[usize], k: usize) -> Result<Vec<usize>> {
    if k >= tokens.len() {
        return Err(Error::KOutOfRange { k, len: tokens.len() });
    }
    Ok(tokens[k..].to_vec())
}

/// Keeps the first `keep` tokens, `1 <= keep <= L`.
pub fn truncate_suffix(tokens: &[usize], keep: usize) -> Result<Vec<usize>> {
    if keep == 0 || keep > tokens.len() {
        return Err(Error::KOutOfRange { k: keep, len: tokens.len() });
    }
    Ok(tokens[..keep].to_vec())
}

/// Replaces `round(rho * L)` distinct, uniformly chosen positions with
/// uniform random non-mask tokens (the mask never appears in finished text,
/// so substitutions exclude it too).
pub fn substitute_random<R: Rng>(
    tokens: &[usize],
    rho: f64,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::BadFraction(rho));
    }
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    let l = tokens.len();
    let count = (rho * l as f64).round_ties_even() as usize;
    let mut out = tokens.to_vec();

    // Partial Fisher-Yates picks the positions without replacement.
    let mut indices: Vec<usize> = (0..l).collect();
    for i in 0..count {
        let j = rng.gen_range(i..l);
        indices.swap(i, j);
        let fresh = rng.gen_range(0..vocab.regular_count());
        out[indices[i]] = vocab.regular_token_at(fresh);
    }
    Ok(out)
}

/// Applies a pipeline of attacks in order.
pub fn apply_attacks<R: Rng>(
    tokens: &[usize],
    specs: &[AttackSpec],
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut current = tokens.to_vec();
    for spec in specs {
        current = match *spec {
            AttackSpec::DeletePrefix { k } => delete_prefix(&current, k)?,
            AttackSpec::SubstituteRandom { rho } => substitute_random(&current, rho, vocab, rng)?,
            AttackSpec::TruncateSuffix { keep } => truncate_suffix(&current, keep)?,
        };
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn delete_prefix_cases() {
        let tokens: Vec<usize> = (1..=10).collect();
        assert_eq!(delete_prefix(&tokens, 0).unwrap(), tokens);
        let out = delete_prefix(&tokens, 3).unwrap();
        assert_eq!(out, (4..=10).collect::<Vec<_>>());
        assert_eq!(
            delete_prefix(&tokens, 10).unwrap_err(),
            Error::KOutOfRange { k: 10, len: 10 }
        );
    }

    #[test]
    fn truncate_cases() {
        let tokens: Vec<usize> = (0..8).collect();
        assert_eq!(truncate_suffix(&tokens, 8).unwrap(), tokens);
        assert_eq!(truncate_suffix(&tokens, 1).unwrap(), vec![0]);
        assert!(truncate_suffix(&tokens, 0).is_err());
        assert!(truncate_suffix(&tokens, 9).is_err());
    }

    #[test]
    fn substitute_extremes() {
        let vocab = Vocabulary::with_mask(6).unwrap();
        let tokens = vec![0usize; 50];
        let same = substitute_random(&tokens, 0.0, &vocab, &mut rng(1)).unwrap();
        assert_eq!(same, tokens);

        // rho = 1 touches every position; replacements never hit the mask.
        let all = substitute_random(&tokens, 1.0, &vocab, &mut rng(2)).unwrap();
        assert_eq!(all.len(), tokens.len());
        assert!(all.iter().all(|&t| t < 6));

        assert!(substitute_random(&tokens, 1.5, &vocab, &mut rng(3)).is_err());
    }

    #[test]
    fn substitute_touches_expected_count() {
        let vocab = Vocabulary::with_mask(100).unwrap();
        // A sentinel value outside the replacement range marks untouched
        // positions (mask_id = 100 is never drawn as a replacement).
        let tokens = vec![100usize; 40];
        let out = substitute_random(&tokens, 0.25, &vocab, &mut rng(5)).unwrap();
        let touched = out.iter().filter(|&&t| t != 100).count();
        assert_eq!(touched, 10);
    }

    #[test]
    fn attack_pipeline_is_reproducible() {
        let vocab = Vocabulary::with_mask(12).unwrap();
        let tokens: Vec<usize> = (0..30).map(|i| i % 12).collect();
        let specs = vec![
            AttackSpec::DeletePrefix { k: 3 },
            AttackSpec::SubstituteRandom { rho: 0.1 },
            AttackSpec::TruncateSuffix { keep: 20 },
        ];
        let a = apply_attacks(&tokens, &specs, &vocab, &mut rng(9)).unwrap();
        let b = apply_attacks(&tokens, &specs, &vocab, &mut rng(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
    }

    #[test]
    fn spec_json_round_trip() {
        let json = r#"[{"op":"delete_prefix","k":3},
                       {"op":"substitute_random","rho":0.1},
                       {"op":"truncate_suffix","keep":5}]"#;
        let specs: Vec<AttackSpec> = serde_json::from_str(json).unwrap();
        assert_eq!(specs.len(), 3);
        let back = serde_json::to_string(&specs).unwrap();
        let again: Vec<AttackSpec> = serde_json::from_str(&back).unwrap();
        assert_eq!(specs, again);
    }
}
