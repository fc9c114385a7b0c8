//! Shared domain types: vocabulary, sequence state, probability matrices,
//! watermark keys, and detection reports.
//!
//! All types here are immutable after construction and safe to share across
//! threads. Token ids are dense integers in `[0, size)`; the distinguished
//! mask token is part of the vocabulary.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability-row sums. Rows within this tolerance of 1 are
/// accepted and renormalized before use; anything further off is rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Finite token alphabet with a distinguished mask token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    size: usize,
    mask_id: usize,
}

impl Vocabulary {
    pub fn new(size: usize, mask_id: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::VocabTooSmall(size));
        }
        if mask_id >= size {
            return Err(Error::MaskOutOfRange { mask_id, size });
        }
        Ok(Self { size, mask_id })
    }

    /// Vocabulary of `regular` ordinary tokens `0..regular` plus a mask token
    /// appended as the last id.
    pub fn with_mask(regular: usize) -> Result<Self> {
        Self::new(regular + 1, regular)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mask_id(&self) -> usize {
        self.mask_id
    }

    /// Number of non-mask tokens.
    pub fn regular_count(&self) -> usize {
        self.size - 1
    }

    /// Iterates over non-mask token ids in increasing order.
    pub fn regular_tokens(&self) -> impl Iterator<Item = usize> + '_ {
        let mask = self.mask_id;
        (0..self.size).filter(move |&t| t != mask)
    }

    /// Maps an index in `[0, regular_count)` onto the corresponding non-mask
    /// token id.
    pub fn regular_token_at(&self, index: usize) -> usize {
        debug_assert!(index < self.regular_count());
        if index < self.mask_id {
            index
        } else {
            index + 1
        }
    }
}

/// A length-`d` token vector with per-position mask flags and diffusion time.
///
/// Invariant: every flagged position holds exactly the vocabulary's mask id,
/// and no unflagged position does.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceState {
    tokens: Vec<usize>,
    masked: Vec<bool>,
    t: f64,
}

impl SequenceState {
    pub fn new(tokens: Vec<usize>, masked: Vec<bool>, t: f64, vocab: &Vocabulary) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::ZeroLength);
        }
        if tokens.len() != masked.len() {
            return Err(Error::LengthMismatch(tokens.len(), masked.len()));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidTime(t));
        }
        let state = Self { tokens, masked, t };
        state.check_consistency(vocab)?;
        Ok(state)
    }

    /// Fully masked state at diffusion time t = 1.
    pub fn all_masked(d: usize, vocab: &Vocabulary) -> Result<Self> {
        if d == 0 {
            return Err(Error::ZeroLength);
        }
        Ok(Self {
            tokens: vec![vocab.mask_id(); d],
            masked: vec![true; d],
            t: 1.0,
        })
    }

    fn check_consistency(&self, vocab: &Vocabulary) -> Result<()> {
        for (i, (&tok, &m)) in self.tokens.iter().zip(&self.masked).enumerate() {
            if tok >= vocab.size() {
                return Err(Error::MaskOutOfRange {
                    mask_id: tok,
                    size: vocab.size(),
                });
            }
            if m != (tok == vocab.mask_id()) {
                return Err(Error::LengthMismatch(i, i));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn masked(&self) -> &[bool] {
        &self.masked
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked[i]
    }

    pub fn token(&self, i: usize) -> usize {
        self.tokens[i]
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub(crate) fn from_parts_unchecked(
        tokens: Vec<usize>,
        masked: Vec<bool>,
        t: f64,
        vocab: &Vocabulary,
    ) -> Self {
        let state = Self { tokens, masked, t };
        debug_assert!(state.check_consistency(vocab).is_ok());
        state
    }
}

/// Checks that each row is a probability distribution: nonnegative entries
/// and a sum within [`ROW_SUM_TOLERANCE`] of 1.
///
/// Pure and idempotent; never mutates its input.
pub fn validate_rows(rows: &[Vec<f64>]) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::NonStochasticRow { row: i, sum });
        }
    }
    Ok(())
}

/// Row-stochastic `d x |V|` matrix of per-position conditionals.
///
/// Construction validates every row and renormalizes within tolerance, so a
/// held `ProbMatrix` always has rows summing to exactly the float sum of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    rows: Vec<Vec<f64>>,
}

impl ProbMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        validate_rows(&rows)?;
        Ok(Self::new_renormalized(rows))
    }

    /// Renormalizes rows already known to be within tolerance.
    pub(crate) fn new_renormalized(mut rows: Vec<Vec<f64>>) -> Self {
        for row in &mut rows {
            let sum: f64 = row.iter().sum();
            if sum != 1.0 {
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
        Self { rows }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Watermark secret: a 256-bit master key, the seed modulus `m`, and a
/// detection-side alignment offset `s` in `[0, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WatermarkKey {
    master: [u8; 32],
    modulus: u32,
    offset: u32,
}

impl WatermarkKey {
    pub fn new(master: [u8; 32], modulus: u32) -> Result<Self> {
        if modulus == 0 {
            return Err(Error::ZeroModulus);
        }
        Ok(Self {
            master,
            modulus,
            offset: 0,
        })
    }

    /// Parses the 64-hex-character serialization used in run manifests.
    pub fn from_hex(hex_key: &str, modulus: u32) -> Result<Self> {
        let bytes = hex::decode(hex_key).map_err(|e| Error::BadKey(e.to_string()))?;
        let master: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::BadKey("key must be 32 bytes".into()))?;
        Self::new(master, modulus)
    }

    /// Draws a fresh random key from the given entropy source.
    pub fn from_rng<R: RngCore>(rng: &mut R, modulus: u32) -> Result<Self> {
        let mut master = [0u8; 32];
        rng.fill_bytes(&mut master);
        Self::new(master, modulus)
    }

    /// Same master key and modulus, shifted to a different alignment offset.
    pub fn with_offset(&self, offset: u32) -> Result<Self> {
        if offset >= self.modulus {
            return Err(Error::OffsetOutOfRange {
                offset,
                modulus: self.modulus,
            });
        }
        Ok(Self { offset, ..*self })
    }

    pub fn master_bytes(&self) -> &[u8; 32] {
        &self.master
    }

    pub fn master_hex(&self) -> String {
        hex::encode(self.master)
    }

    pub fn modulus(&self) -> u32 {
        self.modulus
    }

    pub fn offset(&self) -> u32 {
        self.offset
    }
}

/// Detector output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Watermarked,
    NotWatermarked,
}

/// Full detection result: the per-offset statistics, the best alignment, and
/// the thresholded verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub verdict: Verdict,
    pub best_offset: u32,
    pub best_statistic: f64,
    pub threshold: f64,
    pub per_offset_statistics: Vec<f64>,
}

impl DetectionReport {
    /// Builds a report from the per-offset statistic vector, enforcing the
    /// max/argmax invariant. Ties go to the smallest offset.
    pub fn from_offset_statistics(per_offset: Vec<f64>, threshold: f64) -> Self {
        debug_assert!(!per_offset.is_empty());
        let mut best_offset = 0usize;
        let mut best = per_offset[0];
        for (s, &v) in per_offset.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                best_offset = s;
            }
        }
        let verdict = if best > threshold {
            Verdict::Watermarked
        } else {
            Verdict::NotWatermarked
        };
        Self {
            verdict,
            best_offset: best_offset as u32,
            best_statistic: best,
            threshold,
            per_offset_statistics: per_offset,
        }
    }

    pub fn is_watermarked(&self) -> bool {
        self.verdict == Verdict::Watermarked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_bounds() {
        assert!(Vocabulary::new(2, 0).is_ok());
        assert_eq!(Vocabulary::new(1, 0), Err(Error::VocabTooSmall(1)));
        assert_eq!(
            Vocabulary::new(4, 4),
            Err(Error::MaskOutOfRange { mask_id: 4, size: 4 })
        );
        let v = Vocabulary::with_mask(8).unwrap();
        assert_eq!(v.size(), 9);
        assert_eq!(v.mask_id(), 8);
        assert_eq!(v.regular_count(), 8);
        assert_eq!(v.regular_tokens().collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn regular_token_mapping_skips_mask() {
        let v = Vocabulary::new(5, 2).unwrap();
        let mapped: Vec<usize> = (0..4).map(|i| v.regular_token_at(i)).collect();
        assert_eq!(mapped, vec![0, 1, 3, 4]);
    }

    #[test]
    fn all_masked_state() {
        let v = Vocabulary::with_mask(3).unwrap();
        let s = SequenceState::all_masked(4, &v).unwrap();
        assert_eq!(s.tokens(), &[3, 3, 3, 3]);
        assert_eq!(s.time(), 1.0);
        assert_eq!(s.masked_count(), 4);

        let s1 = SequenceState::all_masked(1, &v).unwrap();
        assert_eq!(s1.tokens(), &[3]);

        assert_eq!(SequenceState::all_masked(0, &v), Err(Error::ZeroLength));
    }

    #[test]
    fn validate_rows_cases() {
        // Degenerate point mass is fine.
        assert!(validate_rows(&[vec![1.0, 0.0, 0.0]]).is_ok());
        // Sum 1.1 is rejected.
        match validate_rows(&[vec![0.5, 0.5, 0.1]]) {
            Err(Error::NonStochasticRow { row: 0, sum }) => {
                assert!((sum - 1.1).abs() < 1e-12)
            }
            other => panic!("expected NonStochasticRow, got {other:?}"),
        }
        // Negative entry is rejected even though the sum is 1.
        match validate_rows(&[vec![0.7, -0.2, 0.5]]) {
            Err(Error::NegativeEntry { row: 0, col: 1, .. }) => {}
            other => panic!("expected NegativeEntry, got {other:?}"),
        }
    }

    #[test]
    fn validation_is_idempotent() {
        let rows = vec![vec![0.25; 4], vec![0.5, 0.5, 0.0, 0.0]];
        assert!(validate_rows(&rows).is_ok());
        assert!(validate_rows(&rows).is_ok());
    }

    #[test]
    fn prob_matrix_renormalizes_within_tolerance() {
        let off = 1.0 + 0.4e-9;
        let m = ProbMatrix::new(vec![vec![0.5 * off, 0.5 * off]]).unwrap();
        let sum: f64 = m.row(0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn key_hex_round_trip() {
        let key = WatermarkKey::new([0xAB; 32], 16).unwrap();
        let hex_key = key.master_hex();
        assert_eq!(hex_key.len(), 64);
        let back = WatermarkKey::from_hex(&hex_key, 16).unwrap();
        assert_eq!(key, back);

        assert!(WatermarkKey::from_hex("zz", 16).is_err());
        assert_eq!(WatermarkKey::new([0; 32], 0), Err(Error::ZeroModulus));
        assert!(key.with_offset(15).is_ok());
        assert_eq!(
            key.with_offset(16),
            Err(Error::OffsetOutOfRange { offset: 16, modulus: 16 })
        );
    }

    #[test]
    fn report_invariants() {
        let r = DetectionReport::from_offset_statistics(vec![0.4, 1.7, 1.7, 0.2], 1.0);
        assert_eq!(r.best_offset, 1); // tie broken toward the smaller offset
        assert_eq!(r.best_statistic, 1.7);
        assert!(r.is_watermarked());

        let r = DetectionReport::from_offset_statistics(vec![0.9], 0.9);
        assert_eq!(r.verdict, Verdict::NotWatermarked); // strict inequality
    }
}
