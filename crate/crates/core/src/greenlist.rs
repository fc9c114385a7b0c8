//! Red-green-list watermark for masked diffusion: seeded green-mask
//! generation, softmax logit bias, and z-score detection.
//!
//! Each position's green list is a uniformly random `round(gamma * |V|)`
//! subset of the vocabulary, drawn by a seeded Fisher-Yates prefix keyed by
//! the position's seed class `(s + i) mod m` — the same shuffle reproduces
//! the identical mask at detection time. Embedding adds `delta` to green
//! logits inside a window of reverse steps; detection counts green hits and
//! normalizes against the Binomial(L, gamma) null.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{reverse_diffuse, sample_categorical, Schedule, ToyModel};
use crate::error::{Error, Result};
use crate::prf::{effective_seed, KeyStream, StreamDomain};
use crate::types::{DetectionReport, WatermarkKey};

/// Default z threshold for the green-list detector.
pub const DEFAULT_Z_THRESHOLD: f64 = 4.0;

/// Bias strength and placement for the green-list schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenParams {
    pub gamma: f64,
    pub delta: f64,
    /// First biased reverse step (1-based, inclusive).
    pub t_start: usize,
    /// Last biased reverse step (inclusive).
    pub t_end: usize,
}

impl GreenParams {
    pub fn new(gamma: f64, delta: f64, t_start: usize, t_end: usize) -> Result<Self> {
        let p = Self { gamma, delta, t_start, t_end };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::BadGreenParams(format!(
                "gamma {} outside (0, 1)",
                self.gamma
            )));
        }
        if self.delta < 0.0 || !self.delta.is_finite() {
            return Err(Error::BadGreenParams(format!("delta {} negative", self.delta)));
        }
        if self.t_start < 1 || self.t_end < self.t_start {
            return Err(Error::BadGreenParams(format!(
                "window [{}, {}] is not a valid 1-based step range",
                self.t_start, self.t_end
            )));
        }
        Ok(())
    }

    pub fn window_contains(&self, step: usize) -> bool {
        step >= self.t_start && step <= self.t_end
    }
}

/// Per-position boolean green masks. Rows with equal seed class are
/// identical; every row has exactly `round(gamma * |V|)` green entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenMask {
    rows: Vec<Vec<bool>>,
}

impl GreenMask {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mask row for 0-based position `i`.
    pub fn row(&self, i: usize) -> &[bool] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }
}

/// Number of green tokens for a vocabulary of the given size.
pub fn green_count(vocab_size: usize, gamma: f64) -> usize {
    (gamma * vocab_size as f64).round_ties_even() as usize
}

/// Green indicator for one seed class: the first `round(gamma * |V|)`
/// elements of a keyed Fisher-Yates shuffle of the vocabulary.
pub fn green_row(key: &WatermarkKey, seed_class: u32, vocab_size: usize, gamma: f64) -> Result<Vec<bool>> {
    let g = green_count(vocab_size, gamma);
    if g == 0 {
        return Err(Error::EmptyGreenList);
    }
    let mut stream = KeyStream::new(key.master_bytes(), StreamDomain::GreenMask, seed_class as u64);
    let mut perm: Vec<usize> = (0..vocab_size).collect();
    let mut row = vec![false; vocab_size];
    for i in 0..g.min(vocab_size) {
        let j = i + stream.next_below((vocab_size - i) as u64) as usize;
        perm.swap(i, j);
        row[perm[i]] = true;
    }
    Ok(row)
}

/// Green mask over `len` positions (1-based positions 1..=len) with seed
/// classes `(offset + i) mod m`. Deterministic per `(key, class)`.
pub fn generate_green_mask(
    len: usize,
    vocab_size: usize,
    gamma: f64,
    modulus: u32,
    offset: u32,
    key: &WatermarkKey,
) -> Result<GreenMask> {
    let mut per_class: Vec<Option<Vec<bool>>> = vec![None; modulus as usize];
    let rows = (1..=len)
        .map(|pos| {
            let class = effective_seed(pos, offset, modulus);
            let slot = &mut per_class[class as usize];
            if slot.is_none() {
                *slot = Some(green_row(key, class, vocab_size, gamma)?);
            }
            Ok(slot.clone().unwrap())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GreenMask { rows })
}

/// Softmax of `ln(p) + delta * green`: multiplies green entries by
/// `e^delta` and renormalizes. `delta = 0` returns the row unchanged; zero
/// entries stay zero.
pub fn bias_row(p_row: &[f64], green: &[bool], delta: f64) -> Vec<f64> {
    debug_assert_eq!(p_row.len(), green.len());
    if delta == 0.0 {
        return p_row.to_vec();
    }
    let boost = delta.exp();
    let mut out: Vec<f64> = p_row
        .iter()
        .zip(green)
        .map(|(&p, &g)| if g { p * boost } else { p })
        .collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Green-list watermarked generation: reverse diffusion with green logits
/// biased by `delta` at steps inside the window, plain sampling outside.
/// The mask is built once at offset 0 with one row per position.
pub fn generate_greenlist_watermarked<R: Rng>(
    model: &ToyModel,
    schedule: &Schedule,
    d: usize,
    key: &WatermarkKey,
    params: &GreenParams,
    rng: &mut R,
) -> Result<Vec<usize>> {
    params.validate()?;
    let mask = generate_green_mask(d, model.vocab().size(), params.gamma, key.modulus(), 0, key)?;
    reverse_diffuse(model, schedule, d, |ctx, row| {
        if params.window_contains(ctx.step) && params.delta != 0.0 {
            let biased = bias_row(row, mask.row(ctx.position), params.delta);
            sample_categorical(&biased, rng)
        } else {
            sample_categorical(row, rng)
        }
    })
}

/// z statistic of a green-hit count against the Binomial(L, gamma) null.
pub fn greenlist_z(count: usize, gamma: f64, len: usize) -> f64 {
    let l = len as f64;
    (count as f64 - gamma * l) / (gamma * l * (1.0 - gamma)).sqrt()
}

/// Green-list detection: for every offset, rebuild the mask, count hits, and
/// convert to a z score; the report's verdict is `max_s z_s > threshold`.
pub fn detect_greenlist(
    tokens: &[usize],
    key: &WatermarkKey,
    vocab_size: usize,
    gamma: f64,
    threshold: f64,
) -> Result<DetectionReport> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    let m = key.modulus();
    let rows: Vec<Vec<bool>> = (0..m)
        .map(|class| green_row(key, class, vocab_size, gamma))
        .collect::<Result<_>>()?;
    let per_offset: Vec<f64> = (0..m)
        .map(|s| {
            let count = tokens
                .iter()
                .enumerate()
                .filter(|&(idx, &tok)| rows[effective_seed(idx + 1, s, m) as usize][tok])
                .count();
            greenlist_z(count, gamma, tokens.len())
        })
        .collect();
    Ok(DetectionReport::from_offset_statistics(per_offset, threshold))
}
