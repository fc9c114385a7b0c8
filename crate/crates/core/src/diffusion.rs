//! Toy masked discrete diffusion models and the reverse sampler.
//!
//! The reverse process starts from an all-masked sequence at t = 1 and walks
//! a uniform step schedule down to t = 0. At each step every position is
//! (re)predicted and (re)drawn, then the `round(t_next * d)` positions whose
//! chosen tokens received the least model confidence are re-masked; visible
//! positions predict as point masses, so redrawing them is a no-op and they
//! persist unless a confidence tie re-masks them. After the final step the
//! sequence is fully unmasked.
//!
//! Model rows never assign mass to the mask token, so the mask cannot appear
//! in finished output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ProbMatrix, SequenceState, Vocabulary};

/// Uniform reverse-time grid {1, 1 - 1/N, ..., 0}.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    times: Vec<f64>,
}

impl Schedule {
    pub fn new(num_steps: usize) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::BadSchedule("need at least one step".into()));
        }
        let n = num_steps as f64;
        let times = (0..=num_steps).map(|k| (num_steps - k) as f64 / n).collect();
        Ok(Self { times })
    }

    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Time points, descending from 1 to 0 inclusive.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Time after the k-th step (k is 1-based).
    pub fn time_after(&self, step: usize) -> f64 {
        self.times[step]
    }
}

/// How many positions stay masked once the process reaches `t_next`:
/// `round(t_next * d)` with ties to even. Zero at `t_next = 0`.
pub fn remask_count(t_next: f64, d: usize) -> usize {
    debug_assert!((0.0..1.0).contains(&t_next));
    (t_next * d as f64).round_ties_even() as usize
}

/// Commits `chosen` at every position, then re-masks the `k` positions with
/// the smallest confidence values; ties break toward the lower index.
pub fn remask_lowest_confidence(
    vocab: &Vocabulary,
    chosen: &[usize],
    confidences: &[f64],
    k: usize,
    t_next: f64,
) -> Result<SequenceState> {
    let d = chosen.len();
    if k > d {
        return Err(Error::KTooLarge { k, d });
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        confidences[a]
            .total_cmp(&confidences[b])
            .then_with(|| a.cmp(&b))
    });
    let mut tokens = chosen.to_vec();
    let mut masked = vec![false; d];
    for &i in &order[..k] {
        tokens[i] = vocab.mask_id();
        masked[i] = true;
    }
    Ok(SequenceState::from_parts_unchecked(tokens, masked, t_next, vocab))
}

/// Toy model zoo spanning the entropy range that drives watermark
/// completeness: maximum-entropy uniform rows, exact per-position tables,
/// and a bigram that conditions on the nearest visible left neighbor.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyModel {
    Uniform {
        vocab: Vocabulary,
        temperature: f64,
    },
    FactorizedTable {
        vocab: Vocabulary,
        temperature: f64,
        /// One marginal row per position; mask column zero.
        tables: Vec<Vec<f64>>,
    },
    PositionalBigram {
        vocab: Vocabulary,
        temperature: f64,
        /// Distribution when no left context is visible.
        initial: Vec<f64>,
        /// Row per conditioning token; mask column zero.
        transition: Vec<Vec<f64>>,
    },
}

fn normalize_model_row(row: &mut [f64], vocab: &Vocabulary, what: &str) -> Result<()> {
    if row.len() != vocab.size() {
        return Err(Error::BadModel(format!(
            "{what} row has {} entries for vocabulary of size {}",
            row.len(),
            vocab.size()
        )));
    }
    if row.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::BadModel(format!("{what} row has a negative entry")));
    }
    row[vocab.mask_id()] = 0.0;
    let sum: f64 = row.iter().sum();
    if sum <= 0.0 {
        return Err(Error::BadModel(format!(
            "{what} row has no mass outside the mask token"
        )));
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

impl ToyModel {
    pub fn uniform(vocab: Vocabulary) -> Self {
        Self::Uniform { vocab, temperature: 1.0 }
    }

    pub fn factorized(vocab: Vocabulary, mut tables: Vec<Vec<f64>>) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::BadModel("factorized model needs at least one row".into()));
        }
        for row in &mut tables {
            normalize_model_row(row, &vocab, "table")?;
        }
        Ok(Self::FactorizedTable { vocab, temperature: 1.0, tables })
    }

    pub fn positional_bigram(
        vocab: Vocabulary,
        mut initial: Vec<f64>,
        mut transition: Vec<Vec<f64>>,
    ) -> Result<Self> {
        normalize_model_row(&mut initial, &vocab, "initial")?;
        if transition.len() != vocab.size() {
            return Err(Error::BadModel(format!(
                "bigram needs {} transition rows, got {}",
                vocab.size(),
                transition.len()
            )));
        }
        for row in &mut transition {
            normalize_model_row(row, &vocab, "transition")?;
        }
        Ok(Self::PositionalBigram { vocab, temperature: 1.0, initial, transition })
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if temperature <= 0.0 || !temperature.is_finite() {
            return Err(Error::BadModel(format!("temperature {temperature} must be positive")));
        }
        match &mut self {
            Self::Uniform { temperature: t, .. }
            | Self::FactorizedTable { temperature: t, .. }
            | Self::PositionalBigram { temperature: t, .. } => *t = temperature,
        }
        Ok(self)
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            Self::Uniform { vocab, .. }
            | Self::FactorizedTable { vocab, .. }
            | Self::PositionalBigram { vocab, .. } => vocab,
        }
    }

    pub fn temperature(&self) -> f64 {
        match self {
            Self::Uniform { temperature, .. }
            | Self::FactorizedTable { temperature, .. }
            | Self::PositionalBigram { temperature, .. } => *temperature,
        }
    }

    /// Positions this model can serve; `None` means any length.
    pub fn fixed_length(&self) -> Option<usize> {
        match self {
            Self::FactorizedTable { tables, .. } => Some(tables.len()),
            _ => None,
        }
    }

    fn base_row(&self, state: &SequenceState, i: usize) -> Vec<f64> {
        match self {
            Self::Uniform { vocab, .. } => {
                let mut row = vec![1.0 / vocab.regular_count() as f64; vocab.size()];
                row[vocab.mask_id()] = 0.0;
                row
            }
            Self::FactorizedTable { tables, .. } => tables[i].clone(),
            Self::PositionalBigram { initial, transition, .. } => {
                let left = (0..i).rev().find(|&j| !state.is_masked(j));
                match left {
                    Some(j) => transition[state.token(j)].clone(),
                    None => initial.clone(),
                }
            }
        }
    }

    /// Conditional distribution over the vocabulary for every position given
    /// the visible tokens. Visible positions are point masses on their
    /// current token; masked positions get the model row with temperature
    /// applied as logit scaling.
    pub fn predict(&self, state: &SequenceState) -> ProbMatrix {
        let vocab = self.vocab();
        if let Some(d) = self.fixed_length() {
            assert_eq!(state.len(), d, "state length does not match model tables");
        }
        let temperature = self.temperature();
        let rows = (0..state.len())
            .map(|i| {
                if !state.is_masked(i) {
                    let mut row = vec![0.0; vocab.size()];
                    row[state.token(i)] = 1.0;
                    row
                } else {
                    let mut row = self.base_row(state, i);
                    if temperature != 1.0 {
                        let inv = 1.0 / temperature;
                        for v in row.iter_mut() {
                            *v = v.powf(inv);
                        }
                        let sum: f64 = row.iter().sum();
                        for v in row.iter_mut() {
                            *v /= sum;
                        }
                    }
                    row
                }
            })
            .collect();
        ProbMatrix::new_renormalized(rows)
    }

    /// Exact per-position final-output marginals when they are analytically
    /// known. The uniform model ends uniform over non-mask tokens; the
    /// factorized model ends at its stored tables (its rows never depend on
    /// the visible context, so the last redraw of each position is a fresh
    /// draw from its table). The bigram's final law has no closed form here.
    pub fn final_marginals(&self, d: usize) -> Option<Vec<Vec<f64>>> {
        match self {
            Self::Uniform { .. } | Self::FactorizedTable { .. } => {
                let dummy = SequenceState::all_masked(d, self.vocab()).ok()?;
                Some(self.predict(&dummy).rows().to_vec())
            }
            Self::PositionalBigram { .. } => None,
        }
    }
}

/// On-disk model description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ToyModelSpec {
    Uniform {
        vocab_size: usize,
        mask_id: usize,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    FactorizedTable {
        vocab_size: usize,
        mask_id: usize,
        #[serde(default = "default_temperature")]
        temperature: f64,
        tables: Vec<Vec<f64>>,
    },
    /// `tables[0]` is the no-context distribution; `tables[1 + v]` conditions
    /// on visible left neighbor `v`.
    PositionalBigram {
        vocab_size: usize,
        mask_id: usize,
        #[serde(default = "default_temperature")]
        temperature: f64,
        tables: Vec<Vec<f64>>,
    },
}

fn default_temperature() -> f64 {
    1.0
}

impl ToyModelSpec {
    pub fn build(&self) -> Result<ToyModel> {
        match self {
            Self::Uniform { vocab_size, mask_id, temperature } => {
                let vocab = Vocabulary::new(*vocab_size, *mask_id)?;
                ToyModel::uniform(vocab).with_temperature(*temperature)
            }
            Self::FactorizedTable { vocab_size, mask_id, temperature, tables } => {
                let vocab = Vocabulary::new(*vocab_size, *mask_id)?;
                ToyModel::factorized(vocab, tables.clone())?.with_temperature(*temperature)
            }
            Self::PositionalBigram { vocab_size, mask_id, temperature, tables } => {
                let vocab = Vocabulary::new(*vocab_size, *mask_id)?;
                let mut tables = tables.clone();
                if tables.len() != vocab.size() + 1 {
                    return Err(Error::BadModel(format!(
                        "positional-bigram needs 1 + {} rows, got {}",
                        vocab.size(),
                        tables.len()
                    )));
                }
                let initial = tables.remove(0);
                ToyModel::positional_bigram(vocab, initial, tables)?.with_temperature(*temperature)
            }
        }
    }
}

/// Per-choice context handed to the sampler callback.
#[derive(Debug, Clone, Copy)]
pub struct StepCtx {
    /// 1-based reverse step index.
    pub step: usize,
    /// 0-based position.
    pub position: usize,
    /// Whether the position was masked when the step began.
    pub was_masked: bool,
}

/// Runs the reverse process, delegating the per-position token choice to
/// `choose`. This is the shared loop under the plain, Gumbel-max, and
/// green-list samplers; confidence for re-masking is always the model's own
/// (unbiased) probability of the chosen token.
pub fn reverse_diffuse<F>(
    model: &ToyModel,
    schedule: &Schedule,
    d: usize,
    mut choose: F,
) -> Result<Vec<usize>>
where
    F: FnMut(&StepCtx, &[f64]) -> Result<usize>,
{
    let vocab = model.vocab();
    let mut state = SequenceState::all_masked(d, vocab)?;
    for step in 1..=schedule.num_steps() {
        let t_next = schedule.time_after(step);
        let probs = model.predict(&state);
        let mut chosen = Vec::with_capacity(d);
        let mut confidences = Vec::with_capacity(d);
        for i in 0..d {
            let ctx = StepCtx { step, position: i, was_masked: state.is_masked(i) };
            let row = probs.row(i);
            let x = choose(&ctx, row)?;
            confidences.push(row[x]);
            chosen.push(x);
        }
        let k = remask_count(t_next, d);
        state = remask_lowest_confidence(vocab, &chosen, &confidences, k, t_next)?;
    }
    debug_assert_eq!(state.masked_count(), 0);
    Ok(state.tokens().to_vec())
}

/// Inverse-CDF draw from a probability row using a single uniform.
pub fn sample_categorical<R: Rng>(row: &[f64], rng: &mut R) -> Result<usize> {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = None;
    for (x, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = Some(x);
            if u < acc {
                return Ok(x);
            }
        }
    }
    last_positive.ok_or(Error::AllZeroRow { row: 0 })
}

/// Reverse-diffusion sampling with independent categorical draws per row —
/// the unwatermarked reference process. With the same RNG stream, an N = 1
/// schedule consumes exactly one uniform per position, matching direct
/// per-row sampling.
pub fn sample_unwatermarked<R: Rng>(
    model: &ToyModel,
    schedule: &Schedule,
    d: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    reverse_diffuse(model, schedule, d, |_, row| sample_categorical(row, rng))
}
