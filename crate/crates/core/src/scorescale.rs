//! Score-scaling watermark on continuous-time Markov chain diffusion:
//! concrete-score representation, absorbing/uniform transition kernels, the
//! exact one-step posterior denoiser, and green-list score scaling.
//!
//! Conventions: rate matrices use `Q[y][x]` = rate of jumping from state `x`
//! to state `y`, so columns sum to zero and `exp(sigma * Q)` is
//! column-stochastic, acting on column PMFs (`p_{t+dt} = exp(sigma Q) p_t`).
//! Both kinds satisfy `Q^2 = -Q`, giving the closed form
//! `exp(a Q) = I + (1 - e^{-a}) Q` for any real `a`; the series-expansion
//! oracle in the tests cross-checks it rather than trusting the algebra.
//!
//! The score network is replaced by exact probability ratios of a known
//! factorized family evolved through the forward kernel, so the denoising
//! step is an exact posterior and enumerable oracles apply.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::sample_categorical;
use crate::error::{Error, Result};
use crate::greenlist::{generate_green_mask, GreenMask, GreenParams};
use crate::types::{ProbMatrix, WatermarkKey};

/// Generator of the forward corruption chain over `size` states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMatrix {
    /// Every state decays into the distinguished mask state and stays there.
    Absorbing { size: usize, mask_id: usize },
    /// Free transitions converging to the uniform distribution.
    Uniform { size: usize },
}

impl RateMatrix {
    pub fn size(&self) -> usize {
        match *self {
            Self::Absorbing { size, .. } | Self::Uniform { size } => size,
        }
    }

    pub fn mask_id(&self) -> Option<usize> {
        match *self {
            Self::Absorbing { mask_id, .. } => Some(mask_id),
            Self::Uniform { .. } => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Absorbing { .. } => "absorbing",
            Self::Uniform { .. } => "uniform",
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.size();
        if n < 2 {
            return Err(Error::VocabTooSmall(n));
        }
        if let Self::Absorbing { mask_id, size } = *self {
            if mask_id >= size {
                return Err(Error::MaskOutOfRange { mask_id, size });
            }
        }
        Ok(())
    }

    /// Entry `Q[y][x]`: rate from `x` to `y`.
    pub fn q_entry(&self, y: usize, x: usize) -> f64 {
        match *self {
            Self::Uniform { size } => {
                let n = size as f64;
                if y == x {
                    1.0 / n - 1.0
                } else {
                    1.0 / n
                }
            }
            Self::Absorbing { mask_id, .. } => {
                if x == mask_id {
                    0.0
                } else if y == x {
                    -1.0
                } else if y == mask_id {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Dense rate matrix, `dense()[y][x] = Q[y][x]`.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.size();
        (0..n)
            .map(|y| (0..n).map(|x| self.q_entry(y, x)).collect())
            .collect()
    }

    /// `exp(a Q) v` in O(n) via `v + (1 - e^{-a}) (Q v)`; `a` may be
    /// negative (the inverse kernel is linear but not stochastic).
    pub fn apply_exp(&self, a: f64, v: &[f64]) -> Vec<f64> {
        let c = 1.0 - (-a).exp();
        match *self {
            Self::Uniform { size } => {
                let mean = v.iter().sum::<f64>() / size as f64;
                v.iter().map(|&vi| vi + c * (mean - vi)).collect()
            }
            Self::Absorbing { mask_id, .. } => {
                let off_mask: f64 = v
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != mask_id)
                    .map(|(_, &vi)| vi)
                    .sum();
                v.iter()
                    .enumerate()
                    .map(|(i, &vi)| if i == mask_id { vi + c * off_mask } else { vi - c * vi })
                    .collect()
            }
        }
    }

    /// Row `x` of `exp(sigma Q)`: the forward transition probabilities
    /// `P(x_t = x | x_{t-dt} = y)` over column index `y`.
    pub fn kernel_row(&self, sigma: f64, x: usize) -> Vec<f64> {
        let c = 1.0 - (-sigma).exp();
        (0..self.size())
            .map(|y| (if x == y { 1.0 } else { 0.0 }) + c * self.q_entry(x, y))
            .collect()
    }

    /// Dense `exp(sigma Q)` for `sigma >= 0`; column-stochastic with all
    /// entries nonnegative.
    pub fn kernel_exp(&self, sigma: f64) -> Result<Vec<Vec<f64>>> {
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(Error::NegativeSigma(sigma));
        }
        self.validate()?;
        Ok((0..self.size()).map(|x| self.kernel_row(sigma, x)).collect())
    }
}

/// Cumulative noise as a function of diffusion time; increments feed the
/// per-step kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSchedule {
    Linear { total: f64 },
    Geometric { sigma_min: f64, sigma_max: f64 },
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Linear { total } if total > 0.0 && total.is_finite() => Ok(()),
            Self::Linear { total } => Err(Error::BadSchedule(format!(
                "linear noise total {total} must be positive"
            ))),
            Self::Geometric { sigma_min, sigma_max }
                if sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite() =>
            {
                Ok(())
            }
            Self::Geometric { sigma_min, sigma_max } => Err(Error::BadSchedule(format!(
                "geometric noise needs 0 < sigma_min < sigma_max, got [{sigma_min}, {sigma_max}]"
            ))),
        }
    }

    /// Cumulative noise at time `t`; zero at `t = 0`, nondecreasing.
    pub fn cumulative(&self, t: f64) -> f64 {
        match *self {
            Self::Linear { total } => total * t,
            Self::Geometric { sigma_min, sigma_max } => {
                sigma_min * ((sigma_max / sigma_min).powf(t) - 1.0)
            }
        }
    }

    /// Noise spent between the two times (`t_hi >= t_lo`).
    pub fn increment(&self, t_hi: f64, t_lo: f64) -> f64 {
        (self.cumulative(t_hi) - self.cumulative(t_lo)).max(0.0)
    }
}

/// Exact concrete-score ratios `d x |V|`; entry `(i, j)` is
/// `p_{t,i}(j) / p_{t,i}(x_i)`, the toy stand-in for a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }
}

/// Ratio matrix of a factorized distribution against the current sequence.
/// The entry at each position's own token is exactly 1.
pub fn true_score(p_rows: &[Vec<f64>], x: &[usize]) -> Result<ScoreMatrix> {
    debug_assert_eq!(p_rows.len(), x.len());
    let rows = p_rows
        .iter()
        .zip(x)
        .enumerate()
        .map(|(i, (row, &xi))| {
            let px = row[xi];
            if px <= 0.0 {
                return Err(Error::ZeroProbabilityState { position: i, token: xi });
            }
            Ok(row.iter().map(|&p| p / px).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreMatrix { rows })
}

/// Multiplies the score columns of green tokens by `delta >= 1`, leaving the
/// rest bit-identical. `delta = 1` is the identity.
pub fn scale_score(score: &ScoreMatrix, mask: &GreenMask, delta: f64) -> Result<ScoreMatrix> {
    if delta < 1.0 || !delta.is_finite() {
        return Err(Error::BadGreenParams(format!(
            "score scaling factor {delta} must be at least 1"
        )));
    }
    debug_assert_eq!(score.num_rows(), mask.len());
    let rows = score
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .zip(mask.row(i))
                .map(|(&s, &g)| if g { s * delta } else { s })
                .collect()
        })
        .collect();
    Ok(ScoreMatrix { rows })
}

/// One denoising step: per position, the elementwise product of
/// `exp(-sigma Q) * score_row` with the forward-kernel row of the current
/// token, clamped at zero and normalized. With the exact score this is the
/// exact posterior `p(x_{t-dt} | x_t)`; negatives only arise from rounding.
pub fn tweedie_step(
    score: &ScoreMatrix,
    rate: &RateMatrix,
    sigma_inc: f64,
    x_t: &[usize],
) -> Result<ProbMatrix> {
    if sigma_inc < 0.0 || !sigma_inc.is_finite() {
        return Err(Error::NegativeSigma(sigma_inc));
    }
    debug_assert_eq!(score.num_rows(), x_t.len());
    let rows = score
        .rows
        .iter()
        .zip(x_t)
        .enumerate()
        .map(|(i, (s_row, &xi))| {
            let v = rate.apply_exp(-sigma_inc, s_row);
            let k_row = rate.kernel_row(sigma_inc, xi);
            let mut w: Vec<f64> = v
                .iter()
                .zip(&k_row)
                .map(|(&a, &b)| (a * b).max(0.0))
                .collect();
            let sum: f64 = w.iter().sum();
            if sum <= 0.0 || !sum.is_finite() {
                return Err(Error::DegenerateRow { position: i });
            }
            for val in &mut w {
                *val /= sum;
            }
            Ok(w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbMatrix::new_renormalized(rows))
}

/// A fully specified toy chain: kernel kind, noise schedule, step count, and
/// the factorized data distribution whose forward evolution plays the score
/// network's role.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreScaleModel {
    rate: RateMatrix,
    schedule: NoiseSchedule,
    num_steps: usize,
    p0: Vec<Vec<f64>>,
}

impl ScoreScaleModel {
    pub fn new(
        rate: RateMatrix,
        schedule: NoiseSchedule,
        num_steps: usize,
        p0: Vec<Vec<f64>>,
    ) -> Result<Self> {
        rate.validate()?;
        schedule.validate()?;
        if num_steps == 0 {
            return Err(Error::BadSchedule("need at least one step".into()));
        }
        if p0.is_empty() {
            return Err(Error::ZeroLength);
        }
        let n = rate.size();
        for (i, row) in p0.iter().enumerate() {
            if row.len() != n {
                return Err(Error::BadModel(format!(
                    "p0 row {i} has {} entries for state space of size {n}",
                    row.len()
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > crate::types::ROW_SUM_TOLERANCE {
                return Err(Error::NonStochasticRow { row: i, sum });
            }
            for (j, &p) in row.iter().enumerate() {
                let is_mask = rate.mask_id() == Some(j);
                if is_mask && p != 0.0 {
                    return Err(Error::BadModel(format!(
                        "p0 row {i} puts mass {p} on the mask state"
                    )));
                }
                if !is_mask && (p <= 0.0 || !p.is_finite()) {
                    return Err(Error::BadModel(format!(
                        "p0 row {i} must be strictly positive off the mask state, got {p} at {j}"
                    )));
                }
            }
        }
        Ok(Self { rate, schedule, num_steps, p0 })
    }

    /// Uniform data distribution over the non-mask states.
    pub fn with_uniform_data(
        rate: RateMatrix,
        schedule: NoiseSchedule,
        num_steps: usize,
        len: usize,
    ) -> Result<Self> {
        let n = rate.size();
        let row = match rate.mask_id() {
            Some(mask) => {
                let p = 1.0 / (n - 1) as f64;
                (0..n).map(|j| if j == mask { 0.0 } else { p }).collect::<Vec<_>>()
            }
            None => vec![1.0 / n as f64; n],
        };
        Self::new(rate, schedule, num_steps, vec![row; len])
    }

    pub fn rate(&self) -> &RateMatrix {
        &self.rate
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn len(&self) -> usize {
        self.p0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p0.is_empty()
    }

    pub fn data_rows(&self) -> &[Vec<f64>] {
        &self.p0
    }

    /// Forward marginals at time `t`: `exp(sigma_bar(t) Q) p0` per position.
    pub fn marginals_at(&self, t: f64) -> Vec<Vec<f64>> {
        let a = self.schedule.cumulative(t);
        self.p0.iter().map(|row| self.rate.apply_exp(a, row)).collect()
    }
}

/// Reverse CTMC sampling with the concrete score scaled by `delta` on green
/// tokens inside the window, unscaled outside. `params = None` is the
/// unbiased sampler; `delta = 1` matches it exactly under a shared stream.
///
/// The initial state is drawn from the exact time-1 marginals, so every
/// denoising step is an exact posterior and the final sample follows the
/// data distribution when unbiased. Absorbing chains can only leave the mask
/// state, never re-enter it; the final step zeroes the mask's residual
/// rounding mass so finished sequences are mask-free.
pub fn generate_scorescale_watermarked<R: Rng>(
    model: &ScoreScaleModel,
    key: &WatermarkKey,
    params: Option<&GreenParams>,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if let Some(p) = params {
        p.validate()?;
        if p.delta < 1.0 {
            return Err(Error::BadGreenParams(format!(
                "score scaling factor {} must be at least 1",
                p.delta
            )));
        }
    }
    let d = model.len();
    let n = model.rate.size();
    let steps = model.num_steps;
    let mask = match params {
        Some(p) => Some(generate_green_mask(d, n, p.gamma, key.modulus(), 0, key)?),
        None => None,
    };

    let p1 = model.marginals_at(1.0);
    let mut x: Vec<usize> = p1
        .iter()
        .map(|row| sample_categorical(row, rng))
        .collect::<Result<_>>()?;

    for step in 1..=steps {
        let t_cur = (steps - step + 1) as f64 / steps as f64;
        let t_next = (steps - step) as f64 / steps as f64;
        let p_t = model.marginals_at(t_cur);
        let mut score = true_score(&p_t, &x)?;
        if let (Some(p), Some(mask)) = (params, mask.as_ref()) {
            if p.window_contains(step) {
                score = scale_score(&score, mask, p.delta)?;
            }
        }
        let sigma_inc = model.schedule.increment(t_cur, t_next);
        let mut rows = tweedie_step(&score, &model.rate, sigma_inc, &x)?;
        if t_next == 0.0 {
            if let Some(mask_id) = model.rate.mask_id() {
                rows = zero_state(rows, mask_id)?;
            }
        }
        x = (0..d)
            .map(|i| sample_categorical(rows.row(i), rng))
            .collect::<Result<_>>()?;
    }
    Ok(x)
}

/// Unbiased reverse sampler over the same chain.
pub fn sample_scorescale_unbiased<R: Rng>(model: &ScoreScaleModel, rng: &mut R) -> Result<Vec<usize>> {
    let key = WatermarkKey::new([0u8; 32], 1).expect("static key");
    generate_scorescale_watermarked(model, &key, None, rng)
}

fn zero_state(matrix: ProbMatrix, state: usize) -> Result<ProbMatrix> {
    let rows = matrix
        .rows()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut row = row.clone();
            row[state] = 0.0;
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(Error::DegenerateRow { position: i });
            }
            for v in &mut row {
                *v /= sum;
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbMatrix::new_renormalized(rows))
}

/// On-disk chain description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreScaleSpec {
    /// "absorbing" or "uniform".
    pub kind: String,
    pub vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_id: Option<usize>,
    pub sigma_schedule: NoiseSchedule,
    pub num_steps: usize,
    /// Explicit factorized data rows; omitted means uniform over non-mask
    /// states at whatever length the caller requests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0_tables: Option<Vec<Vec<f64>>>,
}

impl ScoreScaleSpec {
    pub fn rate(&self) -> Result<RateMatrix> {
        let rate = match self.kind.as_str() {
            "uniform" => RateMatrix::Uniform { size: self.vocab_size },
            "absorbing" => RateMatrix::Absorbing {
                size: self.vocab_size,
                mask_id: self.mask_id.unwrap_or(self.vocab_size.saturating_sub(1)),
            },
            other => return Err(Error::BadModel(format!("unknown kernel kind '{other}'"))),
        };
        rate.validate()?;
        Ok(rate)
    }

    pub fn build(&self, len: usize) -> Result<ScoreScaleModel> {
        let rate = self.rate()?;
        match &self.p0_tables {
            Some(tables) => ScoreScaleModel::new(rate, self.sigma_schedule, self.num_steps, tables.clone()),
            None => ScoreScaleModel::with_uniform_data(rate, self.sigma_schedule, self.num_steps, len),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform2() -> RateMatrix {
        RateMatrix::Uniform { size: 2 }
    }

    #[test]
    fn rate_matrix_column_structure() {
        for rate in [RateMatrix::Uniform { size: 5 }, RateMatrix::Absorbing { size: 5, mask_id: 4 }] {
            let q = rate.dense();
            for x in 0..5 {
                let col_sum: f64 = (0..5).map(|y| q[y][x]).sum();
                assert!(col_sum.abs() < 1e-12, "{} column {x}", rate.kind_name());
                for y in 0..5 {
                    if y != x {
                        assert!(q[y][x] >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_identity_at_zero() {
        let k = uniform2().kernel_exp(0.0).unwrap();
        assert_eq!(k, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn kernel_uniform_two_state_hand_value() {
        // sigma = ln 2: [[0.75, 0.25], [0.25, 0.75]].
        let k = uniform2().kernel_exp(2f64.ln()).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                let expect = if x == y { 0.75 } else { 0.25 };
                assert!((k[y][x] - expect).abs() < 1e-15, "k[{y}][{x}] = {}", k[y][x]);
            }
        }
    }

    #[test]
    fn kernel_mixes_to_stationary() {
        let rate = RateMatrix::Uniform { size: 4 };
        let k = rate.kernel_exp(60.0).unwrap();
        for col in 0..4 {
            for row in 0..4 {
                assert!((k[row][col] - 0.25).abs() < 1e-12);
            }
        }
        assert!(uniform2().kernel_exp(-0.5).is_err());
    }

    #[test]
    fn absorbing_kernel_shape() {
        let rate = RateMatrix::Absorbing { size: 3, mask_id: 2 };
        let sigma = 0.7f64;
        let k = rate.kernel_exp(sigma).unwrap();
        let stay = (-sigma).exp();
        // Non-mask columns decay into the mask row; the mask column is fixed.
        for x in 0..2 {
            assert!((k[x][x] - stay).abs() < 1e-15);
            assert!((k[2][x] - (1.0 - stay)).abs() < 1e-15);
        }
        assert_eq!((k[0][2], k[1][2], k[2][2]), (0.0, 0.0, 1.0));
    }

    #[test]
    fn apply_exp_matches_dense_multiply() {
        for rate in [RateMatrix::Uniform { size: 4 }, RateMatrix::Absorbing { size: 4, mask_id: 0 }] {
            let v = vec![0.4, 0.3, 0.2, 0.1];
            for sigma in [0.3, 1.7] {
                let fast = rate.apply_exp(sigma, &v);
                let k = rate.kernel_exp(sigma).unwrap();
                for y in 0..4 {
                    let dense: f64 = (0..4).map(|x| k[y][x] * v[x]).sum();
                    assert!((fast[y] - dense).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn score_ratios() {
        // p = (0.8, 0.2), current token 1 -> row (4.0, 1.0).
        let s = true_score(&[vec![0.8, 0.2]], &[1]).unwrap();
        assert_eq!(s.row(0), &[4.0, 1.0]);

        // Uniform p -> all ratios 1.
        let s = true_score(&[vec![0.25; 4]], &[2]).unwrap();
        assert_eq!(s.row(0), &[1.0; 4]);

        // Sitting at the mode bounds every ratio by 1.
        let s = true_score(&[vec![0.7, 0.2, 0.1]], &[0]).unwrap();
        assert!(s.row(0).iter().all(|&v| v <= 1.0));

        assert_eq!(
            true_score(&[vec![1.0, 0.0]], &[1]).unwrap_err(),
            Error::ZeroProbabilityState { position: 0, token: 1 }
        );
    }

    #[test]
    fn scale_score_columns() {
        let key = WatermarkKey::new([3; 32], 1).unwrap();
        let mask = generate_green_mask(1, 4, 0.25, 1, 0, &key).unwrap();
        let green_tok = mask.row(0).iter().position(|&g| g).unwrap();
        let score = true_score(&[vec![0.25; 4]], &[0]).unwrap();

        let same = scale_score(&score, &mask, 1.0).unwrap();
        assert_eq!(same, score);

        let doubled = scale_score(&score, &mask, 2.0).unwrap();
        for x in 0..4 {
            let expect = if x == green_tok { 2.0 } else { 1.0 };
            assert_eq!(doubled.row(0)[x], expect);
        }

        assert!(scale_score(&score, &mask, 0.5).is_err());
    }

    #[test]
    fn zero_increment_freezes_state() {
        let score = true_score(&[vec![0.8, 0.2]], &[1]).unwrap();
        let rows = tweedie_step(&score, &uniform2(), 0.0, &[1]).unwrap();
        assert_eq!(rows.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn uniform_family_posterior_is_kernel_row_and_preserves_uniformity() {
        // With a uniform family the score is all ones, so the posterior
        // reduces to the normalized kernel row of the current token; summing
        // against a uniform state marginal returns the uniform law.
        let rate = RateMatrix::Uniform { size: 3 };
        let sigma = 0.9;
        let score = true_score(&[vec![1.0 / 3.0; 3]], &[1]).unwrap();
        let post = tweedie_step(&score, &rate, sigma, &[1]).unwrap();
        let k_row = rate.kernel_row(sigma, 1);
        let row_sum: f64 = k_row.iter().sum();
        for y in 0..3 {
            assert!((post.row(0)[y] - k_row[y] / row_sum).abs() < 1e-15);
        }
        // Fully mixed kernel: the posterior row itself becomes uniform.
        let post = tweedie_step(&score, &rate, 80.0, &[1]).unwrap();
        for y in 0..3 {
            assert!((post.row(0)[y] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn absorbing_posterior_freezes_unmasked_tokens() {
        // Structural property of the absorbing kernel: the posterior of a
        // non-mask current token is a point mass on that token.
        let rate = RateMatrix::Absorbing { size: 4, mask_id: 3 };
        let p_t = vec![vec![0.2 * 0.5, 0.3 * 0.5, 0.5 * 0.5, 0.5]];
        let score = true_score(&p_t, &[1]).unwrap();
        let rows = tweedie_step(&score, &rate, 0.4, &[1]).unwrap();
        assert_eq!(rows.row(0), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn absorbing_outputs_are_mask_free() {
        let rate = RateMatrix::Absorbing { size: 4, mask_id: 3 };
        let schedule = NoiseSchedule::Geometric { sigma_min: 0.05, sigma_max: 8.0 };
        let model = ScoreScaleModel::with_uniform_data(rate, schedule, 6, 12).unwrap();
        let key = WatermarkKey::new([8; 32], 4).unwrap();
        let params = GreenParams::new(0.25, 5.0, 1, 6).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = generate_scorescale_watermarked(&model, &key, Some(&params), &mut rng).unwrap();
            assert!(out.iter().all(|&s| s != 3), "seed {seed}: {out:?}");
        }
    }

    #[test]
    fn delta_one_matches_unbiased_bit_for_bit() {
        let rate = RateMatrix::Uniform { size: 6 };
        let schedule = NoiseSchedule::Geometric { sigma_min: 0.02, sigma_max: 10.0 };
        let model = ScoreScaleModel::with_uniform_data(rate, schedule, 8, 16).unwrap();
        let key = WatermarkKey::new([1; 32], 4).unwrap();
        let params = GreenParams::new(0.25, 1.0, 1, 8).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(77);
        let mut b = ChaCha8Rng::seed_from_u64(77);
        let biased = generate_scorescale_watermarked(&model, &key, Some(&params), &mut a).unwrap();
        let plain = sample_scorescale_unbiased(&model, &mut b).unwrap();
        assert_eq!(biased, plain);
    }

    #[test]
    fn spec_round_trip() {
        let json = r#"{"kind":"absorbing","vocab_size":8,"mask_id":7,
                       "sigma_schedule":{"kind":"geometric","sigma_min":0.01,"sigma_max":20.0},
                       "num_steps":16}"#;
        let spec: ScoreScaleSpec = serde_json::from_str(json).unwrap();
        let model = spec.build(10).unwrap();
        assert_eq!(model.len(), 10);
        assert_eq!(model.rate().mask_id(), Some(7));

        let bad = ScoreScaleSpec { kind: "other".into(), ..spec };
        assert!(bad.rate().is_err());
    }

    #[test]
    fn schedule_validation_and_monotonicity() {
        let g = NoiseSchedule::Geometric { sigma_min: 0.01, sigma_max: 20.0 };
        assert!(g.validate().is_ok());
        assert_eq!(g.cumulative(0.0), 0.0);
        let mut prev = 0.0;
        for k in 1..=10 {
            let c = g.cumulative(k as f64 / 10.0);
            assert!(c >= prev);
            prev = c;
        }
        assert!(NoiseSchedule::Linear { total: 0.0 }.validate().is_err());
        assert!(NoiseSchedule::Geometric { sigma_min: 2.0, sigma_max: 1.0 }.validate().is_err());
    }
}
