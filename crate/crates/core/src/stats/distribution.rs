//! Distribution-preservation verifier: watermarked generations with fresh
//! keys against the unwatermarked law, per position and (for enumerable
//! cases) over the first-step joint.

use rayon::prelude::*;
use serde::Serialize;

use crate::diffusion::{sample_unwatermarked, Schedule, ToyModel};
use crate::error::{Error, Result};
use crate::gumbel::{first_step_tokens, generate_watermarked};
use crate::prf::{derive_subkey, StreamDomain};
use crate::stats::{chi_square_gof, total_variation, two_sample_chi_square};
use crate::types::WatermarkKey;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Setup for the distribution-equality check.
#[derive(Debug, Clone)]
pub struct DistributionConfig<'a> {
    pub model: &'a ToyModel,
    pub schedule: &'a Schedule,
    pub d: usize,
    pub modulus: u32,
    pub trials: usize,
    /// Master key from which per-trial keys derive. With `fresh_keys` off,
    /// every trial reuses the master key directly — a deliberate-misuse
    /// probe; deterministic embedding then collapses all outputs onto one
    /// sequence and the test fails, which is the point.
    pub base_key: [u8; 32],
    pub fresh_keys: bool,
    /// Raw per-suite significance, Bonferroni-divided across tests.
    pub significance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PositionGof {
    pub position: usize,
    pub chi2: f64,
    pub p_raw: f64,
    pub tv: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct JointGof {
    pub chi2: f64,
    pub p_raw: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistributionReport {
    pub trials: usize,
    /// Whether `m >= d` holds, so every position has a unique seed class and
    /// the distribution-preservation premise applies.
    pub seed_assumption_ok: bool,
    pub per_position: Vec<PositionGof>,
    pub joint: Option<JointGof>,
    pub significance: f64,
    pub bonferroni_factor: usize,
    pub max_tv: f64,
    pub pass: bool,
}

fn trial_key(cfg: &DistributionConfig, trial: usize) -> WatermarkKey {
    let master = if cfg.fresh_keys {
        derive_subkey(&cfg.base_key, StreamDomain::TrialKey, trial as u64)
    } else {
        cfg.base_key
    };
    WatermarkKey::new(master, cfg.modulus).expect("modulus validated")
}

/// Chi-square goodness of fit of watermarked per-position marginals (and the
/// first-step joint when the state space is enumerable) against the
/// unwatermarked law. Models without analytic final marginals fall back to a
/// two-sample comparison against an equal batch of unwatermarked runs.
pub fn verify_distribution_preservation(cfg: &DistributionConfig) -> Result<DistributionReport> {
    let vocab_size = cfg.model.vocab().size();
    let expected = cfg.model.final_marginals(cfg.d);
    if let Some(rows) = &expected {
        let min_p = rows
            .iter()
            .flat_map(|r| r.iter().copied())
            .filter(|&p| p > 0.0)
            .fold(f64::INFINITY, f64::min);
        let needed = (5.0 / min_p).ceil() as usize;
        if cfg.trials < needed {
            return Err(Error::InsufficientTrials { needed, got: cfg.trials });
        }
    } else if cfg.trials < 5 * vocab_size {
        return Err(Error::InsufficientTrials { needed: 5 * vocab_size, got: cfg.trials });
    }

    // Watermarked marginal counts, folded deterministically over an
    // index-ordered parallel map.
    let sequences: Vec<Vec<usize>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let key = trial_key(cfg, t);
            generate_watermarked(cfg.model, cfg.schedule, cfg.d, &key)
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![vec![0u64; vocab_size]; cfg.d];
    for seq in &sequences {
        for (i, &tok) in seq.iter().enumerate() {
            counts[i][tok] += 1;
        }
    }

    let per_position: Vec<PositionGof> = match &expected {
        Some(rows) => (0..cfg.d)
            .map(|i| {
                let (chi2, p_raw) = chi_square_gof(&counts[i], &rows[i]);
                let tv = total_variation(&counts[i], &rows[i]);
                PositionGof { position: i, chi2, p_raw, tv }
            })
            .collect(),
        None => {
            let unwm: Vec<Vec<usize>> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let seed = derive_subkey(&cfg.base_key, StreamDomain::SamplerSeed, t as u64);
                    let mut rng = ChaCha8Rng::from_seed(seed);
                    sample_unwatermarked(cfg.model, cfg.schedule, cfg.d, &mut rng)
                })
                .collect::<Result<_>>()?;
            let mut ref_counts = vec![vec![0u64; vocab_size]; cfg.d];
            for seq in &unwm {
                for (i, &tok) in seq.iter().enumerate() {
                    ref_counts[i][tok] += 1;
                }
            }
            (0..cfg.d)
                .map(|i| {
                    let (chi2, p_raw) = two_sample_chi_square(&counts[i], &ref_counts[i]);
                    let total: u64 = ref_counts[i].iter().sum();
                    let probs: Vec<f64> = ref_counts[i]
                        .iter()
                        .map(|&c| c as f64 / total as f64)
                        .collect();
                    let tv = total_variation(&counts[i], &probs);
                    PositionGof { position: i, chi2, p_raw, tv }
                })
                .collect()
        }
    };

    let seed_assumption_ok = cfg.modulus as usize >= cfg.d;
    let joint = joint_first_step(cfg, seed_assumption_ok)?;

    let bonferroni_factor = per_position.len() + joint.is_some() as usize;
    let threshold = cfg.significance / bonferroni_factor as f64;
    let max_tv = per_position.iter().map(|p| p.tv).fold(0.0, f64::max);
    let pass = per_position.iter().all(|p| p.p_raw > threshold)
        && joint.as_ref().map_or(true, |j| j.p_raw > threshold);

    Ok(DistributionReport {
        trials: cfg.trials,
        seed_assumption_ok,
        per_position,
        joint,
        significance: cfg.significance,
        bonferroni_factor,
        max_tv,
        pass,
    })
}

/// Joint law of the first reverse step's selections, enumerable when
/// `d <= 2` and the non-mask vocabulary has at most 4 tokens.
fn joint_first_step(cfg: &DistributionConfig, seed_assumption_ok: bool) -> Result<Option<JointGof>> {
    let vocab = cfg.model.vocab();
    if cfg.d > 2 || vocab.regular_count() > 4 || !seed_assumption_ok {
        return Ok(None);
    }
    let vocab_size = vocab.size();
    let cells = vocab_size.pow(cfg.d as u32);

    let state = crate::types::SequenceState::all_masked(cfg.d, vocab)?;
    let rows = cfg.model.predict(&state);
    let mut probs = vec![0.0; cells];
    for cell in 0..cells {
        let mut rest = cell;
        let mut p = 1.0;
        for i in 0..cfg.d {
            p *= rows.row(i)[rest % vocab_size];
            rest /= vocab_size;
        }
        probs[cell] = p;
    }

    let firsts: Vec<Vec<usize>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let key = trial_key(cfg, t);
            first_step_tokens(cfg.model, cfg.d, &key)
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0u64; cells];
    for toks in &firsts {
        let mut cell = 0usize;
        for (i, &tok) in toks.iter().enumerate() {
            cell += tok * vocab_size.pow(i as u32);
        }
        counts[cell] += 1;
    }

    let (chi2, p_raw) = chi_square_gof(&counts, &probs);
    Ok(Some(JointGof { chi2, p_raw, cells }))
}
