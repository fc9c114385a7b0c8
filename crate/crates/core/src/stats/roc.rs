//! Empirical ROC construction and threshold selection.

use serde::Serialize;

use crate::error::{Error, Result};

/// One point of the empirical soundness/completeness tradeoff at a
/// threshold: soundness is the fraction of unwatermarked scores at or below
/// `tau`, completeness the fraction of watermarked scores above it.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RocPoint {
    pub tau: f64,
    pub soundness: f64,
    pub completeness: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RocAnalysis {
    pub points: Vec<RocPoint>,
    /// Threshold maximizing completeness - (1 - soundness); ties resolve to
    /// the smallest threshold.
    pub tau_star: f64,
    pub best_objective: f64,
    /// Mann-Whitney estimate of P(watermarked score > unwatermarked score).
    pub auc: f64,
}

fn frac_at_most(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

/// Sweeps thresholds over both score populations. With no explicit grid the
/// candidate thresholds are the distinct observed scores (where the two
/// empirical step functions change).
pub fn roc_sweep(
    watermarked: &[f64],
    unwatermarked: &[f64],
    taus: Option<&[f64]>,
) -> Result<RocAnalysis> {
    if watermarked.is_empty() || unwatermarked.is_empty() {
        return Err(Error::EmptyScoreSet);
    }
    let mut wm = watermarked.to_vec();
    let mut un = unwatermarked.to_vec();
    wm.sort_by(f64::total_cmp);
    un.sort_by(f64::total_cmp);

    let grid: Vec<f64> = match taus {
        Some(ts) => {
            let mut ts = ts.to_vec();
            ts.sort_by(f64::total_cmp);
            ts
        }
        None => {
            let mut all: Vec<f64> = wm.iter().chain(un.iter()).copied().collect();
            all.sort_by(f64::total_cmp);
            all.dedup();
            all
        }
    };

    let mut points = Vec::with_capacity(grid.len());
    let mut tau_star = grid[0];
    let mut best_objective = f64::NEG_INFINITY;
    for &tau in &grid {
        let soundness = frac_at_most(&un, tau);
        let completeness = 1.0 - frac_at_most(&wm, tau);
        let objective = completeness + soundness - 1.0;
        if objective > best_objective {
            best_objective = objective;
            tau_star = tau;
        }
        points.push(RocPoint { tau, soundness, completeness });
    }

    Ok(RocAnalysis { points, tau_star, best_objective, auc: auc(&wm, &un) })
}

/// Mann-Whitney AUC over sorted inputs: ties count half.
fn auc(wm_sorted: &[f64], un_sorted: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &w in wm_sorted {
        let below = un_sorted.partition_point(|&v| v < w);
        let at_most = un_sorted.partition_point(|&v| v <= w);
        wins += below as f64 + 0.5 * (at_most - below) as f64;
    }
    wins / (wm_sorted.len() as f64 * un_sorted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_sets_reach_objective_one() {
        let wm = vec![2.0, 2.1, 2.2];
        let un = vec![1.0, 1.1, 1.2];
        let roc = roc_sweep(&wm, &un, None).unwrap();
        assert_eq!(roc.best_objective, 1.0);
        // Smallest threshold achieving the optimum: the largest null score.
        assert_eq!(roc.tau_star, 1.2);
        assert_eq!(roc.auc, 1.0);
    }

    #[test]
    fn identical_sets_have_no_edge() {
        let xs = vec![1.0, 1.5, 2.0, 2.5];
        let roc = roc_sweep(&xs, &xs, None).unwrap();
        assert!(roc.best_objective.abs() < 0.26, "{}", roc.best_objective);
        assert!((roc.auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn curves_are_monotone_step_functions() {
        let wm: Vec<f64> = (0..200).map(|i| 1.0 + (i as f64) * 0.01).collect();
        let un: Vec<f64> = (0..200).map(|i| 0.5 + (i as f64) * 0.008).collect();
        let roc = roc_sweep(&wm, &un, None).unwrap();
        for pair in roc.points.windows(2) {
            assert!(pair[1].soundness >= pair[0].soundness);
            assert!(pair[1].completeness <= pair[0].completeness);
        }
    }

    #[test]
    fn explicit_grid_and_empty_sets() {
        let grid = [0.5, 1.5, 2.5];
        let roc = roc_sweep(&[2.0], &[1.0], Some(&grid)).unwrap();
        assert_eq!(roc.points.len(), 3);
        assert_eq!(roc.tau_star, 1.5);

        assert_eq!(roc_sweep(&[], &[1.0], None).map(|_| ()), Err(Error::EmptyScoreSet));
        assert_eq!(roc_sweep(&[1.0], &[], None).map(|_| ()), Err(Error::EmptyScoreSet));
    }
}
