//! Statistical verification: distribution-preservation checks, the false
//! alarm bound and its Monte-Carlo verifier, ROC construction, and the
//! green-list hyperparameter sweep.

mod distribution;
mod false_alarm;
mod roc;
mod sweep;

pub use distribution::{
    verify_distribution_preservation, DistributionConfig, DistributionReport, JointGof,
    PositionGof,
};
pub use false_alarm::{
    theorem2_bound, verify_false_alarm, FalseAlarmCell, FalseAlarmConfig, FalseAlarmReport,
};
pub use roc::{roc_sweep, RocAnalysis, RocPoint};
pub use sweep::{greenlist_sweep, mean_greenlist_z, SweepConfig, SweepRecord, SweepReport};

use statrs::distribution::{Beta, ChiSquared, ContinuousCDF};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Welch's z statistic for a difference in population means.
pub fn welch_z(a: &[f64], b: &[f64]) -> f64 {
    let se = (sample_variance(a) / a.len() as f64 + sample_variance(b) / b.len() as f64).sqrt();
    (mean(a) - mean(b)) / se
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..xs.len() {
        let a = rx[i] - mx;
        let b = ry[i] - my;
        num += a * b;
        dx += a * a;
        dy += b * b;
    }
    num / (dx * dy).sqrt()
}

/// Pearson chi-square goodness-of-fit statistic and p-value against the
/// given cell probabilities. Zero-probability cells must stay empty: any
/// observation there forces an immediate failure (p = 0).
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> (f64, f64) {
    debug_assert_eq!(counts.len(), probs.len());
    let n: u64 = counts.iter().sum();
    let nf = n as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        if p > 0.0 {
            cells += 1;
            let expect = nf * p;
            let diff = c as f64 - expect;
            stat += diff * diff / expect;
        } else if c > 0 {
            return (f64::INFINITY, 0.0);
        }
    }
    if cells <= 1 {
        return (0.0, 1.0);
    }
    let df = (cells - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(df).expect("df >= 1").cdf(stat);
    (stat, p_value)
}

/// Two-sample chi-square homogeneity test over matched count vectors.
pub fn two_sample_chi_square(a: &[u64], b: &[u64]) -> (f64, f64) {
    debug_assert_eq!(a.len(), b.len());
    let total_a: u64 = a.iter().sum();
    let total_b: u64 = b.iter().sum();
    let grand = (total_a + total_b) as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&ca, &cb) in a.iter().zip(b) {
        let col = (ca + cb) as f64;
        if col == 0.0 {
            continue;
        }
        cells += 1;
        for (group_total, obs) in [(total_a, ca), (total_b, cb)] {
            let expect = group_total as f64 * col / grand;
            if expect > 0.0 {
                let diff = obs as f64 - expect;
                stat += diff * diff / expect;
            }
        }
    }
    if cells <= 1 {
        return (0.0, 1.0);
    }
    let df = (cells - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(df).expect("df >= 1").cdf(stat);
    (stat, p_value)
}

/// Total variation distance between an empirical histogram and a reference
/// distribution.
pub fn total_variation(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let nf = n as f64;
    0.5 * counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| (c as f64 / nf - p).abs())
        .sum::<f64>()
}

/// One-sided Clopper-Pearson upper confidence bound for a binomial rate.
pub fn clopper_pearson_upper(hits: usize, trials: usize, confidence: f64) -> f64 {
    debug_assert!(trials > 0);
    if hits >= trials {
        return 1.0;
    }
    Beta::new((hits + 1) as f64, (trials - hits) as f64)
        .expect("valid beta parameters")
        .inverse_cdf(confidence)
}
