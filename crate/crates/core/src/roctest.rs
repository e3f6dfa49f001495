//! ROC AUC with midrank tie handling and DeLong's test for two correlated
//! AUCs computed on the same observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Alternative hypothesis of the paired AUC test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// AUC of the first score vector is larger.
    Greater,
    /// AUC of the first score vector is smaller.
    Less,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocComparison {
    pub auc_a: f64,
    pub auc_b: f64,
    pub variance_of_difference: f64,
    /// Infinite when the variance vanishes but the AUCs differ.
    pub z_statistic: f64,
    pub p_value: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Set when the variance of the difference is zero.
    pub degenerate: bool,
}

/// 1-based ranks with ties replaced by the mean rank of their run.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

fn class_counts(labels: &[u8]) -> Result<(usize, usize)> {
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    Ok((n_pos, n_neg))
}

fn check_scores(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    Ok(())
}

/// Area under the ROC curve, counting tied (positive, negative) pairs as 1/2.
pub fn auc_midrank(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_scores(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels)?;
    let ranks = midranks(scores);
    // Twice the rank sum is an integer, so the Mann-Whitney count is exact.
    let twice_rank_sum: u64 =
        ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| (2.0 * r) as u64).sum();
    let twice_u = twice_rank_sum - (n_pos * (n_pos + 1)) as u64;
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Structural components of one score vector: per-positive and per-negative
/// placement values whose means equal the AUC.
struct Components {
    positive: Vec<f64>,
    negative: Vec<f64>,
    auc: f64,
}

fn components(scores: &[f64], labels: &[u8], n_pos: usize, n_neg: usize) -> Components {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(s, _)| *s).collect();
    let mut all = pos.clone();
    all.extend(&neg);
    let rank_all = midranks(&all);
    let rank_pos = midranks(&pos);
    let rank_neg = midranks(&neg);
    let positive: Vec<f64> =
        (0..n_pos).map(|i| (rank_all[i] - rank_pos[i]) / n_neg as f64).collect();
    let negative: Vec<f64> =
        (0..n_neg).map(|j| 1.0 - (rank_all[n_pos + j] - rank_neg[j]) / n_pos as f64).collect();
    let auc = positive.iter().sum::<f64>() / n_pos as f64;
    Components { positive, negative, auc }
}

/// Sample covariance with denominator `len - 1` (or 1 for a single value).
fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    s / (n - 1.0).max(1.0)
}

/// Upper tail of the standard normal, `P(Z > z)`.
pub fn normal_upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// DeLong's two-sided test of equal AUCs for two score vectors on the same
/// observations.
pub fn delong_paired_test(scores_a: &[f64], scores_b: &[f64], labels: &[u8]) -> Result<RocComparison> {
    delong_paired_test_with(scores_a, scores_b, labels, Alternative::TwoSided)
}

pub fn delong_paired_test_with(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[u8],
    alternative: Alternative,
) -> Result<RocComparison> {
    check_scores(scores_a, labels)?;
    check_scores(scores_b, labels)?;
    let (n_pos, n_neg) = class_counts(labels)?;
    let a = components(scores_a, labels, n_pos, n_neg);
    let b = components(scores_b, labels, n_pos, n_neg);

    let s = |x: &Components, y: &Components| {
        covariance(&x.positive, &y.positive) / n_pos as f64
            + covariance(&x.negative, &y.negative) / n_neg as f64
    };
    let (s_aa, s_bb, s_ab) = (s(&a, &a), s(&b, &b), s(&a, &b));
    let var = (s_aa + s_bb - 2.0 * s_ab).max(0.0);
    let diff = a.auc - b.auc;

    let degenerate = var <= f64::EPSILON * (s_aa + s_bb);
    let (z, p) = if degenerate {
        if diff == 0.0 {
            (0.0, 1.0)
        } else {
            let z = diff.signum() * f64::INFINITY;
            let p = match alternative {
                Alternative::TwoSided => 0.0,
                Alternative::Greater => (diff < 0.0) as u8 as f64,
                Alternative::Less => (diff > 0.0) as u8 as f64,
            };
            (z, p)
        }
    } else {
        let z = diff / var.sqrt();
        let p = match alternative {
            Alternative::TwoSided => (2.0 * normal_upper_tail(z.abs())).min(1.0),
            Alternative::Greater => normal_upper_tail(z),
            Alternative::Less => normal_upper_tail(-z),
        };
        (z, p)
    };
    Ok(RocComparison {
        auc_a: a.auc,
        auc_b: b.auc,
        variance_of_difference: var,
        z_statistic: z,
        p_value: p,
        n_pos,
        n_neg,
        degenerate,
    })
}
