//! Evaluation metrics: rank AUC, error measures, binned KL divergence,
//! and the Pearson correlation with an explicit degenerate-variance flag.

use crate::error::{Error, Result};

/// Additive smoothing applied before normalizing response mass.
pub const KL_SMOOTHING: f64 = 1e-9;
/// Bin count for distribution comparisons over the treatment axis.
pub const KL_BINS: usize = 16;

/// Mann-Whitney AUC with ties sharing averaged ranks. `None` when only one
/// class is present.
pub fn auc(labels: &[u8], scores: &[f64]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0f64; labels.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg_rank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l == 1)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

pub fn mae(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.len() as f64
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

/// Normalize non-negative response values into a smoothed probability
/// mass over bins.
pub fn response_mass(curve: &[f64]) -> Vec<f64> {
    let total: f64 = curve.iter().sum::<f64>() + KL_SMOOTHING * curve.len() as f64;
    curve.iter().map(|&v| (v + KL_SMOOTHING) / total).collect()
}

/// KL(p || q) over response masses derived from two curves sampled on the
/// same bins.
pub fn kl_divergence(pred_curve: &[f64], truth_curve: &[f64]) -> Result<f64> {
    if pred_curve.len() != truth_curve.len() || pred_curve.is_empty() {
        return Err(Error::WidthMismatch {
            what: "kl curves",
            expected: truth_curve.len(),
            got: pred_curve.len(),
        });
    }
    let p = response_mass(pred_curve);
    let q = response_mass(truth_curve);
    Ok(p.iter()
        .zip(&q)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0))
}

/// Pearson correlation; the flag reports a degenerate (zero-variance)
/// input, in which case the value is pinned to 0 by convention.
pub fn pearson(a: &[f64], b: &[f64]) -> (f64, bool) {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return (0.0, true);
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 1e-300 || vb <= 1e-300 {
        return (0.0, true);
    }
    ((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_ranker_has_unit_auc() {
        let labels = vec![0, 0, 1, 1, 1];
        let scores = vec![0.1, 0.2, 0.7, 0.8, 0.9];
        assert_eq!(auc(&labels, &scores), Some(1.0));
    }

    #[test]
    fn reversed_ranker_has_zero_auc() {
        let labels = vec![1, 0];
        let scores = vec![0.1, 0.9];
        assert_eq!(auc(&labels, &scores), Some(0.0));
    }

    #[test]
    fn ties_are_rank_averaged() {
        // one positive tied with one negative: AUC = 0.5
        let labels = vec![0, 1];
        let scores = vec![0.4, 0.4];
        assert_eq!(auc(&labels, &scores), Some(0.5));
    }

    #[test]
    fn single_class_has_no_auc() {
        assert_eq!(auc(&[1, 1], &[0.1, 0.9]), None);
    }

    #[test]
    fn random_scores_on_balanced_labels_sit_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a = auc(&labels, &scores).unwrap();
        assert!((a - 0.5).abs() < 0.02, "auc {a}");
    }

    #[test]
    fn kl_of_identical_curves_is_zero() {
        let curve = vec![0.1, 0.4, 0.2, 0.7];
        assert_eq!(kl_divergence(&curve, &curve).unwrap(), 0.0);
    }

    #[test]
    fn kl_is_positive_for_different_curves() {
        let a = vec![0.1, 0.2, 0.6, 0.9];
        let b = vec![0.9, 0.6, 0.2, 0.1];
        assert!(kl_divergence(&a, &b).unwrap() > 0.01);
        assert!(kl_divergence(&a, &[0.1]).is_err());
    }

    #[test]
    fn pearson_identity_and_degenerate() {
        let x = vec![1.0, 2.0, 5.0, -3.0];
        let (r, flag) = pearson(&x, &x);
        assert_eq!(r, 1.0);
        assert!(!flag);
        let (r0, flag0) = pearson(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]);
        assert_eq!(r0, 0.0);
        assert!(flag0);
    }

    #[test]
    fn error_measures_match_hand_values() {
        let a = vec![1.0, 2.0, 3.0];
        let b = vec![2.0, 2.0, 1.0];
        assert!((mae(&a, &b) - 1.0).abs() < 1e-15);
        assert!((mse(&a, &b) - 5.0 / 3.0).abs() < 1e-15);
    }
}
