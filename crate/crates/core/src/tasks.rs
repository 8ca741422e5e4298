//! Decoders, losses, metrics and graph pre-multiplication.

use crate::error::{precondition, Result};
use crate::numerics::Matrix;

/// Initial Fermi–Dirac radius `r`.
pub const FERMI_DIRAC_R_INIT: f64 = 2.0;
/// Initial Fermi–Dirac temperature `t`.
pub const FERMI_DIRAC_T_INIT: f64 = 1.0;

/// Link probability `1 / (exp((d² - r)/t) + 1)`.
pub fn fermi_dirac(d: f64, r: f64, t: f64) -> f64 {
    let z = (d * d - r) / t;
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (z.exp() + 1.0)
    }
}

/// `-log softmax(scores)[label]`, stabilized by the maximum score.
pub fn softmax_cross_entropy(scores: &[f64], label: usize) -> Result<f64> {
    if label >= scores.len() {
        return precondition(format!(
            "label {label} out of range for {} classes",
            scores.len()
        ));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(lse - scores[label])
}

/// Row-wise argmax.
pub fn argmax_rows(scores: &Matrix) -> Vec<usize> {
    (0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

/// Micro-averaged F1, which equals accuracy for single-label multiclass data.
pub fn f1_micro(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    if pred.is_empty() {
        return precondition("F1 of an empty prediction set");
    }
    if pred.len() != truth.len() {
        return precondition(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        ));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&c| c >= classes) {
        return precondition(format!("class {bad} out of range for {classes} classes"));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for c in 0..classes {
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// Area under the ROC curve via midranks: the probability that a random
/// positive outscores a random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return precondition(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        ));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return precondition("ROC AUC needs both positive and negative labels");
    }
    if scores.iter().any(|s| s.is_nan()) {
        return precondition("ROC AUC of NaN scores");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives keeps midranks integral
    let mut twice_rank_sum = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u64;
        twice_rank_sum += twice_mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        i = j + 1;
    }
    let twice_u = twice_rank_sum - (pos * (pos + 1)) as u64;
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// `D^{-1/2}(A + I)D^{-1/2}` with `D` the degree matrix of `A + I`.
pub fn normalized_adjacency(adjacency: &Matrix) -> Result<Matrix> {
    if !adjacency.is_square() {
        return precondition(format!(
            "adjacency must be square, got {:?}",
            adjacency.shape()
        ));
    }
    let n = adjacency.rows();
    let a = adjacency.add(&Matrix::identity(n));
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / a.row(i).iter().sum::<f64>().sqrt())
        .collect();
    Ok(Matrix::from_fn(n, n, |i, j| {
        inv_sqrt[i] * a[(i, j)] * inv_sqrt[j]
    }))
}

/// `Âᵏ` with `Â` normalized (or raw `A` when `normalize` is false).
pub fn adjacency_power(adjacency: &Matrix, k: usize, normalize: bool) -> Result<Matrix> {
    if k == 0 {
        return precondition("graph power must be at least 1");
    }
    let base = if normalize {
        normalized_adjacency(adjacency)?
    } else {
        if !adjacency.is_square() {
            return precondition(format!(
                "adjacency must be square, got {:?}",
                adjacency.shape()
            ));
        }
        adjacency.clone()
    };
    Ok((1..k).fold(base.clone(), |acc, _| acc.matmul(&base)))
}

/// `Âᵏ F`.
pub fn graph_premultiply(
    adjacency: &Matrix,
    k: usize,
    features: &Matrix,
    normalize: bool,
) -> Result<Matrix> {
    if adjacency.rows() != features.rows() {
        return precondition(format!(
            "adjacency has {} nodes, features have {} rows",
            adjacency.rows(),
            features.rows()
        ));
    }
    Ok(adjacency_power(adjacency, k, normalize)?.matmul(features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fermi_dirac_examples() {
        assert!((fermi_dirac(2f64.sqrt(), 2.0, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(fermi_dirac(1.0, 1.0, 0.3), 0.5);
        assert!((fermi_dirac(3f64.sqrt(), 2.0, 1.0) - 1.0 / (1f64.exp() + 1.0)).abs() < 1e-12);
        assert!((fermi_dirac(3f64.sqrt(), 2.0, 1.0) - 0.26894).abs() < 1e-5);
        let far = fermi_dirac(1e3, 2.0, 1.0);
        assert!(far >= 0.0 && far < 1e-300);
        assert!(fermi_dirac(0.0, 2.0, 1.0) < 1.0);
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((softmax_cross_entropy(&[0.3; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!(softmax_cross_entropy(&[1e3, 0.0, 0.0], 0).unwrap() < 1e-12);
        let expected = (1.0 + 1f64.exp()).ln() - 1.0;
        assert!((softmax_cross_entropy(&[1.0, 0.0], 1).unwrap() - expected - 1.0).abs() < 1e-15);
        assert!((softmax_cross_entropy(&[0.0, 1.0], 1).unwrap() - expected).abs() < 1e-15);
        assert!(softmax_cross_entropy(&[0.0], 1).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_micro(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(f1_micro(&[1, 2, 0], &[0, 1, 2], 3).unwrap(), 0.0);
        assert_eq!(f1_micro(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap(), 0.75);
        assert!(f1_micro(&[], &[], 2).is_err());
        assert!(f1_micro(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn auc_examples() {
        let l = [true, true, false, false];
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.1], &l).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.3, 0.8, 0.9], &l).unwrap(), 0.0);
        // every positive outranks every negative here
        assert_eq!(
            roc_auc(&[0.9, 0.4, 0.6, 0.1], &[true, false, true, false]).unwrap(),
            1.0
        );
        assert_eq!(
            roc_auc(&[0.9, 0.7, 0.6, 0.1], &[true, false, true, false]).unwrap(),
            0.75
        );
        assert_eq!(roc_auc(&[0.5; 4], &l).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn premultiply_examples() {
        let f = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 5.0]]);
        assert_eq!(
            graph_premultiply(&Matrix::zeros(2, 2), 1, &f, true).unwrap(),
            f
        );
        let a = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let mixed = graph_premultiply(&a, 1, &f, true).unwrap();
        let avg = Matrix::from_rows(&[&[2.0, 3.5], &[2.0, 3.5]]);
        assert!(mixed.max_abs_diff(&avg) < 1e-15);
        assert_eq!(
            graph_premultiply(&a, 1, &f, false).unwrap(),
            Matrix::from_rows(&[&[3.0, 5.0], &[1.0, 2.0]])
        );
        assert!(graph_premultiply(&a, 0, &f, true).is_err());
        assert!(graph_premultiply(&Matrix::zeros(3, 3), 1, &f, true).is_err());
    }

    fn pair_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    fn random_graph(n: usize, bits: &[bool]) -> Matrix {
        let mut a = Matrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                if bits[k % bits.len()] {
                    a[(i, j)] = 1.0;
                    a[(j, i)] = 1.0;
                }
                k += 1;
            }
        }
        a
    }

    proptest! {
        #[test]
        fn fermi_dirac_decreases_with_distance(d1 in 0.0f64..5.0, gap in 1e-3f64..5.0, r in -2.0f64..4.0, t in 0.1f64..3.0) {
            let (a, b) = (fermi_dirac(d1, r, t), fermi_dirac(d1 + gap, r, t));
            prop_assert!(a > b);
            prop_assert!(a > 0.0 && a < 1.0);
        }

        #[test]
        fn auc_matches_pair_counting(
            data in proptest::collection::vec((0u8..6, any::<bool>()), 2..50)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 5.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), pair_auc(&scores, &labels));
        }

        #[test]
        fn graph_power_equals_repeated_application(
            n in 2usize..8,
            bits in proptest::collection::vec(any::<bool>(), 1..30),
            k in 1usize..5,
        ) {
            let a = random_graph(n, &bits);
            let f = Matrix::from_fn(n, 3, |i, j| (i * 3 + j) as f64 * 0.1 - 0.5);
            let once = (0..k).fold(f.clone(), |acc, _| graph_premultiply(&a, 1, &acc, true).unwrap());
            prop_assert!(graph_premultiply(&a, k, &f, true).unwrap().max_abs_diff(&once) < 1e-10);
        }
    }
}
