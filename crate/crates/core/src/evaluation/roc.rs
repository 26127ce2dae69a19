use std::cmp::Ordering;

use crate::error::{shape_err, Error, Result};
use crate::numerics::Tensor;

/// Area under the ROC curve from the Mann–Whitney statistic with midranks
/// for ties. `None` without at least one positive and one negative.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // sum of doubled midranks of the positives keeps everything integral
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the midrank (i + j + 2) / 2
        let doubled_mid = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| positive[k]).count() as u128;
        doubled_rank_sum += doubled_mid * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    // 2U = 2R - p(p+1)
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Some(doubled_u as f64 / (2 * p * n) as f64)
}

/// One-vs-rest AUC per class for scores `[N,K]`.
pub fn roc_auc_ovr(scores: &Tensor, labels: &[usize]) -> Result<Vec<Option<f64>>> {
    let (n, k) = match scores.shape() {
        &[n, k] => (n, k),
        s => return shape_err(format!("scores must be [N,K], got {s:?}")),
    };
    if labels.len() != n {
        return shape_err(format!("{n} score rows for {} labels", labels.len()));
    }
    if let Some(y) = labels.iter().find(|y| **y >= k) {
        return Err(Error::InvalidArgument(format!("label {y} outside [0, {k})")));
    }
    Ok((0..k)
        .map(|c| {
            let column: Vec<f64> = (0..n).map(|i| scores.data()[i * k + c]).collect();
            let positive: Vec<bool> = labels.iter().map(|y| *y == c).collect();
            binary_auc(&column, &positive)
        })
        .collect())
}

/// ROC points `(false positive rate, true positive rate)` from the most
/// to the least strict threshold, starting at `(0, 0)`.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64)> {
    let n_pos = positive.iter().filter(|p| **p).count().max(1) as f64;
    let n_neg = positive.iter().filter(|p| !**p).count().max(1) as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (idx, &k) in order.iter().enumerate() {
        if positive[k] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(idx + 1).is_none_or(|&next| scores[next] != scores[k]);
        if last_of_group {
            points.push((fp as f64 / n_neg, tp as f64 / n_pos));
        }
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_binary_case() {
        let auc = binary_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn separating_and_tied_scores() {
        let pos = [false, false, true, true, true];
        assert_eq!(binary_auc(&[0.0, 0.1, 0.5, 0.6, 0.9], &pos), Some(1.0));
        assert_eq!(binary_auc(&[0.3; 5], &pos), Some(0.5));
        assert_eq!(binary_auc(&[0.3; 3], &[true; 3]), None);
    }

    #[test]
    fn trapezoid_under_curve_matches() {
        let scores = [0.2, 0.2, 0.5, 0.7, 0.1, 0.5, 0.9, 0.3];
        let pos = [true, false, true, false, false, true, true, false];
        let pts = roc_curve(&scores, &pos);
        let area: f64 = pts
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum();
        assert!((area - binary_auc(&scores, &pos).unwrap()).abs() < 1e-12);
        assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn ovr_reports_undefined_classes() {
        let scores = Tensor::new(vec![3, 3], vec![0.8, 0.1, 0.1, 0.2, 0.7, 0.1, 0.6, 0.3, 0.1]).unwrap();
        let auc = roc_auc_ovr(&scores, &[0, 1, 0]).unwrap();
        assert_eq!(auc[0], Some(1.0));
        assert_eq!(auc[1], Some(1.0));
        assert_eq!(auc[2], None);
    }
}
