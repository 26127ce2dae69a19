use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Floor applied to probabilities before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// `ln(max(p, LOG_FLOOR))` that keeps NaN as NaN.
fn floored_ln(p: f64) -> f64 {
    if p < LOG_FLOOR {
        LOG_FLOOR.ln()
    } else {
        p.ln()
    }
}

/// Numerically stable softmax of a logit vector.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits.max();
    let exps: Vec<f64> = logits.data().iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::vector(exps.into_iter().map(|e| e / total).collect())
}

/// Mean negative log-likelihood of `labels` under the rows of a `[B,K]`
/// probability matrix.
pub fn cross_entropy(probabilities: &Tensor, labels: &[usize]) -> Result<f64> {
    let &[b, k] = probabilities.shape() else {
        return shape_err(format!(
            "cross entropy expects [B,K] probabilities, got {:?}",
            probabilities.shape()
        ));
    };
    if labels.len() != b {
        return shape_err(format!("{} labels for {b} rows", labels.len()));
    }
    let mut total = 0.0;
    for (row, &y) in probabilities.data().chunks_exact(k).zip(labels) {
        if y >= k {
            return Err(Error::InvalidArgument(format!("label {y} outside [0, {k})")));
        }
        total -= floored_ln(row[y]);
    }
    Ok(total / b as f64)
}

/// Loss and logit gradient of `weight * CE(softmax(logits), label)` for one
/// sample of a batch of `batch` samples, i.e. `weight/batch * (p - onehot)`.
pub fn softmax_cross_entropy_grad(
    logits: &Tensor,
    label: usize,
    weight: f64,
    batch: usize,
) -> Result<(f64, Tensor)> {
    let k = logits.len();
    if label >= k {
        return Err(Error::InvalidArgument(format!("label {label} outside [0, {k})")));
    }
    let mut p = softmax(logits);
    let loss = -floored_ln(p.data()[label]);
    p.data_mut()[label] -= 1.0;
    p.scale(weight / batch as f64);
    Ok((loss, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        let p = softmax(&Tensor::zeros(&[9]));
        assert!(p.data().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
        let z = Tensor::vector(vec![0.3, -1.2, 2.5, 0.0]);
        let shifted = z.map(|v| v + 100.0);
        assert!(softmax(&z).max_abs_diff(&softmax(&shifted)) < 1e-12);
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&Tensor::vector(vec![1f64.ln(), 3f64.ln()]));
        assert!((p.data()[0] - 0.25).abs() < 1e-15);
        assert!((p.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&Tensor::vector(vec![1e300, -1e300, 0.0]));
        assert!(p.all_finite());
        assert_eq!(p.data()[0], 1.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let onehot = Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&onehot, &[1]).unwrap(), 0.0);

        let uniform = Tensor::filled(&[1, 9], 1.0 / 9.0);
        assert!((cross_entropy(&uniform, &[4]).unwrap() - 9f64.ln()).abs() < 1e-12);
        assert!((9f64.ln() - 2.197225).abs() < 1e-6);

        let p = Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.9, 0.1]).unwrap();
        let ce = cross_entropy(&p, &[0, 1]).unwrap();
        assert!((ce - 1.497866).abs() < 1e-6);
        assert!((ce + (0.5f64.ln() + 0.1f64.ln()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let p = Tensor::filled(&[1, 3], 1.0 / 3.0);
        assert!(cross_entropy(&p, &[3]).is_err());
        assert!(cross_entropy(&p, &[0, 1]).is_err());
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let p = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let ce = cross_entropy(&p, &[1]).unwrap();
        assert!((ce - (-LOG_FLOOR.ln())).abs() < 1e-12);
    }

    #[test]
    fn nan_logits_give_nan_loss() {
        let (loss, _) = softmax_cross_entropy_grad(&Tensor::vector(vec![f64::NAN; 3]), 0, 1.0, 1).unwrap();
        assert!(loss.is_nan());
    }
}
