use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total()).0
    }

    /// Samples whose true class is `class`.
    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    /// One-vs-rest `(tp, fp, fn, tn)` for `class`.
    pub fn one_vs_rest(&self, class: usize) -> (usize, usize, usize, usize) {
        let tp = self.counts[class][class];
        let predicted: usize = self.counts.iter().map(|row| row[class]).sum();
        let actual = self.support(class);
        let fp = predicted - tp;
        let fn_ = actual - tp;
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }
}

pub fn confusion_matrix(predictions: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut counts = vec![vec![0; k]; k];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= k || y >= k {
            return Err(Error::InvalidArgument(format!(
                "class index outside [0, {k}): prediction {p}, label {y}"
            )));
        }
        counts[y][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// `num / den`, or `(0, true)` when `den == 0`.
fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// One-vs-rest metrics of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub npv: f64,
    pub f1: f64,
    /// `None` when the class has no positives or no negatives.
    pub auc: Option<f64>,
    pub misclassification: f64,
    /// Names of metrics whose denominator was zero (reported as 0).
    pub undefined: Vec<&'static str>,
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<Vec<ClassMetrics>> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::InvalidArgument("metrics of an empty confusion matrix".into()));
    }
    Ok((0..cm.num_classes())
        .map(|c| {
            let (tp, fp, fn_, tn) = cm.one_vs_rest(c);
            let mut undefined = Vec::new();
            let mut rate = |name, num, den| {
                let (v, flag) = ratio(num, den);
                if flag {
                    undefined.push(name);
                }
                v
            };
            let accuracy = rate("accuracy", tp + tn, n);
            let precision = rate("precision", tp, tp + fp);
            let recall = rate("recall", tp, tp + fn_);
            let specificity = rate("specificity", tn, tn + fp);
            let npv = rate("npv", tn, tn + fn_);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                undefined.push("f1");
                0.0
            };
            ClassMetrics {
                class: c,
                support: tp + fn_,
                accuracy,
                precision,
                recall,
                specificity,
                npv,
                f1,
                auc: None,
                misclassification: 1.0 - recall,
                undefined,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_tally() {
        let cm = confusion_matrix(&[0, 1, 2, 2, 1, 0], &[0, 1, 2, 1, 1, 2], 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 2, 1], vec![1, 0, 1]]);
        assert_eq!(cm.total(), 6);
        assert_eq!((0..3).map(|c| cm.support(c)).collect::<Vec<_>>(), vec![1, 3, 2]);
    }

    #[test]
    fn perfect_and_constant_predictions() {
        let labels: Vec<usize> = (0..18).map(|i| i % 9).collect();
        let cm = confusion_matrix(&labels, &labels, 9).unwrap();
        for (i, row) in cm.counts.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 2 } else { 0 });
            }
        }
        for m in per_class_metrics(&cm).unwrap() {
            for v in [m.accuracy, m.precision, m.recall, m.specificity, m.npv, m.f1] {
                assert_eq!(v, 1.0);
            }
            assert_eq!(m.misclassification, 0.0);
        }
        let cm = confusion_matrix(&[0; 18], &labels, 9).unwrap();
        assert!(cm.counts.iter().all(|row| row[1..].iter().all(|v| *v == 0)));
    }

    #[test]
    fn two_class_fixture() {
        let cm = ConfusionMatrix {
            counts: vec![vec![8, 2], vec![1, 9]],
        };
        let m = per_class_metrics(&cm).unwrap();
        let p = 8.0 / 9.0;
        assert_eq!(m[0].precision, p);
        assert_eq!(m[0].recall, 0.8);
        assert_eq!(m[0].specificity, 0.9);
        assert_eq!(m[0].npv, 9.0 / 11.0);
        assert_eq!(m[0].f1, 2.0 * (p * 0.8) / (p + 0.8));
        assert_eq!(m[0].accuracy, 17.0 / 20.0);
        // one-vs-rest consistency between the two views
        assert_eq!(m[0].precision, m[1].npv);
        assert_eq!(m[0].recall, m[1].specificity);
    }

    #[test]
    fn degenerate_single_class_is_flagged() {
        let cm = confusion_matrix(&[0, 0, 0], &[0, 0, 0], 2).unwrap();
        let m = per_class_metrics(&cm).unwrap();
        assert!(m[0].undefined.contains(&"specificity"));
        assert!(m[1].undefined.contains(&"precision"));
        assert!(m[1].undefined.contains(&"f1"));
        for c in &m {
            for v in [c.accuracy, c.precision, c.recall, c.specificity, c.npv, c.f1] {
                assert!(v.is_finite() && (0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
        assert!(confusion_matrix(&[0], &[0, 1], 3).is_err());
    }
}
