//! Classification metrics, one-vs-rest ROC analysis and noise sweeps.

mod metrics;
mod roc;
mod sweep;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

pub use metrics::{confusion_matrix, per_class_metrics, ClassMetrics, ConfusionMatrix};
pub use roc::{binary_auc, roc_auc_ovr, roc_curve};
pub use sweep::{noise_sweep, sweep_csv, write_sweep_csv, SweepPathway, SweepRow, DEFAULT_SIGMAS};

use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::model::{Network, Prediction};
use crate::numerics::{argmax, softmax, Tensor};

/// Means of the per-class metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroAverages {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub npv: f64,
    pub f1: f64,
    /// Over classes with a defined AUC.
    pub auc: Option<f64>,
    pub min_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub classes: Vec<ClassMetrics>,
    pub macro_avg: MacroAverages,
    pub overall_accuracy: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl EvaluationReport {
    /// Report from class probabilities `[N,K]`; predictions are row argmaxes.
    pub fn from_scores(scores: &Tensor, labels: &[usize], class_names: &[String]) -> Result<Self> {
        let k = class_names.len();
        if scores.rank() != 2 || scores.dim(1) != k {
            return Err(Error::Shape(format!(
                "scores {:?} do not match {k} classes",
                scores.shape()
            )));
        }
        let predictions: Vec<usize> = scores.data().chunks(k).map(argmax).collect();
        let confusion = confusion_matrix(&predictions, labels, k)?;
        let mut classes = per_class_metrics(&confusion)?;
        for (m, auc) in classes.iter_mut().zip(roc_auc_ovr(scores, labels)?) {
            m.auc = auc;
        }
        let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / k as f64;
        let aucs: Vec<f64> = classes.iter().filter_map(|m| m.auc).collect();
        let macro_avg = MacroAverages {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            specificity: mean(|m| m.specificity),
            npv: mean(|m| m.npv),
            f1: mean(|m| m.f1),
            auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            min_auc: aucs.iter().copied().reduce(f64::min),
        };
        Ok(Self {
            class_names: class_names.to_vec(),
            overall_accuracy: confusion.accuracy(),
            confusion,
            classes,
            macro_avg,
        })
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("class,accuracy,precision,recall,specificity,npv,f1,auc,misclassification\n");
        for m in &self.classes {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                self.class_names[m.class],
                m.accuracy,
                m.precision,
                m.recall,
                m.specificity,
                m.npv,
                m.f1,
                fmt_opt(m.auc),
                m.misclassification
            )
            .unwrap();
        }
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = format!("true\\predicted,{}\n", self.class_names.join(","));
        for (name, row) in self.class_names.iter().zip(&self.confusion.counts) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(s, "{name},{}", cells.join(",")).unwrap();
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let m = &self.macro_avg;
        let mut s = String::new();
        writeln!(s, "samples = {}", self.confusion.total()).unwrap();
        writeln!(s, "overall_accuracy = {}", self.overall_accuracy).unwrap();
        writeln!(s, "macro_precision = {}", m.precision).unwrap();
        writeln!(s, "macro_recall = {}", m.recall).unwrap();
        writeln!(s, "macro_specificity = {}", m.specificity).unwrap();
        writeln!(s, "macro_npv = {}", m.npv).unwrap();
        writeln!(s, "macro_f1 = {}", m.f1).unwrap();
        writeln!(s, "macro_auc = {}", fmt_opt(m.auc)).unwrap();
        writeln!(s, "min_auc = {}", fmt_opt(m.min_auc)).unwrap();
        for c in self.classes.iter().filter(|c| !c.undefined.is_empty()) {
            writeln!(s, "undefined.{} = {}", self.class_names[c.class], c.undefined.join(";")).unwrap();
        }
        s
    }

    /// Writes `metrics.csv`, `summary.txt` and `confusion.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        std::fs::write(dir.join("summary.txt"), self.summary_text())?;
        std::fs::write(dir.join("confusion.csv"), self.confusion_csv())?;
        Ok(())
    }
}

/// Eval-mode predictions of every sample, in sample order.
pub fn predict_all(net: &Network, samples: &[LabeledSample]) -> Result<Vec<Prediction>> {
    samples
        .par_iter()
        .map(|s| net.predict(&net.prepare(&s.image)?))
        .collect()
}

/// Stacks per-sample logits into softmax probabilities `[N,K]`.
pub fn probability_matrix<'a>(logits: impl IntoIterator<Item = &'a Tensor>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut k = 0;
    for z in logits {
        k = z.len();
        data.extend_from_slice(softmax(z).data());
        n += 1;
    }
    Tensor::new(vec![n, k], data)
}

/// Evaluates the primary (fused or single-branch) head on `samples`.
pub fn evaluate(net: &Network, samples: &[LabeledSample], class_names: &[String]) -> Result<EvaluationReport> {
    let predictions = predict_all(net, samples)?;
    let scores = probability_matrix(predictions.iter().map(|p| &p.primary))?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    EvaluationReport::from_scores(&scores, &labels, class_names)
}

/// Fraction of rows of `logits` whose argmax equals the label.
pub fn accuracy_of<'a>(logits: impl IntoIterator<Item = &'a Tensor>, labels: &[usize]) -> f64 {
    let correct = logits
        .into_iter()
        .zip(labels)
        .filter(|(z, y)| z.argmax() == **y)
        .count();
    correct as f64 / labels.len().max(1) as f64
}
