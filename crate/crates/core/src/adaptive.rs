//! Calibration-gated choice between the structural pathway and the fused
//! model.
//!
//! The structural pathway's accuracy is measured once on a calibration set.
//! If it reaches the threshold `gamma`, every later prediction uses the
//! structural head alone; otherwise the fused head is used.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::seed::fnv1a;
use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::model::checkpoint::to_bytes;
use crate::model::{parse_key_values, Network};
use crate::numerics::{softmax, Tensor};

pub const DEFAULT_GAMMA: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    StructuralOnly,
    Fused,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::StructuralOnly => "structural_only",
            Decision::Fused => "fused",
        })
    }
}

impl FromStr for Decision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structural_only" => Ok(Decision::StructuralOnly),
            "fused" => Ok(Decision::Fused),
            _ => Err(Error::InvalidArgument(format!("unknown decision {s:?}"))),
        }
    }
}

/// Pathway that produced an adaptive prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathwayUsed {
    Structural,
    Fused,
}

impl fmt::Display for PathwayUsed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathwayUsed::Structural => "structural",
            PathwayUsed::Fused => "fused",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    /// Structural-pathway accuracy on the calibration set.
    pub a_a: f64,
    pub n_c: usize,
    pub gamma: f64,
    pub decision: Decision,
    /// Per calibration sample, whether the structural argmax was correct.
    pub correct: Vec<bool>,
    /// Hash of the checkpoint bytes the report was measured on.
    pub fingerprint: u64,
}

/// Identifies a network's configuration, parameters and running statistics.
pub fn network_fingerprint(net: &Network) -> u64 {
    fnv1a(&to_bytes(net))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma must lie in (0,1), got {gamma}")))
    }
}

/// Structural pathway decision for accuracy `a_a`; ties go to the
/// structural pathway.
pub fn decide(a_a: f64, gamma: f64) -> Decision {
    if a_a >= gamma {
        Decision::StructuralOnly
    } else {
        Decision::Fused
    }
}

impl CalibrationReport {
    /// Builds a report from per-sample correctness.
    pub fn from_correct(correct: Vec<bool>, gamma: f64, fingerprint: u64) -> Result<Self> {
        check_gamma(gamma)?;
        if correct.is_empty() {
            return Err(Error::InvalidArgument("empty calibration set".into()));
        }
        let n_c = correct.len();
        let a_a = correct.iter().filter(|c| **c).count() as f64 / n_c as f64;
        Ok(Self {
            a_a,
            n_c,
            gamma,
            decision: decide(a_a, gamma),
            correct,
            fingerprint,
        })
    }

    /// Same measurement, new threshold.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::from_correct(self.correct.clone(), gamma, self.fingerprint)
    }

    pub fn to_text(&self) -> String {
        let bits: String = self.correct.iter().map(|&c| if c { '1' } else { '0' }).collect();
        format!(
            "a_a={:?}\nn_c={}\ngamma={:?}\ndecision={}\nfingerprint={:016x}\ncorrect={bits}\n",
            self.a_a, self.n_c, self.gamma, self.decision, self.fingerprint
        )
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            kind: "calibration report",
            path: path.to_path_buf(),
            reason,
        };
        let pairs = parse_key_values(text).map_err(|e| bad(e.to_string()))?;
        let get = |key: &str| {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| bad(format!("missing key {key}")))
        };
        let num = |key: &str| -> Result<f64> {
            get(key)?.parse().map_err(|_| bad(format!("{key} is not a number")))
        };
        let correct = get("correct")?
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                _ => Err(bad(format!("bad correctness flag {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let fingerprint = u64::from_str_radix(get("fingerprint")?, 16).map_err(|e| bad(e.to_string()))?;
        let report = Self::from_correct(correct, num("gamma")?, fingerprint).map_err(|e| bad(e.to_string()))?;
        let n_c: usize = get("n_c")?.parse().map_err(|_| bad("n_c is not an integer".into()))?;
        let decision: Decision = get("decision")?.parse().map_err(|e: Error| bad(e.to_string()))?;
        if n_c != report.n_c || num("a_a")? != report.a_a || decision != report.decision {
            return Err(bad("a_a, n_c or decision disagree with the correctness flags".into()));
        }
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, path)
    }
}

/// Measures structural-pathway accuracy on `set` and fixes the pathway.
pub fn calibrate(net: &Network, set: &[LabeledSample], gamma: f64) -> Result<CalibrationReport> {
    check_gamma(gamma)?;
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty calibration set".into()));
    }
    let correct = set
        .par_iter()
        .map(|s| Ok(net.predict_structural(&net.prepare(&s.image)?)?.argmax() == s.label))
        .collect::<Result<Vec<bool>>>()?;
    CalibrationReport::from_correct(correct, gamma, network_fingerprint(net))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptivePrediction {
    pub label: usize,
    pub probabilities: Tensor,
    pub pathway: PathwayUsed,
}

/// Classifies one preprocessed `[1,S,S]` image with the pathway chosen at
/// calibration.
pub fn predict_adaptive(net: &Network, image: &Tensor, report: &CalibrationReport) -> Result<AdaptivePrediction> {
    if report.fingerprint != network_fingerprint(net) {
        return Err(Error::InvalidArgument(
            "calibration report was produced for a different checkpoint".into(),
        ));
    }
    predict_with_decision(net, image, report.decision)
}

/// Prediction through a fixed pathway, without the checkpoint check.
pub fn predict_with_decision(net: &Network, image: &Tensor, decision: Decision) -> Result<AdaptivePrediction> {
    let input = net.prepare(image)?;
    let (logits, pathway) = match decision {
        Decision::StructuralOnly => (net.predict_structural(&input)?, PathwayUsed::Structural),
        Decision::Fused => (net.predict(&input)?.primary, PathwayUsed::Fused),
    };
    let probabilities = softmax(&logits);
    Ok(AdaptivePrediction {
        label: probabilities.argmax(),
        probabilities,
        pathway,
    })
}
