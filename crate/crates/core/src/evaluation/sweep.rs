use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::adaptive::{calibrate, predict_with_decision, CalibrationReport};
use crate::data::noise::{seeded_noise, NoiseKind};
use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::model::Network;

pub const DEFAULT_SIGMAS: [f64; 5] = [0.0, 0.05, 0.1, 0.2, 0.3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepPathway {
    Structural,
    /// The fused head, or the only head of a single-branch model.
    Fused,
    /// Recalibrated on a noisy calibration set at every sigma.
    Adaptive,
}

impl fmt::Display for SweepPathway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepPathway::Structural => "structural",
            SweepPathway::Fused => "fused",
            SweepPathway::Adaptive => "adaptive",
        })
    }
}

impl FromStr for SweepPathway {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structural" => Ok(SweepPathway::Structural),
            "fused" => Ok(SweepPathway::Fused),
            "adaptive" => Ok(SweepPathway::Adaptive),
            _ => Err(Error::InvalidArgument(format!(
                "unknown pathway {s:?} (structural|fused|adaptive)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub noise_kind: NoiseKind,
    pub sigma: f64,
    pub pathway: SweepPathway,
    pub accuracy: f64,
    /// Calibration behind an adaptive row.
    pub calibration: Option<CalibrationReport>,
}

fn perturb(set: &[LabeledSample], kind: NoiseKind, sigma: f64, seed: u64) -> Vec<LabeledSample> {
    set.par_iter().map(|s| seeded_noise(s, kind, sigma, seed)).collect()
}

/// Accuracy of one pathway on `eval_set` perturbed at each sigma.
///
/// Every sample's noise depends only on `(seed, kind, sigma, sample id)`.
/// The adaptive pathway needs `calibration = Some((set, gamma))`; that set is
/// perturbed at the same sigma before calibrating.
pub fn noise_sweep(
    net: &Network,
    eval_set: &[LabeledSample],
    kind: NoiseKind,
    sigmas: &[f64],
    pathway: SweepPathway,
    calibration: Option<(&[LabeledSample], f64)>,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if sigmas.is_empty() || eval_set.is_empty() {
        return Err(Error::InvalidArgument("noise sweep needs sigmas and samples".into()));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {s}")));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            let noisy = perturb(eval_set, kind, sigma, seed);
            let report = match pathway {
                SweepPathway::Adaptive => {
                    let (cal, gamma) = calibration.ok_or_else(|| {
                        Error::InvalidArgument("adaptive sweep needs a calibration set".into())
                    })?;
                    Some(calibrate(net, &perturb(cal, kind, sigma, seed), gamma)?)
                }
                _ => None,
            };
            let hits = noisy
                .par_iter()
                .map(|s| {
                    let label = match (pathway, &report) {
                        (SweepPathway::Adaptive, Some(r)) => predict_with_decision(net, &s.image, r.decision)?.label,
                        (SweepPathway::Structural, _) => net.predict_structural(&net.prepare(&s.image)?)?.argmax(),
                        _ => net.predict(&net.prepare(&s.image)?)?.primary.argmax(),
                    };
                    Ok((label == s.label) as usize)
                })
                .collect::<Result<Vec<usize>>>()?;
            Ok(SweepRow {
                noise_kind: kind,
                sigma,
                pathway,
                accuracy: hits.iter().sum::<usize>() as f64 / noisy.len() as f64,
                calibration: report,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("noise_kind,sigma,pathway,accuracy\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.noise_kind, r.sigma, r.pathway, r.accuracy).unwrap();
    }
    s
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    std::fs::write(path, sweep_csv(rows))?;
    Ok(())
}
