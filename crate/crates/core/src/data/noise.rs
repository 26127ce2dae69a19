use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{seed, LabeledSample};
use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    /// `x + n`
    Gaussian,
    /// `x * (1 + n)`
    Speckle,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Speckle => "speckle",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "speckle" => Ok(NoiseKind::Speckle),
            _ => Err(Error::InvalidArgument(format!(
                "unknown noise kind {s:?} (gaussian|speckle)"
            ))),
        }
    }
}

/// `len` i.i.d. draws from `N(0, sigma^2)`; all zeros when `sigma == 0`.
pub fn noise_field(len: usize, sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![0.0; len];
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Perturbs a sample with the given noise model and clamps to `[0,1]`.
pub fn add_noise(sample: &LabeledSample, kind: NoiseKind, sigma: f64, rng: &mut impl Rng) -> LabeledSample {
    let noise = noise_field(sample.image.len(), sigma, rng);
    let mut image = sample.image.clone();
    for (x, n) in image.data_mut().iter_mut().zip(noise) {
        let v = match kind {
            NoiseKind::Gaussian => *x + n,
            NoiseKind::Speckle => *x * (1.0 + n),
        };
        *x = v.clamp(0.0, 1.0);
    }
    LabeledSample {
        image,
        label: sample.label,
        source: sample.source.clone(),
    }
}

pub fn add_gaussian_noise(sample: &LabeledSample, sigma: f64, rng: &mut impl Rng) -> LabeledSample {
    add_noise(sample, NoiseKind::Gaussian, sigma, rng)
}

pub fn add_speckle_noise(sample: &LabeledSample, sigma: f64, rng: &mut impl Rng) -> LabeledSample {
    add_noise(sample, NoiseKind::Speckle, sigma, rng)
}

/// Noisy copy whose noise stream depends only on `(seed, kind, sigma,
/// sample id)`.
pub fn seeded_noise(sample: &LabeledSample, kind: NoiseKind, sigma: f64, seed: u64) -> LabeledSample {
    let purpose = format!("noise/{kind}");
    let mut rng = seed::stream(seed, &purpose, &sample.source, sigma.to_bits());
    add_noise(sample, kind, sigma, &mut rng)
}
