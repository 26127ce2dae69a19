use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::adaptive::DEFAULT_GAMMA;
use crate::data::NoiseKind;
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_SIGMAS;
use crate::model::{parse_key_values, ModelConfig, CONFIG_KEYS};
use crate::training::TrainConfig;

/// Every configurable value of a run, as a flat `key = value` namespace.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Also carries the run seed.
    pub train: TrainConfig,
    pub gamma: f64,
    pub noise_kind: NoiseKind,
    pub sigmas: Vec<f64>,
    /// Gaussian sigma of the noisy column of the ablation summary.
    pub ablation_sigma: f64,
    pub per_class: usize,
    pub image_side: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            gamma: DEFAULT_GAMMA,
            noise_kind: NoiseKind::Gaussian,
            sigmas: DEFAULT_SIGMAS.to_vec(),
            ablation_sigma: 0.3,
            per_class: 30,
            image_side: 96,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn optional<T: std::fmt::Debug>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |x| format!("{x:?}"))
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = (key.trim(), value.trim());
        if CONFIG_KEYS.contains(&key) {
            return self.model.set(key, value);
        }
        let t = &mut self.train;
        match key {
            "seed" => t.seed = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.adam.learning_rate = parse(key, value)?,
            "beta1" => t.adam.beta1 = parse(key, value)?,
            "beta2" => t.adam.beta2 = parse(key, value)?,
            "adam_epsilon" => t.adam.epsilon = parse(key, value)?,
            "augment" => t.augment = parse(key, value)?,
            "flip_probability" => t.augment_config.flip_probability = parse(key, value)?,
            "max_rotation_degrees" => t.augment_config.max_rotation_degrees = parse(key, value)?,
            "brightness" => t.augment_config.brightness = parse(key, value)?,
            "contrast" => t.augment_config.contrast = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "patience" => t.patience = parse_optional(key, value)?,
            "grad_clip" => t.grad_clip = parse_optional(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "noise_kind" => self.noise_kind = value.parse()?,
            "sigmas" => {
                self.sigmas = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "ablation_sigma" => self.ablation_sigma = parse(key, value)?,
            "per_class" => self.per_class = parse(key, value)?,
            "image_side" => self.image_side = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; later lines win.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_key_values(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("sigmas must be a non-empty list of values >= 0".into()));
        }
        if !(self.ablation_sigma >= 0.0) {
            return Err(Error::Config("ablation_sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let sigmas: Vec<String> = self.sigmas.iter().map(|s| format!("{s:?}")).collect();
        let mut s = self.model.to_text();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("seed", t.seed.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("learning_rate", format!("{:?}", t.adam.learning_rate));
        kv("beta1", format!("{:?}", t.adam.beta1));
        kv("beta2", format!("{:?}", t.adam.beta2));
        kv("adam_epsilon", format!("{:?}", t.adam.epsilon));
        kv("augment", t.augment.to_string());
        kv("flip_probability", format!("{:?}", t.augment_config.flip_probability));
        kv("max_rotation_degrees", format!("{:?}", t.augment_config.max_rotation_degrees));
        kv("brightness", format!("{:?}", t.augment_config.brightness));
        kv("contrast", format!("{:?}", t.augment_config.contrast));
        kv("checkpoint_every", t.checkpoint_every.to_string());
        kv("patience", optional(&t.patience));
        kv("grad_clip", optional(&t.grad_clip));
        kv("gamma", format!("{:?}", self.gamma));
        kv("noise_kind", self.noise_kind.to_string());
        kv("sigmas", sigmas.join(","));
        kv("ablation_sigma", format!("{:?}", self.ablation_sigma));
        kv("per_class", self.per_class.to_string());
        kv("image_side", self.image_side.to_string());
        s
    }

    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("effective_config.txt"), self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("seed = 7\ngrad_clip = none\npatience = 3\nsigmas = 0, 0.1\nlearning_rate = 0.003\nvariant = detail_only")
            .unwrap();
        assert_eq!(c.seed(), 7);
        assert_eq!(c.train.grad_clip, None);
        assert_eq!(c.train.patience, Some(3));
        assert_eq!(c.sigmas, vec![0.0, 0.1]);
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("learning_rat", "0.1").is_err());
        assert!(c.set("epochs", "many").is_err());
        c.set("gamma", "1.5").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn every_written_key_is_accepted() {
        let text = RunConfig::default().to_text();
        for (k, v) in parse_key_values(&text).unwrap() {
            RunConfig::default().set(&k, &v).unwrap();
        }
    }
}
