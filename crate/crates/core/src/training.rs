//! Mini-batch training with Adam, per-epoch validation and best-checkpoint
//! restore.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::augment::{augment, AugmentConfig};
use crate::data::preprocess::preprocess;
use crate::data::seed::stream;
use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvaluationReport};
use crate::model::{save_checkpoint, ModelConfig, NetInput, Network, Variant};
use crate::numerics::{adam_step, cross_entropy, AdamConfig, AdamState, BnMode, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub augment: bool,
    pub augment_config: AugmentConfig,
    /// Save `epoch_<n>.ckpt` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Where epoch and best checkpoints go; `None` keeps them in memory.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop after this many epochs without a lower validation loss.
    pub patience: Option<usize>,
    /// Global gradient-norm cap.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            seed: 42,
            adam: AdamConfig::default(),
            augment: true,
            augment_config: AugmentConfig::default(),
            checkpoint_every: 0,
            checkpoint_dir: None,
            patience: None,
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// `None` for networks without a structural head.
    pub struct_val_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc,struct_val_acc,seconds\n");
        for r in &self.records {
            let structural = r.struct_val_acc.map_or_else(|| "NA".to_string(), |v| v.to_string());
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, structural, r.seconds
            )
            .unwrap();
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Epoch with the lowest validation loss (earliest on ties).
    pub fn best_epoch(&self) -> Option<usize> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val_loss <= r.val_loss => Some(b),
                _ => Some(r),
            })
            .map(|r| r.epoch)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub network: Network,
    pub history: TrainHistory,
    pub best_epoch: usize,
}

/// Validation loss (training objective in eval mode) and accuracies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationScores {
    pub loss: f64,
    pub accuracy: f64,
    pub structural_accuracy: Option<f64>,
}

fn prepare_sample(net: &Network, sample: &LabeledSample) -> Result<NetInput> {
    let side = net.config().input_side;
    if sample.image.shape() == [1, side, side] {
        net.prepare(&sample.image)
    } else {
        net.prepare(&preprocess(sample, side).image)
    }
}

fn check_split(name: &str, set: &[LabeledSample], k: usize) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidArgument(format!("empty {name} split")));
    }
    if let Some(s) = set.iter().find(|s| s.label >= k) {
        return Err(Error::InvalidArgument(format!(
            "{name} sample {} has label {} outside [0, {k})",
            s.source, s.label
        )));
    }
    Ok(())
}

fn stacked_probabilities(logits: &[Tensor]) -> Result<Tensor> {
    crate::evaluation::probability_matrix(logits)
}

fn hits(logits: &[Tensor], labels: &[usize]) -> usize {
    logits.iter().zip(labels).filter(|(z, y)| z.argmax() == **y).count()
}

/// Eval-mode scores of `net` on `set`.
pub fn validate(net: &Network, set: &[LabeledSample]) -> Result<ValidationScores> {
    let inputs = set.par_iter().map(|s| prepare_sample(net, s)).collect::<Result<Vec<_>>>()?;
    let preds = inputs.par_iter().map(|x| net.predict(x)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = set.iter().map(|s| s.label).collect();
    let primary: Vec<Tensor> = preds.iter().map(|p| p.primary.clone()).collect();
    let weights = net.loss_weights();
    let mut loss = weights.primary * cross_entropy(&stacked_probabilities(&primary)?, &labels)?;
    let n = set.len() as f64;
    let structural_accuracy = match preds.iter().map(|p| p.structural.clone()).collect::<Option<Vec<_>>>() {
        Some(structural) if net.has_structural_head() => {
            if weights.structural != 0.0 {
                loss += weights.structural * cross_entropy(&stacked_probabilities(&structural)?, &labels)?;
            }
            Some(hits(&structural, &labels) as f64 / n)
        }
        _ => None,
    };
    Ok(ValidationScores {
        loss,
        accuracy: hits(&primary, &labels) as f64 / n,
        structural_accuracy,
    })
}

/// Shuffled index batches of one epoch. A trailing batch of one sample is
/// merged into the previous batch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, "shuffle", "", epoch as u64));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads {
            g.scale(factor);
        }
    }
}

/// Trains `net` in place on `train_set`, validating on `val_set` after
/// every epoch, and returns the best-validation-loss network.
pub fn train(
    mut net: Network,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let k = net.config().num_classes;
    check_split("training", train_set, k)?;
    check_split("validation", val_set, k)?;
    let weights = net.loss_weights();
    let mut adam = AdamState::new(config.adam, net.named_parameters().into_iter().map(|(_, t)| t));
    let labels: Vec<usize> = train_set.iter().map(|s| s.label).collect();
    // without augmentation every epoch sees the same inputs
    let fixed_inputs = if config.augment {
        None
    } else {
        Some(train_set.par_iter().map(|s| prepare_sample(&net, s)).collect::<Result<Vec<_>>>()?)
    };
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, Network)> = None;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, batch) in epoch_batches(train_set.len(), config.batch_size, config.seed, epoch).iter().enumerate() {
            let inputs: Vec<NetInput> = match &fixed_inputs {
                Some(all) => batch.iter().map(|&i| all[i].clone()).collect(),
                None => batch
                    .par_iter()
                    .map(|&i| {
                        let s = &train_set[i];
                        let mut rng = stream(config.seed, "augment", &s.source, epoch as u64);
                        prepare_sample(&net, &augment(s, &config.augment_config, &mut rng))
                    })
                    .collect::<Result<_>>()?,
            };
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut grads = net.gradients(&inputs, &batch_labels, weights, BnMode::Train)?;
            if !grads.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += grads.loss * batch.len() as f64;
            correct += hits(&grads.primary_logits, &batch_labels);
            if let Some(max_norm) = config.grad_clip {
                clip_global_norm(&mut grads.grads, max_norm);
            }
            adam_step(&mut net.parameters_mut(), &grads.grads, &mut adam)?;
            net.update_running_stats(&grads);
        }
        let scores = validate(&net, val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_loss: scores.loss,
            val_acc: scores.accuracy,
            struct_val_acc: scores.structural_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3}",
            record.train_loss,
            record.train_acc,
            record.val_loss,
            record.val_acc
        );
        history.records.push(record);
        if let Some(dir) = &config.checkpoint_dir {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                save_checkpoint(&net, &dir.join(format!("epoch_{epoch}.ckpt")))?;
            }
        }
        if best.as_ref().is_none_or(|(loss, _, _)| scores.loss < *loss) {
            best = Some((scores.loss, epoch, net.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if config.patience.is_some_and(|p| epoch - best_epoch >= p) {
            log::info!("stopping early after epoch {epoch}; best was {best_epoch}");
            break;
        }
    }
    let (_, best_epoch, network) = best.expect("at least one epoch ran");
    if let Some(dir) = &config.checkpoint_dir {
        save_checkpoint(&network, &dir.join("best.ckpt"))?;
    }
    Ok(TrainOutcome {
        network,
        history,
        best_epoch,
    })
}

#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub outcome: TrainOutcome,
    pub report: EvaluationReport,
}

/// Trains one variant from scratch and evaluates it on `eval_set`.
pub fn run_ablation(
    variant: Variant,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    eval_set: &[LabeledSample],
    class_names: &[String],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<AblationOutcome> {
    let config = ModelConfig {
        variant,
        ..model_config.clone()
    };
    let net = Network::build(&config, train_config.seed)?;
    let outcome = train(net, train_set, val_set, train_config)?;
    let report = evaluate(&outcome.network, eval_set, class_names)?;
    Ok(AblationOutcome { outcome, report })
}
