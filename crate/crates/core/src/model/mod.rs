//! Dual-stream wavelet classifier and its single-branch ablations.

mod branch;
pub mod checkpoint;
mod config;
mod encoder;
mod full;

pub use branch::BranchModel;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{parse_key_values, ModelConfig, StructuralHead, Variant};
pub use encoder::{ConvBlock, Dense, Encoder, EncoderCache};
pub use full::{ForwardCache, ForwardOutput, ModelParams};

pub(crate) use config::CONFIG_KEYS;

use crate::data::preprocess::resize;
use crate::error::{Error, Result};
use crate::numerics::{BatchNormCache, BnMode, Tensor};
use crate::wavelet::{daubechies_filters, dwt2_level1, WaveletDecomposition};

/// Encoder inputs of one sample, one tensor per stream.
#[derive(Clone, Debug, PartialEq)]
pub struct NetInput {
    pub streams: Vec<Tensor>,
}

impl NetInput {
    /// `[approximation, stacked details]` for the dual-stream model.
    pub fn from_decomposition(decomp: &WaveletDecomposition) -> Result<Self> {
        Ok(Self {
            streams: vec![decomp.approximation.clone(), decomp.stacked_details()?],
        })
    }
}

/// Multipliers of the primary and structural cross-entropy terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub primary: f64,
    pub structural: f64,
}

/// Loss, logits and parameter gradients of one batch.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    /// `primary * primary_loss + structural * structural_loss`.
    pub loss: f64,
    pub primary_loss: f64,
    pub structural_loss: Option<f64>,
    pub primary_logits: Vec<Tensor>,
    pub structural_logits: Option<Vec<Tensor>>,
    /// Same order as `named_parameters`.
    pub grads: Vec<Tensor>,
    /// Per encoder, per block batch statistics.
    pub bn_stats: Vec<Vec<BatchNormCache>>,
}

/// Eval-mode outputs of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Fused logits, or the single head of a branch model.
    pub primary: Tensor,
    /// Structural-only logits where the network has them.
    pub structural: Option<Tensor>,
}

/// Any trainable network: the dual-stream model or an ablation branch.
#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Full(ModelParams),
    Branch(BranchModel),
}

/// Kaiming-initialized dual-stream model.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(config)?;
    p.initialize(seed);
    Ok(p)
}

/// Closed-form trainable parameter count.
pub fn parameter_count(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let encoder = |c_in: usize| {
        let mut c_prev = c_in;
        config
            .channel_widths
            .iter()
            .map(|&c| {
                let n = c_prev * c * 9 + c + 2 * c;
                c_prev = c;
                n
            })
            .sum::<usize>()
    };
    let (k, last, hidden) = (config.num_classes, config.last_width(), config.hidden_width);
    let linear = |n: usize, m: usize| n * m + m;
    Ok(match config.variant {
        Variant::Full => {
            let aux = match config.structural_head {
                StructuralHead::Auxiliary => linear(last, k),
                StructuralHead::MaskedFused => 0,
            };
            encoder(1) + encoder(3) + linear(2 * last, hidden) + linear(hidden, k) + aux
        }
        Variant::StructuralOnly | Variant::RawPixel => encoder(1) + linear(last, k),
        Variant::DetailOnly => encoder(3) + linear(last, k),
    })
}

pub(crate) fn concat_vectors(a: &Tensor, b: &Tensor) -> Tensor {
    let mut v = a.data().to_vec();
    v.extend_from_slice(b.data());
    Tensor::vector(v)
}

impl Network {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut n = Self::zeros(config)?;
        match &mut n {
            Network::Full(p) => p.initialize(seed),
            Network::Branch(b) => b.initialize(seed),
        }
        Ok(n)
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        Ok(match config.variant {
            Variant::Full => Network::Full(ModelParams::zeros(config)?),
            _ => Network::Branch(BranchModel::zeros(config)?),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Network::Full(p) => &p.config,
            Network::Branch(b) => &b.config,
        }
    }

    pub fn as_full(&self) -> Result<&ModelParams> {
        match self {
            Network::Full(p) => Ok(p),
            Network::Branch(b) => Err(Error::InvalidArgument(format!(
                "operation needs the full dual-stream model, checkpoint is {}",
                b.config.variant
            ))),
        }
    }

    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        match self {
            Network::Full(p) => p.named_parameters(),
            Network::Branch(b) => b.named_parameters(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Network::Full(p) => p.parameters_mut(),
            Network::Branch(b) => b.parameters_mut(),
        }
    }

    /// Number of allocated trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn encoders(&self) -> Vec<&Encoder> {
        match self {
            Network::Full(p) => vec![&p.structural, &p.detail],
            Network::Branch(b) => vec![&b.encoder],
        }
    }

    pub fn encoders_mut(&mut self) -> Vec<&mut Encoder> {
        match self {
            Network::Full(p) => vec![&mut p.structural, &mut p.detail],
            Network::Branch(b) => vec![&mut b.encoder],
        }
    }

    /// Whether the network produces structural-only logits.
    pub fn has_structural_head(&self) -> bool {
        matches!(self.config().variant, Variant::Full | Variant::StructuralOnly)
    }

    /// Loss weights used for training this network.
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            primary: 1.0,
            structural: match self {
                Network::Full(p) => p.config.aux_weight,
                Network::Branch(_) => 0.0,
            },
        }
    }

    /// Turns a preprocessed `[1,S,S]` image into encoder inputs.
    pub fn prepare(&self, image: &Tensor) -> Result<NetInput> {
        let config = self.config();
        let side = config.input_side;
        image.ensure_shape(&[1, side, side], "network input image")?;
        if config.variant == Variant::RawPixel {
            let half = config.subband_side();
            return Ok(NetInput {
                streams: vec![resize(image, half, half)],
            });
        }
        let decomp = dwt2_level1(image, &daubechies_filters(config.wavelet_order)?)?;
        let streams = match config.variant {
            Variant::StructuralOnly => vec![decomp.approximation],
            Variant::DetailOnly => vec![decomp.stacked_details()?],
            _ => NetInput::from_decomposition(&decomp)?.streams,
        };
        Ok(NetInput { streams })
    }

    pub fn predict(&self, input: &NetInput) -> Result<Prediction> {
        match self {
            Network::Full(p) => {
                let [a1, details] = input.streams.as_slice() else {
                    return Err(Error::Shape("dual-stream model needs two input streams".into()));
                };
                let decomp = WaveletDecomposition {
                    approximation: a1.clone(),
                    hl: Tensor::new(vec![1, a1.dim(1), a1.dim(2)], details.plane(0).to_vec())?,
                    lh: Tensor::new(vec![1, a1.dim(1), a1.dim(2)], details.plane(1).to_vec())?,
                    hh: Tensor::new(vec![1, a1.dim(1), a1.dim(2)], details.plane(2).to_vec())?,
                };
                let out = p.forward_full(&decomp, BnMode::Eval)?;
                Ok(Prediction {
                    primary: out.fused_logits,
                    structural: Some(out.structural_logits),
                })
            }
            Network::Branch(b) => {
                let z = b.logits(input)?;
                let structural = (b.config.variant == Variant::StructuralOnly).then(|| z.clone());
                Ok(Prediction { primary: z, structural })
            }
        }
    }

    /// Structural-only logits; never evaluates the detail stream.
    pub fn predict_structural(&self, input: &NetInput) -> Result<Tensor> {
        match self {
            Network::Full(p) => p.structural_logits_from_approximation(&input.streams[0]),
            Network::Branch(b) if b.config.variant == Variant::StructuralOnly => b.logits(input),
            Network::Branch(b) => Err(Error::InvalidArgument(format!(
                "{} model has no structural pathway",
                b.config.variant
            ))),
        }
    }

    pub fn gradients(
        &self,
        inputs: &[NetInput],
        labels: &[usize],
        weights: LossWeights,
        mode: BnMode,
    ) -> Result<BatchGradients> {
        match self {
            Network::Full(p) => p.gradients(inputs, labels, weights, [mode; 2]),
            Network::Branch(b) => b.gradients(inputs, labels, weights, mode),
        }
    }

    pub fn update_running_stats(&mut self, grads: &BatchGradients) {
        for (enc, stats) in self.encoders_mut().into_iter().zip(&grads.bn_stats) {
            enc.update_running_stats(stats);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::softmax;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            num_classes: 3,
            channel_widths: vec![2, 3],
            hidden_width: 5,
            wavelet_order: 2,
            input_side: 16,
            aux_weight: 0.5,
            structural_head: StructuralHead::Auxiliary,
            variant,
        }
    }

    fn image(seed: usize) -> Tensor {
        Tensor::from_fn(&[1, 16, 16], |i| ((i * 7919 + seed * 104729) % 1000) as f64 / 1000.0)
    }

    #[test]
    fn default_parameter_count() {
        let c = ModelConfig::default();
        assert_eq!(parameter_count(&c).unwrap(), 388_800 + 389_376 + 534_537 + 2_313);
        assert_eq!(parameter_count(&c).unwrap(), 1_315_026);
        let net = Network::zeros(&c).unwrap();
        assert_eq!(net.parameter_count(), 1_315_026);
    }

    #[test]
    fn unit_width_parameter_count_by_hand() {
        let c = ModelConfig {
            channel_widths: vec![1, 1, 1, 1],
            hidden_width: 1,
            ..ModelConfig::default()
        };
        // structural: (9+1+2) * 4; detail: (27+1+2) + (9+1+2) * 3
        // fused: (2*1 + 1) + (1*9 + 9); aux: 9 + 9
        let by_hand = 48 + 66 + 3 + 18 + 18;
        assert_eq!(parameter_count(&c).unwrap(), by_hand);
        assert_eq!(Network::zeros(&c).unwrap().parameter_count(), by_hand);
    }

    #[test]
    fn every_variant_count_matches_enumeration() {
        for variant in [Variant::Full, Variant::StructuralOnly, Variant::DetailOnly, Variant::RawPixel] {
            for head in [StructuralHead::Auxiliary, StructuralHead::MaskedFused] {
                let c = ModelConfig {
                    structural_head: head,
                    ..tiny(variant)
                };
                assert_eq!(parameter_count(&c).unwrap(), Network::zeros(&c).unwrap().parameter_count());
            }
        }
    }

    #[test]
    fn build_is_seeded() {
        let c = tiny(Variant::Full);
        assert_eq!(build_model(&c, 4).unwrap(), build_model(&c, 4).unwrap());
        assert_ne!(build_model(&c, 4).unwrap(), build_model(&c, 5).unwrap());
        assert!(build_model(&tiny(Variant::DetailOnly), 4).is_err());
    }

    #[test]
    fn structural_outputs_ignore_detail_stream() {
        let c = tiny(Variant::Full);
        let p = build_model(&c, 1).unwrap();
        let filters = daubechies_filters(2).unwrap();
        let d = dwt2_level1(&image(3), &filters).unwrap();
        let out = p.forward_full(&d, BnMode::Eval).unwrap();
        assert_eq!(p.forward_structural(&d).unwrap(), out.structural_logits);
        assert!((softmax(&out.fused_logits).sum() - 1.0).abs() < 1e-12);

        let mut zeroed = d.clone();
        for t in [&mut zeroed.hl, &mut zeroed.lh, &mut zeroed.hh] {
            t.fill(0.0);
        }
        let z = p.forward_full(&zeroed, BnMode::Eval).unwrap();
        assert_eq!(z.structural_logits, out.structural_logits);
        assert_eq!(z.cache.structural_map, out.cache.structural_map);

        let mut poisoned = p.clone();
        for t in poisoned.detail.parameters_mut() {
            t.fill(f64::NAN);
        }
        assert_eq!(poisoned.forward_structural(&d).unwrap(), out.structural_logits);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for variant in [Variant::Full, Variant::DetailOnly] {
            let mut net = Network::build(&tiny(variant), 2).unwrap();
            net.encoders_mut()[0].blocks[1].running.var[0] = 0.123;
            let path = dir.path().join("m.ckpt");
            save_checkpoint(&net, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back, net);
            assert_eq!(checkpoint::to_bytes(&back), std::fs::read(&path).unwrap());
        }
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let net = Network::build(&tiny(Variant::Full), 2).unwrap();
        let bytes = checkpoint::to_bytes(&net);
        let p = std::path::Path::new("x");
        assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(checkpoint::from_bytes(&extra, p).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(checkpoint::from_bytes(&magic, p).is_err());
        let n = bytes.len();
        let mut sum = bytes;
        sum[n - 8] ^= 1;
        assert!(checkpoint::from_bytes(&sum, p).is_err());
    }

    #[test]
    fn eval_batch_is_permutation_equivariant() {
        let net = Network::build(&tiny(Variant::Full), 3).unwrap();
        let inputs: Vec<NetInput> = (0..4).map(|i| net.prepare(&image(i)).unwrap()).collect();
        let labels = [0, 1, 2, 0];
        let w = net.loss_weights();
        let a = net.gradients(&inputs, &labels, w, BnMode::Eval).unwrap();
        let perm = [2, 0, 3, 1];
        let pin: Vec<NetInput> = perm.iter().map(|&i| inputs[i].clone()).collect();
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let b = net.gradients(&pin, &pl, w, BnMode::Eval).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(b.primary_logits[j], a.primary_logits[i]);
            assert_eq!(net.predict(&inputs[i]).unwrap().primary, a.primary_logits[i]);
        }
    }

    #[test]
    fn structural_only_term_leaves_detail_gradients_zero() {
        let net = Network::build(&tiny(Variant::Full), 3).unwrap();
        let inputs: Vec<NetInput> = (0..3).map(|i| net.prepare(&image(i)).unwrap()).collect();
        let w = LossWeights {
            primary: 0.0,
            structural: 1.0,
        };
        let g = net.gradients(&inputs, &[0, 1, 2], w, BnMode::Train).unwrap();
        for ((name, _), grad) in net.named_parameters().iter().zip(&g.grads) {
            if name.starts_with("detail.") {
                assert!(grad.data().iter().all(|v| *v == 0.0), "{name}");
            }
        }
        assert!(g.grads[0].data().iter().any(|v| *v != 0.0));
    }
}
