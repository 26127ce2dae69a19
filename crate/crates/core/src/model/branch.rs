use rayon::prelude::*;

use super::encoder::{Dense, Encoder};
use super::full::onehot;
use super::{BatchGradients, LossWeights, ModelConfig, NetInput, Variant};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{global_avg_pool, global_avg_pool_backward, softmax_cross_entropy_grad, BnMode, Tensor};

/// Single-encoder network used by the ablation variants.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub head: Dense,
}

impl BranchModel {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let in_channels = match config.variant {
            Variant::StructuralOnly | Variant::RawPixel => 1,
            Variant::DetailOnly => 3,
            Variant::Full => {
                return Err(Error::Config("single-branch model cannot have variant full".into()))
            }
        };
        Ok(Self {
            config: config.clone(),
            encoder: Encoder::new(in_channels, &config.channel_widths),
            head: Dense::new(config.last_width(), config.num_classes),
        })
    }

    /// Parameter-name prefixes of the encoder and head.
    fn names(&self) -> (&'static str, &'static str) {
        match self.config.variant {
            Variant::StructuralOnly => ("structural", "aux"),
            Variant::DetailOnly => ("detail", "head"),
            _ => ("raw", "head"),
        }
    }

    pub(crate) fn initialize(&mut self, seed: u64) {
        let (enc, head) = self.names();
        self.encoder.initialize(seed, enc);
        self.head.initialize(seed, head);
    }

    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let (enc, head) = self.names();
        let mut out = self.encoder.named_parameters(enc);
        out.extend(self.head.named_parameters(head));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.parameters_mut();
        out.extend(self.head.parameters_mut());
        out
    }

    fn single_stream<'a>(&self, input: &'a NetInput) -> Result<&'a Tensor> {
        match input.streams.as_slice() {
            [x] => Ok(x),
            _ => shape_err("single-branch model needs one input stream"),
        }
    }

    pub fn logits(&self, input: &NetInput) -> Result<Tensor> {
        let map = self.encoder.forward_one(self.single_stream(input)?)?;
        self.head.forward(&global_avg_pool(&map)?)
    }

    /// Final feature map and the gradient of one logit with respect to it.
    pub fn logit_gradient(&self, input: &NetInput, class: usize) -> Result<(Tensor, Tensor)> {
        let map = self.encoder.forward_one(self.single_stream(input)?)?;
        let pooled = global_avg_pool(&map)?;
        let d_pooled = self.head.backward(&pooled, &onehot(class, self.config.num_classes)?)?.input;
        let grad = global_avg_pool_backward(map.shape(), &d_pooled)?;
        Ok((map, grad))
    }

    pub fn gradients(
        &self,
        inputs: &[NetInput],
        labels: &[usize],
        weights: LossWeights,
        mode: BnMode,
    ) -> Result<BatchGradients> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return shape_err(format!("{} inputs with {} labels", inputs.len(), labels.len()));
        }
        let batch = inputs.len();
        let xs = inputs
            .iter()
            .map(|x| self.single_stream(x).cloned())
            .collect::<Result<Vec<_>>>()?;
        let cache = self.encoder.forward(&xs, mode)?;
        let per_sample = cache
            .outputs
            .par_iter()
            .zip(labels)
            .map(|(map, &y)| {
                let pooled = global_avg_pool(map)?;
                let logits = self.head.forward(&pooled)?;
                let (loss, d_logits) = softmax_cross_entropy_grad(&logits, y, weights.primary, batch)?;
                let lg = self.head.backward(&pooled, &d_logits)?;
                let d_map = global_avg_pool_backward(map.shape(), &lg.input)?;
                Ok((logits, loss, lg.params, d_map))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut d_head = [Tensor::zeros(self.head.weight.shape()), Tensor::zeros(self.head.bias.shape())];
        let mut loss = 0.0;
        let mut logits = Vec::with_capacity(batch);
        let mut d_maps = Vec::with_capacity(batch);
        for (z, l, g, d) in per_sample {
            for (acc, gi) in d_head.iter_mut().zip(&g) {
                acc.add_assign(gi)?;
            }
            loss += l;
            logits.push(z);
            d_maps.push(d);
        }
        let (mut grads, _) = self.encoder.backward(&cache, d_maps, false)?;
        grads.extend(d_head);
        let primary_loss = loss / batch as f64;
        let is_structural = self.config.variant == Variant::StructuralOnly;
        Ok(BatchGradients {
            loss: weights.primary * primary_loss,
            primary_loss,
            structural_loss: is_structural.then_some(primary_loss),
            structural_logits: is_structural.then(|| logits.clone()),
            primary_logits: logits,
            grads,
            bn_stats: vec![cache.batch_stats()],
        })
    }
}
