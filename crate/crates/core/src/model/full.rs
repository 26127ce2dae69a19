use rayon::prelude::*;

use super::encoder::{Dense, Encoder};
use super::{concat_vectors, BatchGradients, LossWeights, ModelConfig, NetInput, StructuralHead, Variant};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, softmax_cross_entropy_grad, BnMode,
    Tensor,
};
use crate::wavelet::WaveletDecomposition;

/// All trainable state of the dual-stream model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Encoder of the approximation subband.
    pub structural: Encoder,
    /// Encoder of the three stacked detail subbands.
    pub detail: Encoder,
    pub fused_hidden: Dense,
    pub fused_out: Dense,
    /// Present only with [`StructuralHead::Auxiliary`].
    pub aux: Option<Dense>,
}

/// Intermediate values of a single-sample forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Final structural feature map, the Grad-CAM tap.
    pub structural_map: Tensor,
    pub detail_map: Tensor,
    /// Concatenated pooled descriptor `[structural, detail]`.
    pub fused_descriptor: Tensor,
    pub hidden: Tensor,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub fused_logits: Tensor,
    pub structural_logits: Tensor,
    pub cache: ForwardCache,
}

/// Per-sample head values and gradients, reduced later in sample order.
struct SampleHead {
    primary_logits: Tensor,
    structural_logits: Tensor,
    primary_loss: f64,
    structural_loss: f64,
    /// fused.hidden (w, b), fused.out (w, b), then aux (w, b) if present.
    grads: Vec<Tensor>,
    d_structural_map: Tensor,
    d_detail_map: Tensor,
}

impl ModelParams {
    /// Zero-initialized parameters with identity running statistics.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        if config.variant != Variant::Full {
            return Err(Error::Config(format!(
                "dual-stream parameters need variant full, got {}",
                config.variant
            )));
        }
        let last = config.last_width();
        Ok(Self {
            config: config.clone(),
            structural: Encoder::new(1, &config.channel_widths),
            detail: Encoder::new(3, &config.channel_widths),
            fused_hidden: Dense::new(2 * last, config.hidden_width),
            fused_out: Dense::new(config.hidden_width, config.num_classes),
            aux: (config.structural_head == StructuralHead::Auxiliary)
                .then(|| Dense::new(last, config.num_classes)),
        })
    }

    pub(crate) fn initialize(&mut self, seed: u64) {
        self.structural.initialize(seed, "structural");
        self.detail.initialize(seed, "detail");
        self.fused_hidden.initialize(seed, "fused.hidden");
        self.fused_out.initialize(seed, "fused.out");
        if let Some(aux) = &mut self.aux {
            aux.initialize(seed, "aux");
        }
    }

    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.structural.named_parameters("structural");
        out.extend(self.detail.named_parameters("detail"));
        out.extend(self.fused_hidden.named_parameters("fused.hidden"));
        out.extend(self.fused_out.named_parameters("fused.out"));
        if let Some(aux) = &self.aux {
            out.extend(aux.named_parameters("aux"));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.structural.parameters_mut();
        out.extend(self.detail.parameters_mut());
        out.extend(self.fused_hidden.parameters_mut());
        out.extend(self.fused_out.parameters_mut());
        if let Some(aux) = &mut self.aux {
            out.extend(aux.parameters_mut());
        }
        out
    }

    fn check_decomposition(&self, decomp: &WaveletDecomposition) -> Result<()> {
        let s = self.config.subband_side();
        decomp.approximation.ensure_shape(&[1, s, s], "approximation subband")?;
        for d in [&decomp.hl, &decomp.lh, &decomp.hh] {
            d.ensure_shape(&[1, s, s], "detail subband")?;
        }
        Ok(())
    }

    /// Fused head: returns (pre-activation hidden, logits).
    fn fused_head(&self, descriptor: &Tensor) -> Result<(Tensor, Tensor)> {
        let pre = self.fused_hidden.forward(descriptor)?;
        let logits = self.fused_out.forward(&relu(&pre))?;
        Ok((pre, logits))
    }

    /// Structural logits from the pooled structural descriptor alone.
    pub fn structural_logits_from_pooled(&self, pooled: &Tensor) -> Result<Tensor> {
        match &self.aux {
            Some(aux) => aux.forward(pooled),
            None => {
                let masked = concat_vectors(pooled, &Tensor::zeros(pooled.shape()));
                Ok(self.fused_head(&masked)?.1)
            }
        }
    }

    /// Both heads on one decomposition. Train mode normalizes with the
    /// statistics of this single sample.
    pub fn forward_full(&self, decomp: &WaveletDecomposition, mode: BnMode) -> Result<ForwardOutput> {
        self.check_decomposition(decomp)?;
        let details = decomp.stacked_details()?;
        let (structural_map, detail_map) = match mode {
            BnMode::Eval => (
                self.structural.forward_one(&decomp.approximation)?,
                self.detail.forward_one(&details)?,
            ),
            BnMode::Train => (
                self.structural.forward(std::slice::from_ref(&decomp.approximation), mode)?.outputs.remove(0),
                self.detail.forward(std::slice::from_ref(&details), mode)?.outputs.remove(0),
            ),
        };
        let f_s = global_avg_pool(&structural_map)?;
        let f_t = global_avg_pool(&detail_map)?;
        let fused_descriptor = concat_vectors(&f_s, &f_t);
        let (pre, fused_logits) = self.fused_head(&fused_descriptor)?;
        let structural_logits = self.structural_logits_from_pooled(&f_s)?;
        Ok(ForwardOutput {
            fused_logits,
            structural_logits,
            cache: ForwardCache {
                structural_map,
                detail_map,
                fused_descriptor,
                hidden: relu(&pre),
            },
        })
    }

    /// Structural pathway only; never reads the detail encoder.
    pub fn forward_structural(&self, decomp: &WaveletDecomposition) -> Result<Tensor> {
        let s = self.config.subband_side();
        decomp.approximation.ensure_shape(&[1, s, s], "approximation subband")?;
        self.structural_logits_from_approximation(&decomp.approximation)
    }

    pub(crate) fn structural_logits_from_approximation(&self, a1: &Tensor) -> Result<Tensor> {
        let map = self.structural.forward_one(a1)?;
        self.structural_logits_from_pooled(&global_avg_pool(&map)?)
    }

    /// Gradient of one structural logit with respect to the final
    /// structural feature map (eval mode), together with that map.
    pub fn structural_logit_gradient(&self, a1: &Tensor, class: usize) -> Result<(Tensor, Tensor)> {
        let map = self.structural.forward_one(a1)?;
        let pooled = global_avg_pool(&map)?;
        let onehot = onehot(class, self.config.num_classes)?;
        let d_pooled = match &self.aux {
            Some(aux) => aux.backward(&pooled, &onehot)?.input,
            None => {
                let last = pooled.len();
                let masked = concat_vectors(&pooled, &Tensor::zeros(pooled.shape()));
                let (_, d_desc) = self.fused_head_backward(&masked, &onehot)?;
                Tensor::vector(d_desc.data()[..last].to_vec())
            }
        };
        let grad = global_avg_pool_backward(map.shape(), &d_pooled)?;
        Ok((map, grad))
    }

    /// Gradients of the fused head for upstream `d_logits`: returns
    /// `[d_hidden_w, d_hidden_b, d_out_w, d_out_b]` and the descriptor
    /// gradient.
    fn fused_head_backward(&self, descriptor: &Tensor, d_logits: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let pre = self.fused_hidden.forward(descriptor)?;
        let hidden = relu(&pre);
        let out = self.fused_out.backward(&hidden, d_logits)?;
        let d_pre = relu_backward(&pre, &out.input)?;
        let hid = self.fused_hidden.backward(descriptor, &d_pre)?;
        let mut grads = hid.params;
        grads.extend(out.params);
        Ok((grads, hid.input))
    }

    fn sample_head(
        &self,
        structural_map: &Tensor,
        detail_map: &Tensor,
        label: usize,
        weights: LossWeights,
        batch: usize,
    ) -> Result<SampleHead> {
        let last = self.config.last_width();
        let f_s = global_avg_pool(structural_map)?;
        let f_t = global_avg_pool(detail_map)?;
        let descriptor = concat_vectors(&f_s, &f_t);
        let (_, primary_logits) = self.fused_head(&descriptor)?;
        let (primary_loss, d_logits) = softmax_cross_entropy_grad(&primary_logits, label, weights.primary, batch)?;
        let (mut grads, d_desc) = self.fused_head_backward(&descriptor, &d_logits)?;
        let mut d_fs = Tensor::vector(d_desc.data()[..last].to_vec());
        let d_ft = Tensor::vector(d_desc.data()[last..].to_vec());

        let structural_logits = self.structural_logits_from_pooled(&f_s)?;
        let (structural_loss, d_struct) =
            softmax_cross_entropy_grad(&structural_logits, label, weights.structural, batch)?;
        match &self.aux {
            Some(aux) => {
                let lg = aux.backward(&f_s, &d_struct)?;
                d_fs.add_assign(&lg.input)?;
                grads.extend(lg.params);
            }
            None => {
                let masked = concat_vectors(&f_s, &Tensor::zeros(f_s.shape()));
                let (masked_grads, d_masked) = self.fused_head_backward(&masked, &d_struct)?;
                for (g, m) in grads.iter_mut().zip(&masked_grads) {
                    g.add_assign(m)?;
                }
                d_fs.add_assign(&Tensor::vector(d_masked.data()[..last].to_vec()))?;
            }
        }
        Ok(SampleHead {
            primary_logits,
            structural_logits,
            primary_loss,
            structural_loss,
            grads,
            d_structural_map: global_avg_pool_backward(structural_map.shape(), &d_fs)?,
            d_detail_map: global_avg_pool_backward(detail_map.shape(), &d_ft)?,
        })
    }

    /// Weighted training loss over a batch and its gradient with respect to
    /// every parameter, in [`ModelParams::named_parameters`] order. `modes`
    /// gives the batch-norm mode of the structural and detail encoders.
    pub fn gradients(
        &self,
        inputs: &[NetInput],
        labels: &[usize],
        weights: LossWeights,
        modes: [BnMode; 2],
    ) -> Result<BatchGradients> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return shape_err(format!("{} inputs with {} labels", inputs.len(), labels.len()));
        }
        let batch = inputs.len();
        let (structural_in, detail_in): (Vec<Tensor>, Vec<Tensor>) = inputs
            .iter()
            .map(|x| match x.streams.as_slice() {
                [a, d] => Ok((a.clone(), d.clone())),
                _ => shape_err("dual-stream model needs two input streams"),
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let s_cache = self.structural.forward(&structural_in, modes[0])?;
        let t_cache = self.detail.forward(&detail_in, modes[1])?;
        let heads = s_cache
            .outputs
            .par_iter()
            .zip(&t_cache.outputs)
            .zip(labels)
            .map(|((fs, ft), &y)| self.sample_head(fs, ft, y, weights, batch))
            .collect::<Result<Vec<_>>>()?;

        let mut head_grads: Option<Vec<Tensor>> = None;
        let mut primary_loss = 0.0;
        let mut structural_loss = 0.0;
        let mut primary_logits = Vec::with_capacity(batch);
        let mut structural_logits = Vec::with_capacity(batch);
        let mut d_s = Vec::with_capacity(batch);
        let mut d_t = Vec::with_capacity(batch);
        for h in heads {
            match &mut head_grads {
                None => head_grads = Some(h.grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&h.grads) {
                        a.add_assign(g)?;
                    }
                }
            }
            primary_loss += h.primary_loss;
            structural_loss += h.structural_loss;
            primary_logits.push(h.primary_logits);
            structural_logits.push(h.structural_logits);
            d_s.push(h.d_structural_map);
            d_t.push(h.d_detail_map);
        }
        let (mut grads, _) = self.structural.backward(&s_cache, d_s, false)?;
        grads.extend(self.detail.backward(&t_cache, d_t, false)?.0);
        grads.extend(head_grads.expect("non-empty batch"));
        let primary_loss = primary_loss / batch as f64;
        let structural_loss = structural_loss / batch as f64;
        Ok(BatchGradients {
            loss: weights.primary * primary_loss + weights.structural * structural_loss,
            primary_loss,
            structural_loss: Some(structural_loss),
            primary_logits,
            structural_logits: Some(structural_logits),
            grads,
            bn_stats: vec![s_cache.batch_stats(), t_cache.batch_stats()],
        })
    }
}

pub(crate) fn onehot(class: usize, k: usize) -> Result<Tensor> {
    if class >= k {
        return Err(Error::InvalidArgument(format!("class {class} outside [0, {k})")));
    }
    Ok(Tensor::from_fn(&[k], |i| if i == class { 1.0 } else { 0.0 }))
}
