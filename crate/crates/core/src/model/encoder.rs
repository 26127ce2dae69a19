use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::seed;
use crate::error::{shape_err, Result};
use crate::numerics::{
    batchnorm2d, batchnorm2d_backward, conv2d, conv2d_backward, linear, linear_backward, maxpool2d,
    maxpool2d_backward, relu, relu_backward, BatchNormCache, BnMode, LayerGradients, RunningStats,
    Tensor,
};

pub(crate) const KERNEL: usize = 3;

/// Uniform in `±sqrt(6 / fan_in)`.
fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Conv3×3 (pad 1) → batch norm → ReLU → 2×2 max pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running: RunningStats,
}

impl ConvBlock {
    fn new(c_in: usize, c_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[c_out, c_in, KERNEL, KERNEL]),
            bias: Tensor::zeros(&[c_out]),
            gamma: Tensor::filled(&[c_out], 1.0),
            beta: Tensor::zeros(&[c_out]),
            running: RunningStats::identity(c_out),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.bias.len()
    }

    /// Single-sample inference with running statistics.
    fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let conv = conv2d(x, &self.weight, &self.bias, 1, 1)?;
        let (mut bn, _) = batchnorm2d(
            std::slice::from_ref(&conv),
            &self.gamma,
            &self.beta,
            Some(&self.running),
            BnMode::Eval,
        )?;
        let (pooled, _) = maxpool2d(&relu(&bn.remove(0)))?;
        Ok(pooled)
    }
}

struct BlockCache {
    inputs: Vec<Tensor>,
    conv_out: Vec<Tensor>,
    bn: BatchNormCache,
    bn_out: Vec<Tensor>,
    pool_argmax: Vec<Vec<u32>>,
}

/// Activations of one batch through an encoder.
pub struct EncoderCache {
    blocks: Vec<BlockCache>,
    /// Final feature map of every sample.
    pub outputs: Vec<Tensor>,
}

impl EncoderCache {
    /// Batch statistics of every block, without the per-sample activations.
    pub fn batch_stats(&self) -> Vec<BatchNormCache> {
        self.blocks
            .iter()
            .map(|b| BatchNormCache {
                normalized: Vec::new(),
                ..b.bn.clone()
            })
            .collect()
    }
}

/// A stack of conv blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub blocks: Vec<ConvBlock>,
}

impl Encoder {
    /// Zero weights; see [`Encoder::initialize`].
    pub fn new(in_channels: usize, widths: &[usize]) -> Self {
        let mut c_in = in_channels;
        let blocks = widths
            .iter()
            .map(|&w| {
                let b = ConvBlock::new(c_in, w);
                c_in = w;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn in_channels(&self) -> usize {
        self.blocks[0].weight.dim(1)
    }

    /// Kaiming-uniform conv weights drawn from per-tensor streams.
    pub fn initialize(&mut self, seed: u64, prefix: &str) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let mut rng = seed::stream(seed, "init", &format!("{prefix}.block{i}.weight"), 0);
            let shape = b.weight.shape().to_vec();
            b.weight = kaiming_uniform(&shape, shape[1] * KERNEL * KERNEL, &mut rng);
        }
    }

    pub fn named_parameters(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                [
                    ("weight", &b.weight),
                    ("bias", &b.bias),
                    ("gamma", &b.gamma),
                    ("beta", &b.beta),
                ]
                .map(|(n, t)| (format!("{prefix}.block{i}.{n}"), t))
            })
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.weight, &mut b.bias, &mut b.gamma, &mut b.beta])
            .collect()
    }

    pub fn running_stats(&self) -> impl Iterator<Item = &RunningStats> {
        self.blocks.iter().map(|b| &b.running)
    }

    pub fn running_stats_mut(&mut self) -> impl Iterator<Item = &mut RunningStats> {
        self.blocks.iter_mut().map(|b| &mut b.running)
    }

    /// Inference on one sample with running statistics.
    pub fn forward_one(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.blocks[0].forward_eval(x)?;
        for b in &self.blocks[1..] {
            h = b.forward_eval(&h)?;
        }
        Ok(h)
    }

    /// Batch forward keeping everything the backward pass needs.
    pub fn forward(&self, inputs: &[Tensor], mode: BnMode) -> Result<EncoderCache> {
        if inputs.is_empty() {
            return shape_err("encoder forward on an empty batch");
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut current = inputs.to_vec();
        for b in &self.blocks {
            let conv_out = current
                .par_iter()
                .map(|x| conv2d(x, &b.weight, &b.bias, 1, 1))
                .collect::<Result<Vec<_>>>()?;
            let (bn_out, bn) = batchnorm2d(&conv_out, &b.gamma, &b.beta, Some(&b.running), mode)?;
            let pooled = bn_out
                .par_iter()
                .map(|y| maxpool2d(&relu(y)))
                .collect::<Result<Vec<_>>>()?;
            let (next, pool_argmax) = pooled.into_iter().unzip();
            blocks.push(BlockCache {
                inputs: std::mem::replace(&mut current, next),
                conv_out,
                bn,
                bn_out,
                pool_argmax,
            });
        }
        Ok(EncoderCache {
            blocks,
            outputs: current,
        })
    }

    /// Parameter gradients (in [`Encoder::named_parameters`] order) and,
    /// if requested, per-sample input gradients.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        grad_outputs: Vec<Tensor>,
        need_input_grad: bool,
    ) -> Result<(Vec<Tensor>, Option<Vec<Tensor>>)> {
        if grad_outputs.len() != cache.outputs.len() {
            return shape_err(format!(
                "encoder backward: {} upstream gradients for {} samples",
                grad_outputs.len(),
                cache.outputs.len()
            ));
        }
        let mut grads = vec![Vec::new(); self.blocks.len()];
        let mut upstream = grad_outputs;
        for (i, (b, c)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let d_bn_out = upstream
                .par_iter()
                .zip(&c.bn_out)
                .zip(&c.pool_argmax)
                .map(|((g, y), arg)| relu_backward(y, &maxpool2d_backward(y.shape(), arg, g)?))
                .collect::<Result<Vec<_>>>()?;
            let (bn_grads, d_conv_out) = batchnorm2d_backward(&c.bn, &b.gamma, &c.conv_out, &d_bn_out)?;
            let per_sample = c
                .inputs
                .par_iter()
                .zip(&d_conv_out)
                .map(|(x, g)| conv2d_backward(x, &b.weight, 1, 1, g))
                .collect::<Result<Vec<LayerGradients>>>()?;
            let mut d_weight = Tensor::zeros(b.weight.shape());
            let mut d_bias = Tensor::zeros(b.bias.shape());
            let mut d_inputs = Vec::with_capacity(per_sample.len());
            for lg in per_sample {
                d_weight.add_assign(&lg.params[0])?;
                d_bias.add_assign(&lg.params[1])?;
                d_inputs.push(lg.input);
            }
            let [d_gamma, d_beta]: [Tensor; 2] = bn_grads.try_into().expect("two batchnorm gradients");
            grads[i] = vec![d_weight, d_bias, d_gamma, d_beta];
            upstream = d_inputs;
        }
        let input_grads = need_input_grad.then_some(upstream);
        Ok((grads.into_iter().flatten().collect(), input_grads))
    }

    /// Folds the batch statistics of a train-mode forward pass into the
    /// running estimates.
    pub fn update_running_stats(&mut self, stats: &[BatchNormCache]) {
        for (b, s) in self.blocks.iter_mut().zip(stats) {
            if s.mode == BnMode::Train {
                b.running.update(s);
            }
        }
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn initialize(&mut self, seed: u64, name: &str) {
        let mut rng = seed::stream(seed, "init", &format!("{name}.weight"), 0);
        let shape = self.weight.shape().to_vec();
        self.weight = kaiming_uniform(&shape, shape[1], &mut rng);
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear(x, &self.weight, &self.bias)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<LayerGradients> {
        linear_backward(x, &self.weight, grad_out)
    }

    pub fn named_parameters(&self, name: &str) -> [(String, &Tensor); 2] {
        [
            (format!("{name}.weight"), &self.weight),
            (format!("{name}.bias"), &self.bias),
        ]
    }

    pub fn parameters_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
