//! Forward and backward passes for the fixed layer vocabulary used by the
//! encoders: 2-D convolution, batch normalization, ReLU, 2x2 max pooling,
//! global average pooling and affine maps.
//!
//! Single-sample functions take `[C,H,W]` tensors. Batch normalization is the
//! only layer that couples samples, so it takes a slice of them.

use super::Tensor;
use crate::error::{shape_err, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Gradients of a layer with respect to its parameters (in declaration
/// order) and its input.
#[derive(Clone, Debug)]
pub struct LayerGradients {
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeometry {
    fn new(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        let (c_in, h, w) = input.chw()?;
        let &[c_out, wc_in, k, k2] = weight.shape() else {
            return shape_err(format!("conv weight must be rank 4, got {:?}", weight.shape()));
        };
        if wc_in != c_in {
            return shape_err(format!("conv weight expects {wc_in} input channels, input has {c_in}"));
        }
        if k != k2 || k % 2 == 0 {
            return shape_err(format!("conv kernel must be square and odd, got {k}x{k2}"));
        }
        if stride == 0 {
            return shape_err("conv stride must be >= 1");
        }
        let out_dim = |n: usize| -> Result<usize> {
            let span = n + 2 * padding;
            if span < k || (span - k) % stride != 0 {
                return shape_err(format!(
                    "conv output size ({n} + 2*{padding} - {k})/{stride} + 1 is not a positive integer"
                ));
            }
            Ok((span - k) / stride + 1)
        };
        Ok(Self {
            c_in,
            c_out,
            h,
            w,
            k,
            stride,
            padding,
            h_out: out_dim(h)?,
            w_out: out_dim(w)?,
        })
    }

    /// Output index range whose sampled input coordinate for kernel tap
    /// `tap` falls inside `[0, n)`.
    fn valid_range(&self, tap: usize, n: usize, n_out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = tap as isize - self.padding as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= n-1
        let last = n as isize - 1 - off;
        if last < 0 {
            return (0, 0);
        }
        let hi = (last / s + 1).min(n_out as isize);
        (lo as usize, hi.max(lo) as usize)
    }

    fn input_coord(&self, o: usize, tap: usize) -> usize {
        o * self.stride + tap - self.padding
    }
}

/// Cross-correlation of `input [C_in,H,W]` with `weight [C_out,C_in,k,k]`
/// plus a per-output-channel bias.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input, weight, stride, padding)?;
    bias.ensure_shape(&[g.c_out], "conv bias")?;
    let plane_out = g.h_out * g.w_out;
    let mut out = vec![0.0; g.c_out * plane_out];
    let wdata = weight.data();
    for o in 0..g.c_out {
        let dst = &mut out[o * plane_out..(o + 1) * plane_out];
        dst.fill(bias.data()[o]);
        for i in 0..g.c_in {
            let src = input.plane(i);
            for ky in 0..g.k {
                let (y_lo, y_hi) = g.valid_range(ky, g.h, g.h_out);
                for kx in 0..g.k {
                    let wv = wdata[((o * g.c_in + i) * g.k + ky) * g.k + kx];
                    let (x_lo, x_hi) = g.valid_range(kx, g.w, g.w_out);
                    for oy in y_lo..y_hi {
                        let row = &src[g.input_coord(oy, ky) * g.w..];
                        let out_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                        if g.stride == 1 {
                            let start = g.input_coord(x_lo, kx);
                            let row = &row[start..start + (x_hi - x_lo)];
                            for (d, s) in out_row[x_lo..x_hi].iter_mut().zip(row) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in x_lo..x_hi {
                                out_row[ox] += wv * row[g.input_coord(ox, kx)];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.c_out, g.h_out, g.w_out], out)
}

/// Gradients of [`conv2d`]: `params = [d_weight, d_bias]`.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<LayerGradients> {
    let g = ConvGeometry::new(input, weight, stride, padding)?;
    grad_out.ensure_shape(&[g.c_out, g.h_out, g.w_out], "conv upstream gradient")?;
    let plane_out = g.h_out * g.w_out;
    let mut d_weight = vec![0.0; weight.len()];
    let mut d_input = vec![0.0; input.len()];
    let d_bias: Vec<f64> = (0..g.c_out).map(|o| grad_out.plane(o).iter().sum()).collect();
    let wdata = weight.data();
    let plane_in = g.h * g.w;
    for o in 0..g.c_out {
        let up = &grad_out.data()[o * plane_out..(o + 1) * plane_out];
        for i in 0..g.c_in {
            let src = input.plane(i);
            let dsrc = &mut d_input[i * plane_in..(i + 1) * plane_in];
            for ky in 0..g.k {
                let (y_lo, y_hi) = g.valid_range(ky, g.h, g.h_out);
                for kx in 0..g.k {
                    let widx = ((o * g.c_in + i) * g.k + ky) * g.k + kx;
                    let wv = wdata[widx];
                    let (x_lo, x_hi) = g.valid_range(kx, g.w, g.w_out);
                    let mut acc = 0.0;
                    for oy in y_lo..y_hi {
                        let base = g.input_coord(oy, ky) * g.w;
                        let up_row = &up[oy * g.w_out..(oy + 1) * g.w_out];
                        if g.stride == 1 {
                            let start = base + g.input_coord(x_lo, kx);
                            let n = x_hi - x_lo;
                            let ups = &up_row[x_lo..x_hi];
                            for (u, s) in ups.iter().zip(&src[start..start + n]) {
                                acc += u * s;
                            }
                            for (u, d) in ups.iter().zip(&mut dsrc[start..start + n]) {
                                *d += wv * u;
                            }
                        } else {
                            for ox in x_lo..x_hi {
                                let ix = base + g.input_coord(ox, kx);
                                acc += up_row[ox] * src[ix];
                                dsrc[ix] += wv * up_row[ox];
                            }
                        }
                    }
                    d_weight[widx] += acc;
                }
            }
        }
    }
    Ok(LayerGradients {
        params: vec![
            Tensor::new(weight.shape().to_vec(), d_weight)?,
            Tensor::new(vec![g.c_out], d_bias)?,
        ],
        input: Tensor::new(input.shape().to_vec(), d_input)?,
    })
}

/// Exponential moving estimates of per-channel mean and (unbiased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// Mean 0, variance 1 for every channel.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// Folds one training batch's statistics into the running estimates.
    pub fn update(&mut self, batch: &BatchNormCache) {
        let n = batch.count as f64;
        let unbias = if batch.count > 1 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - BN_MOMENTUM) * self.mean[c] + BN_MOMENTUM * batch.mean[c];
            self.var[c] = (1.0 - BN_MOMENTUM) * self.var[c] + BN_MOMENTUM * batch.var[c] * unbias;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Values retained by a batch-norm forward pass for its backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub mode: BnMode,
    /// Normalized activations, one per sample (train mode only).
    pub normalized: Vec<Tensor>,
    pub inv_std: Vec<f64>,
    /// Batch mean and biased variance (train mode); running values in eval.
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of values reduced per channel.
    pub count: usize,
}

/// Per-channel batch normalization over a batch of `[C,H,W]` samples.
///
/// Train mode normalizes with the statistics of this batch across samples
/// and spatial positions; eval mode uses `running`, which must be present.
pub fn batchnorm2d(
    batch: &[Tensor],
    gamma: &Tensor,
    beta: &Tensor,
    running: Option<&RunningStats>,
    mode: BnMode,
) -> Result<(Vec<Tensor>, BatchNormCache)> {
    let Some(first) = batch.first() else {
        return shape_err("batchnorm on an empty batch");
    };
    let (c, h, w) = first.chw()?;
    gamma.ensure_shape(&[c], "batchnorm gamma")?;
    beta.ensure_shape(&[c], "batchnorm beta")?;
    for x in batch {
        x.ensure_shape(&[c, h, w], "batchnorm sample")?;
    }
    let hw = h * w;
    let count = batch.len() * hw;

    let (mean, var) = match mode {
        BnMode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let s: f64 = batch.iter().map(|x| x.plane(ch).iter().sum::<f64>()).sum();
                let m = s / count as f64;
                let v: f64 = batch
                    .iter()
                    .map(|x| x.plane(ch).iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                    .sum();
                mean[ch] = m;
                var[ch] = v / count as f64;
            }
            (mean, var)
        }
        BnMode::Eval => {
            let Some(stats) = running else {
                return Err(crate::Error::InvalidArgument(
                    "batchnorm eval mode requires running statistics".into(),
                ));
            };
            if stats.mean.len() != c || stats.var.len() != c {
                return shape_err("running statistics channel count mismatch");
            }
            (stats.mean.clone(), stats.var.clone())
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

    let mut normalized = Vec::with_capacity(batch.len());
    let mut outputs = Vec::with_capacity(batch.len());
    for x in batch {
        let mut xhat = x.clone();
        let mut y = x.clone();
        for ch in 0..c {
            let (m, s) = (mean[ch], inv_std[ch]);
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            for (n, o) in xhat.plane_mut(ch).iter_mut().zip(y.plane_mut(ch)) {
                *n = (*n - m) * s;
                *o = g * *n + b;
            }
        }
        if mode == BnMode::Train {
            normalized.push(xhat);
        }
        outputs.push(y);
    }
    Ok((
        outputs,
        BatchNormCache {
            mode,
            normalized,
            inv_std,
            mean,
            var,
            count,
        },
    ))
}

/// Backward pass of [`batchnorm2d`]. Returns `[d_gamma, d_beta]` and the
/// per-sample input gradients.
///
/// In eval mode `inputs` supplies the original activations; in train mode it
/// is unused because the cache holds the normalized values.
pub fn batchnorm2d_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    inputs: &[Tensor],
    grad_out: &[Tensor],
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let c = gamma.len();
    let Some(first) = grad_out.first() else {
        return shape_err("batchnorm backward on an empty batch");
    };
    let shape = first.shape().to_vec();
    let normalized: Vec<Tensor> = match cache.mode {
        BnMode::Train => cache.normalized.clone(),
        BnMode::Eval => inputs
            .iter()
            .map(|x| {
                let mut t = x.clone();
                for ch in 0..c {
                    let (m, s) = (cache.mean[ch], cache.inv_std[ch]);
                    t.plane_mut(ch).iter_mut().for_each(|v| *v = (*v - m) * s);
                }
                t
            })
            .collect(),
    };
    if normalized.len() != grad_out.len() {
        return shape_err(format!(
            "batchnorm backward: cache has {} samples, upstream {}",
            normalized.len(),
            grad_out.len()
        ));
    }
    for g in grad_out {
        g.ensure_shape(&shape, "batchnorm upstream gradient")?;
    }

    let mut d_gamma = vec![0.0; c];
    let mut d_beta = vec![0.0; c];
    for (g, xhat) in grad_out.iter().zip(&normalized) {
        for ch in 0..c {
            for (gv, xv) in g.plane(ch).iter().zip(xhat.plane(ch)) {
                d_gamma[ch] += gv * xv;
                d_beta[ch] += gv;
            }
        }
    }

    let n = cache.count as f64;
    let mut d_inputs = Vec::with_capacity(grad_out.len());
    for (g, xhat) in grad_out.iter().zip(&normalized) {
        let mut dx = g.clone();
        for ch in 0..c {
            let scale = gamma.data()[ch] * cache.inv_std[ch];
            match cache.mode {
                BnMode::Train => {
                    let (sg, sgx) = (d_beta[ch], d_gamma[ch]);
                    for (d, x) in dx.plane_mut(ch).iter_mut().zip(xhat.plane(ch)) {
                        *d = scale / n * (n * *d - sg - x * sgx);
                    }
                }
                BnMode::Eval => dx.plane_mut(ch).iter_mut().for_each(|d| *d *= scale),
            }
        }
        d_inputs.push(dx);
    }
    Ok((
        vec![Tensor::new(vec![c], d_gamma)?, Tensor::new(vec![c], d_beta)?],
        d_inputs,
    ))
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes upstream gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if !input.same_shape(grad_out) {
        return shape_err(format!(
            "relu backward: input {:?} vs upstream {:?}",
            input.shape(),
            grad_out.shape()
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Non-overlapping 2x2 max pooling. Also returns, for each output element,
/// the flat input index that won (first maximum on ties).
pub fn maxpool2d(input: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let (c, h, w) = input.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return shape_err(format!("maxpool needs even spatial dims, got {h}x{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    let x = input.data();
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let base = ch * h * w + 2 * oy * w + 2 * ox;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok((Tensor::new(vec![c, ho, wo], out)?, argmax))
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return shape_err(format!(
            "maxpool backward: {} switches vs upstream of {}",
            argmax.len(),
            grad_out.len()
        ));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        let Some(slot) = d.get_mut(idx as usize) else {
            return shape_err("maxpool switch index outside input");
        };
        *slot += g;
    }
    Ok(dx)
}

/// Per-channel spatial mean: `[C,H,W] -> [C]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let n = (h * w) as f64;
    let data = (0..c).map(|ch| input.plane(ch).iter().sum::<f64>() / n).collect();
    Tensor::new(vec![c], data)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = input_shape else {
        return shape_err(format!("GAP backward needs a [C,H,W] shape, got {input_shape:?}"));
    };
    grad_out.ensure_shape(&[c], "GAP upstream gradient")?;
    let n = (h * w) as f64;
    let mut dx = Tensor::zeros(input_shape);
    for ch in 0..c {
        let g = grad_out.data()[ch] / n;
        dx.plane_mut(ch).fill(g);
    }
    Ok(dx)
}

/// `W x + b` for `x [n]`, `W [m,n]`, `b [m]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = linear_dims(input, weight)?;
    bias.ensure_shape(&[m], "linear bias")?;
    let x = input.data();
    let data = weight
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect();
    Tensor::new(vec![m], data)
}

/// Gradients of [`linear`]: `params = [d_weight, d_bias]`, input gradient
/// `W^T g`.
pub fn linear_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<LayerGradients> {
    let (m, n) = linear_dims(input, weight)?;
    grad_out.ensure_shape(&[m], "linear upstream gradient")?;
    let x = input.data();
    let g = grad_out.data();
    let mut d_weight = Vec::with_capacity(m * n);
    for &gi in g {
        d_weight.extend(x.iter().map(|xv| gi * xv));
    }
    let mut d_input = vec![0.0; n];
    for (row, &gi) in weight.data().chunks_exact(n).zip(g) {
        for (d, w) in d_input.iter_mut().zip(row) {
            *d += gi * w;
        }
    }
    Ok(LayerGradients {
        params: vec![Tensor::new(vec![m, n], d_weight)?, grad_out.clone()],
        input: Tensor::new(vec![n], d_input)?,
    })
}

fn linear_dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize)> {
    let &[m, n] = weight.shape() else {
        return shape_err(format!("linear weight must be [m,n], got {:?}", weight.shape()));
    };
    if input.shape() != [n] {
        return shape_err(format!(
            "linear input {:?} incompatible with weight [{m},{n}]",
            input.shape()
        ));
    }
    Ok((m, n))
}
