//! Grad-CAM on the structural stream, overlays, and attribution stability
//! under speckle noise.

use std::path::Path;

use rayon::prelude::*;

use crate::data::image_io::{save_gray_unit, save_rgb};
use crate::data::noise::{add_noise, NoiseKind};
use crate::data::preprocess::resize_plane;
use crate::data::seed::stream;
use crate::data::LabeledSample;
use crate::error::{shape_err, Error, Result};
use crate::model::{ModelParams, Network};
use crate::numerics::Tensor;
use crate::wavelet::WaveletDecomposition;

/// Blend weight of the colormap at a saliency of 1.
pub const OVERLAY_ALPHA: f64 = 0.4;

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    /// `[h,w]` at feature-map resolution, non-negative.
    pub raw: Tensor,
    /// `[H,W]` at input resolution, min-max normalized into `[0,1]`.
    pub upsampled: Tensor,
    pub target_class: usize,
    /// `(min, max)` of the upsampled map before normalization.
    pub range: (f64, f64),
}

/// Grad-CAM from a feature map `[C,h,w]` and the gradient of the target
/// score with respect to it.
pub fn gradcam_from_gradient(
    map: &Tensor,
    grad: &Tensor,
    target_class: usize,
    out_h: usize,
    out_w: usize,
) -> Result<SaliencyMap> {
    let (c, h, w) = map.chw()?;
    grad.ensure_shape(map.shape(), "Grad-CAM gradient")?;
    let area = (h * w) as f64;
    let mut cam = vec![0.0; h * w];
    for ch in 0..c {
        let weight = grad.plane(ch).iter().sum::<f64>() / area;
        for (acc, v) in cam.iter_mut().zip(map.plane(ch)) {
            *acc += weight * v;
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let up = resize_plane(&cam, h, w, out_h, out_w);
    let lo = up.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = up.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let normalized = if hi > lo {
        up.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; up.len()]
    };
    Ok(SaliencyMap {
        raw: Tensor::new(vec![h, w], cam)?,
        upsampled: Tensor::new(vec![out_h, out_w], normalized)?,
        target_class,
        range: (lo, hi),
    })
}

fn check_class(class: usize, k: usize) -> Result<()> {
    if class < k {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("target class {class} outside [0, {k})")))
    }
}

/// Structural-stream Grad-CAM from the approximation subband alone. The
/// map is upsampled to twice the subband size (the input image size).
pub fn gradcam_approximation(params: &ModelParams, a1: &Tensor, target_class: usize) -> Result<SaliencyMap> {
    check_class(target_class, params.config.num_classes)?;
    let (_, h, w) = a1.chw()?;
    let (map, grad) = params.structural_logit_gradient(a1, target_class)?;
    gradcam_from_gradient(&map, &grad, target_class, 2 * h, 2 * w)
}

/// Structural-stream Grad-CAM of a decomposed image; the detail subbands
/// are never read.
pub fn gradcam_structural(params: &ModelParams, decomp: &WaveletDecomposition, target_class: usize) -> Result<SaliencyMap> {
    gradcam_approximation(params, &decomp.approximation, target_class)
}

/// Grad-CAM of a preprocessed `[1,S,S]` image. The dual-stream model uses
/// its structural stream; a single-branch model uses its only encoder.
pub fn gradcam(net: &Network, image: &Tensor, target_class: usize) -> Result<SaliencyMap> {
    let config = net.config();
    check_class(target_class, config.num_classes)?;
    let input = net.prepare(image)?;
    let side = config.input_side;
    let (map, grad) = match net {
        Network::Full(p) => p.structural_logit_gradient(&input.streams[0], target_class)?,
        Network::Branch(b) => b.logit_gradient(&input, target_class)?,
    };
    gradcam_from_gradient(&map, &grad, target_class, side, side)
}

/// Cosine similarity; two all-zero maps are identical (1), one all-zero
/// map shares nothing with a non-zero one (0).
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    match (na > 0.0, nb > 0.0) {
        (false, false) => 1.0,
        (true, true) => (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0),
        _ => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRow {
    pub sigma: f64,
    pub mean: f64,
    /// Per-trial similarities, in trial order.
    pub similarities: Vec<f64>,
}

impl StabilityRow {
    /// Sample standard deviation of the trial similarities.
    pub fn std_dev(&self) -> f64 {
        let n = self.similarities.len();
        if n < 2 {
            return 0.0;
        }
        let var = self.similarities.iter().map(|s| (s - self.mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt()
    }
}

/// Mean cosine similarity between the clean map and maps of speckled
/// copies of `sample`, for each sigma.
pub fn attribution_stability(
    net: &Network,
    sample: &LabeledSample,
    target_class: usize,
    sigmas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<StabilityRow>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("attribution stability needs at least one trial".into()));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {s}")));
    }
    let clean = gradcam(net, &sample.image, target_class)?;
    sigmas
        .iter()
        .map(|&sigma| {
            let similarities = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = stream(seed, "stability", &sample.source, sigma.to_bits() ^ t as u64);
                    let noisy = add_noise(sample, NoiseKind::Speckle, sigma, &mut rng);
                    let map = gradcam(net, &noisy.image, target_class)?;
                    Ok(cosine_similarity(clean.upsampled.data(), map.upsampled.data()))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(StabilityRow {
                sigma,
                mean: similarities.iter().sum::<f64>() / trials as f64,
                similarities,
            })
        })
        .collect()
}

/// Blue (0) to red (1) colormap.
pub fn colormap(m: f64) -> [f64; 3] {
    [m, 0.0, 1.0 - m]
}

/// Colored overlay `[3,H,W]` of a saliency map on a `[1,H,W]` image. Each
/// pixel blends `(1 - a) * gray + a * colormap(m)` with `a = OVERLAY_ALPHA * m`,
/// so unattributed pixels keep the plain image.
pub fn render_overlay(map: &SaliencyMap, image: &Tensor) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    if c != 1 || map.upsampled.shape() != [h, w] {
        return shape_err(format!(
            "overlay of map {:?} on image {:?}",
            map.upsampled.shape(),
            image.shape()
        ));
    }
    let mut out = Tensor::zeros(&[3, h, w]);
    for (i, (&gray, &m)) in image.data().iter().zip(map.upsampled.data()).enumerate() {
        let a = OVERLAY_ALPHA * m;
        for (ch, color) in colormap(m).into_iter().enumerate() {
            out.plane_mut(ch)[i] = (1.0 - a) * gray + a * color;
        }
    }
    Ok(out)
}

/// Writes `<stem>.cam.png` and `<stem>.overlay.png` into `dir`.
pub fn write_saliency(map: &SaliencyMap, image: &Tensor, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (h, w) = (map.upsampled.dim(0), map.upsampled.dim(1));
    save_gray_unit(&dir.join(format!("{stem}.cam.png")), map.upsampled.data(), h, w)?;
    save_rgb(&dir.join(format!("{stem}.overlay.png")), &render_overlay(map, image)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, StructuralHead, Variant};

    fn net(variant: Variant) -> Network {
        let config = ModelConfig {
            num_classes: 3,
            channel_widths: vec![3, 4],
            hidden_width: 6,
            wavelet_order: 2,
            input_side: 32,
            aux_weight: 0.5,
            structural_head: StructuralHead::Auxiliary,
            variant,
        };
        Network::build(&config, 17).unwrap()
    }

    fn image() -> Tensor {
        Tensor::from_fn(&[1, 32, 32], |i| {
            let (y, x) = ((i / 32) as f64, (i % 32) as f64);
            (0.5 + 0.4 * ((x - 12.0).powi(2) + (y - 20.0).powi(2)).sqrt().cos()).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn map_shapes_and_ranges() {
        let n = net(Variant::Full);
        let m = gradcam(&n, &image(), 1).unwrap();
        assert_eq!(m.raw.shape(), [4, 4]);
        assert_eq!(m.upsampled.shape(), [32, 32]);
        assert!(m.raw.data().iter().all(|v| *v >= 0.0));
        assert!(m.upsampled.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(gradcam(&n, &image(), 3).is_err());
    }

    #[test]
    fn weighting_matches_hand_computation() {
        // two channels of a 2x2 map; channel weights are the mean gradients
        let map = Tensor::new(vec![2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 4.0, 0.0, 0.0, 4.0]).unwrap();
        let grad = Tensor::new(vec![2, 2, 2], vec![1.0; 4].into_iter().chain([-1.0; 4]).collect()).unwrap();
        let m = gradcam_from_gradient(&map, &grad, 0, 2, 2).unwrap();
        assert_eq!(m.raw.data(), &[0.0, 2.0, 3.0, 0.0]);
        assert_eq!(m.upsampled.data(), &[0.0, 2.0 / 3.0, 1.0, 0.0]);
        assert_eq!(m.range, (0.0, 3.0));
    }

    #[test]
    fn zero_map_normalizes_to_zeros() {
        let map = Tensor::filled(&[1, 2, 2], 1.0);
        let grad = Tensor::filled(&[1, 2, 2], -1.0);
        let m = gradcam_from_gradient(&map, &grad, 0, 4, 4).unwrap();
        assert!(m.upsampled.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn overlay_blend() {
        let img = Tensor::from_fn(&[1, 2, 2], |i| i as f64 / 4.0);
        let mut map = SaliencyMap {
            raw: Tensor::zeros(&[1, 1]),
            upsampled: Tensor::zeros(&[2, 2]),
            target_class: 0,
            range: (0.0, 0.0),
        };
        let out = render_overlay(&map, &img).unwrap();
        for ch in 0..3 {
            assert_eq!(out.plane(ch), img.data());
        }
        map.upsampled = Tensor::new(vec![2, 2], vec![1.0, 0.5, 0.25, 1.0]).unwrap();
        let out = render_overlay(&map, &img).unwrap();
        let (g, m) = (img.data()[1], 0.5);
        let a = 0.4 * m;
        assert_eq!(out.plane(0)[1], (1.0 - a) * g + a * m);
        assert_eq!(out.plane(1)[1], (1.0 - a) * g);
        assert_eq!(out.plane(2)[1], (1.0 - a) * g + a * (1.0 - m));
        assert!(render_overlay(&map, &Tensor::zeros(&[1, 3, 3])).is_err());
    }

    #[test]
    fn stability_is_one_without_noise() {
        let n = net(Variant::Full);
        let s = LabeledSample {
            image: image(),
            label: 0,
            source: "img".into(),
        };
        let rows = attribution_stability(&n, &s, 0, &[0.0, 0.2], 3, 5).unwrap();
        assert!(rows[0].similarities.iter().all(|v| *v == 1.0));
        assert_eq!(rows[0].mean, 1.0);
        assert!(rows[1].similarities.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
    }

    #[test]
    fn writes_both_images() {
        let n = net(Variant::DetailOnly);
        let m = gradcam(&n, &image(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_saliency(&m, &image(), dir.path(), "x").unwrap();
        assert!(dir.path().join("x.cam.png").exists());
        assert!(dir.path().join("x.overlay.png").exists());
    }
}
