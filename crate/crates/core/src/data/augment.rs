use rand::Rng;

use super::LabeledSample;
use crate::numerics::Tensor;

/// Magnitudes of the training-time augmentations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    pub max_rotation_degrees: f64,
    /// Brightness factor is drawn from `[1 - b, 1 + b]`.
    pub brightness: f64,
    /// Contrast factor is drawn from `[1 - c, 1 + c]`.
    pub contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            max_rotation_degrees: 15.0,
            brightness: 0.2,
            contrast: 0.2,
        }
    }
}

/// One concrete set of augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub angle_degrees: f64,
    pub brightness: f64,
    pub contrast: f64,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        flip: false,
        angle_degrees: 0.0,
        brightness: 1.0,
        contrast: 1.0,
    };

    pub fn sample(config: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let flip = rng.random::<f64>() < config.flip_probability;
        let mut symmetric = |half: f64| {
            if half > 0.0 {
                rng.random_range(-half..=half)
            } else {
                0.0
            }
        };
        let angle_degrees = symmetric(config.max_rotation_degrees);
        let brightness = 1.0 + symmetric(config.brightness);
        let contrast = 1.0 + symmetric(config.contrast);
        Self {
            flip,
            angle_degrees,
            brightness,
            contrast,
        }
    }
}

pub fn augment(sample: &LabeledSample, config: &AugmentConfig, rng: &mut impl Rng) -> LabeledSample {
    augment_with(sample, &AugmentDraw::sample(config, rng))
}

/// Applies horizontal flip, rotation about the center (bilinear, border
/// replication), multiplicative brightness, contrast about the mean, then
/// clamps to `[0,1]`.
pub fn augment_with(sample: &LabeledSample, draw: &AugmentDraw) -> LabeledSample {
    let mut image = sample.image.clone();
    if draw.flip {
        image = flip_horizontal(&image);
    }
    if draw.angle_degrees != 0.0 {
        image = rotate(&image, draw.angle_degrees);
    }
    if draw.brightness != 1.0 {
        image.scale(draw.brightness);
    }
    if draw.contrast != 1.0 {
        let (c, _, _) = image.chw().expect("sample images are [C,H,W]");
        for ch in 0..c {
            let plane = image.plane_mut(ch);
            let mean = plane.iter().sum::<f64>() / plane.len() as f64;
            plane.iter_mut().for_each(|v| *v = mean + draw.contrast * (*v - mean));
        }
    }
    LabeledSample {
        image: image.map(|v| v.clamp(0.0, 1.0)),
        label: sample.label,
        source: sample.source.clone(),
    }
}

pub fn flip_horizontal(image: &Tensor) -> Tensor {
    let (c, h, w) = image.chw().expect("[C,H,W]");
    let mut out = image.clone();
    for ch in 0..c {
        let src = image.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[y * w + (w - 1 - x)];
            }
        }
    }
    out
}

/// Counter-clockwise rotation by `degrees` about the image center.
pub fn rotate(image: &Tensor, degrees: f64) -> Tensor {
    let (c, h, w) = image.chw().expect("[C,H,W]");
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = image.clone();
    for ch in 0..c {
        let src = image.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                // inverse mapping: rotate the output coordinate back
                let sx = (cos * dx - sin * dy + cx).clamp(0.0, (w - 1) as f64);
                let sy = (sin * dx + cos * dy + cy).clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[y * w + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(image: Tensor) -> LabeledSample {
        LabeledSample {
            image,
            label: 0,
            source: "s".into(),
        }
    }

    fn ramp() -> LabeledSample {
        sample(Tensor::from_fn(&[1, 6, 8], |i| (i as f64 * 0.013) % 1.0))
    }

    #[test]
    fn identity_draw_is_noop() {
        let s = ramp();
        assert_eq!(augment_with(&s, &AugmentDraw::IDENTITY).image, s.image);
    }

    #[test]
    fn double_flip_restores() {
        let s = ramp();
        let flip = AugmentDraw {
            flip: true,
            ..AugmentDraw::IDENTITY
        };
        let twice = augment_with(&augment_with(&s, &flip), &flip);
        assert_eq!(twice.image, s.image);
    }

    #[test]
    fn brightness_on_constant() {
        let s = sample(Tensor::filled(&[1, 4, 4], 0.5));
        let d = AugmentDraw {
            brightness: 1.2,
            ..AugmentDraw::IDENTITY
        };
        let out = augment_with(&s, &d);
        assert!(out.image.data().iter().all(|&v| (v - 0.6).abs() < 1e-15));
    }

    #[test]
    fn contrast_keeps_mean_of_unclamped_image() {
        let s = sample(Tensor::from_fn(&[1, 4, 4], |i| 0.3 + 0.02 * i as f64));
        let d = AugmentDraw {
            contrast: 0.8,
            ..AugmentDraw::IDENTITY
        };
        let out = augment_with(&s, &d);
        assert!((out.image.mean() - s.image.mean()).abs() < 1e-12);
    }

    #[test]
    fn rotation_by_zero_and_360() {
        let s = ramp();
        assert!(rotate(&s.image, 360.0).max_abs_diff(&s.image) < 1e-9);
        let sq = Tensor::from_fn(&[1, 5, 5], |i| i as f64);
        // a quarter turn of a square image maps grid points onto grid points
        let r = rotate(&sq, 90.0);
        assert!(r.all_finite());
        let back = rotate(&rotate(&r, 90.0), 180.0);
        assert!(back.max_abs_diff(&sq) < 1e-9);
    }

    #[test]
    fn draws_respect_ranges_and_outputs_stay_in_unit_interval() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = AugmentDraw::sample(&cfg, &mut rng);
            assert!(d.angle_degrees.abs() <= 15.0);
            assert!((0.8..=1.2).contains(&d.brightness));
            assert!((0.8..=1.2).contains(&d.contrast));
        }
        let out = augment(&ramp(), &cfg, &mut rng);
        assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
