//! Nine-class synthetic stand-in for a sonographic organ dataset.
//!
//! Every image shows one elliptical organ (bright wall, dark lumen) over a
//! speckled background, with random position, scale, orientation and
//! speckle. Classes differ in wall thickness, size, lumen content and
//! boundary shape. Most signatures are coarse structure; the sludge class
//! adds a fine oriented texture inside the lumen.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{seed, LabeledSample};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const NUM_CLASSES: usize = 9;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "normal",
    "thick_wall",
    "single_stone",
    "multiple_stones",
    "contracted",
    "distended",
    "lobulated",
    "sludge",
    "mass",
];

/// Classes whose discriminative evidence sits in a small region of the
/// image rather than in the overall outline.
pub const LOCALIZED_CLASSES: [usize; 3] = [2, 3, 8];

const BACKGROUND: f64 = 0.32;
const WALL: f64 = 0.85;
const LUMEN: f64 = 0.06;
const SPECKLE_SIGMA: f64 = 0.25;

#[derive(Clone, Copy, Debug)]
struct Organ {
    cx: f64,
    cy: f64,
    /// semi-axes as fractions of the side
    a: f64,
    b: f64,
    angle: f64,
    /// wall thickness as a fraction of the normalized radius
    wall: f64,
    lobes: Option<(f64, f64)>,
}

impl Organ {
    /// Normalized elliptical radius and polar angle of pixel `(u, v)`.
    fn polar(&self, u: f64, v: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (u - self.cx, v - self.cy);
        let x = (c * dx + s * dy) / self.a;
        let y = (-s * dx + c * dy) / self.b;
        let phi = y.atan2(x);
        let mut r = (x * x + y * y).sqrt();
        if let Some((amp, phase)) = self.lobes {
            r /= 1.0 + amp * (5.0 * phi + phase).sin();
        }
        (r, phi)
    }

    /// Image coordinates of a point given in the organ's own frame.
    fn to_image(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (px, py) = (x * self.a, y * self.b);
        (self.cx + c * px - s * py, self.cy + s * px + c * py)
    }
}

#[derive(Clone, Copy, Debug)]
struct Disk {
    x: f64,
    y: f64,
    r: f64,
    value: f64,
}

impl Disk {
    fn contains(&self, u: f64, v: f64) -> bool {
        (u - self.x).powi(2) + (v - self.y).powi(2) <= self.r * self.r
    }
}

struct Scene {
    organ: Organ,
    inclusions: Vec<Disk>,
    /// x-interval and top edge of an acoustic shadow below a stone
    shadow: Option<(f64, f64, f64)>,
    /// stripe frequency (cycles per side) and direction inside the lumen
    stripes: Option<(f64, f64)>,
    /// a lesion that crosses the wall instead of staying in the lumen
    mass: Option<Disk>,
}

fn jitter(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    rng.random_range(-half..=half)
}

fn scene(class: usize, rng: &mut ChaCha8Rng) -> Scene {
    let scale = 1.0 + jitter(rng, 0.08);
    let (a, b, wall) = match class {
        1 => (0.30, 0.19, 0.42),
        4 => (0.15, 0.14, 0.38),
        5 => (0.40, 0.27, 0.08),
        6 => (0.26, 0.26, 0.16),
        _ => (0.30, 0.19, 0.14),
    };
    let organ = Organ {
        cx: 0.5 + jitter(rng, 0.05),
        cy: 0.5 + jitter(rng, 0.05),
        a: a * scale,
        b: b * scale,
        angle: jitter(rng, 12f64.to_radians()),
        wall,
        lobes: (class == 6).then(|| (0.22, rng.random_range(0.0..std::f64::consts::TAU))),
    };
    let mut scene = Scene {
        organ,
        inclusions: Vec::new(),
        shadow: None,
        stripes: None,
        mass: None,
    };
    match class {
        2 => {
            let (x, y) = organ.to_image(jitter(rng, 0.35), 0.25);
            let r = 0.09 * scale;
            scene.inclusions.push(Disk { x, y, r, value: 0.97 });
            scene.shadow = Some((x - r, x + r, y + r));
        }
        3 => {
            for i in 0..5 {
                let t = -0.6 + 0.3 * i as f64 + jitter(rng, 0.06);
                let (x, y) = organ.to_image(t, jitter(rng, 0.3));
                scene.inclusions.push(Disk {
                    x,
                    y,
                    r: 0.028 * scale,
                    value: 0.95,
                });
            }
        }
        7 => {
            scene.stripes = Some((24.0, jitter(rng, 15f64.to_radians())));
        }
        8 => {
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let (x, y) = organ.to_image(0.75 * side, 0.0);
            scene.mass = Some(Disk {
                x,
                y,
                r: 0.8 * organ.b,
                value: 0.7,
            });
        }
        _ => {}
    }
    scene
}

fn render(scene: &Scene, side: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let speckle = Normal::new(0.0, SPECKLE_SIGMA).expect("constant sigma");
    let n = side as f64;
    let organ = &scene.organ;
    let mut data = Vec::with_capacity(side * side);
    for py in 0..side {
        for px in 0..side {
            let (u, v) = ((px as f64 + 0.5) / n, (py as f64 + 0.5) / n);
            let (r, _) = organ.polar(u, v);
            let mut value = if r > 1.0 {
                BACKGROUND
            } else if r > 1.0 - organ.wall {
                WALL
            } else if let Some((freq, dir)) = scene.stripes {
                let (s, c) = dir.sin_cos();
                let phase = std::f64::consts::TAU * freq * (c * u + s * v);
                0.34 + 0.26 * phase.sin()
            } else {
                LUMEN
            };
            if r <= 1.0 - organ.wall {
                if let Some(d) = scene.inclusions.iter().find(|d| d.contains(u, v)) {
                    value = d.value;
                }
            }
            if let Some(m) = scene.mass.filter(|m| m.contains(u, v)) {
                value = m.value;
            }
            if let Some((x0, x1, top)) = scene.shadow {
                let inside_stone = scene.inclusions.iter().any(|d| d.contains(u, v));
                if (x0..=x1).contains(&u) && v > top && !inside_stone {
                    value *= 0.25;
                }
            }
            let noisy = value * (1.0 + speckle.sample(rng));
            data.push(noisy.clamp(0.0, 1.0));
        }
    }
    Tensor::new(vec![1, side, side], data).expect("side*side values")
}

/// Sample id of the `index`-th image of `class`.
pub fn sample_id(class: usize, index: usize) -> String {
    format!("{}/{:04}", class_dir_name(class), index)
}

/// Directory name for a class; the numeric prefix keeps lexicographic order
/// equal to label order.
pub fn class_dir_name(class: usize) -> String {
    format!("{class}_{}", CLASS_NAMES[class])
}

pub fn generate_synthetic_dataset(n_per_class: usize, side: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    if n_per_class < 10 {
        return Err(Error::InvalidArgument(format!(
            "synthetic dataset needs at least 10 samples per class, got {n_per_class}"
        )));
    }
    if side == 0 || side % 32 != 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic image side must be a positive multiple of 32, got {side}"
        )));
    }
    let mut samples = Vec::with_capacity(n_per_class * NUM_CLASSES);
    for class in 0..NUM_CLASSES {
        for i in 0..n_per_class {
            let id = sample_id(class, i);
            let mut rng = seed::stream(seed, "synthetic", &id, 0);
            let sc = scene(class, &mut rng);
            samples.push(LabeledSample {
                image: render(&sc, side, &mut rng),
                label: class,
                source: id,
            });
        }
    }
    Ok(samples)
}
