//! Decoding images to luminance tensors and writing 8-bit PNGs.

use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{shape_err, Result};
use crate::numerics::Tensor;

/// ITU-R BT.601 luma weights, in thousandths.
const LUMA_WEIGHTS: [u64; 3] = [299, 587, 114];

/// Decodes any supported image file into a `[1,H,W]` luminance tensor in
/// `[0,1]`.
pub fn read_luminance(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?;
    Ok(luminance(&img.to_rgb16()))
}

/// Luminance of a 16-bit RGB buffer, computed in exact integer arithmetic
/// before the final division.
pub fn luminance(rgb: &image::ImageBuffer<image::Rgb<u16>, Vec<u16>>) -> Tensor {
    let (w, h) = rgb.dimensions();
    let scale = 65535.0 * 1000.0;
    let data = rgb
        .pixels()
        .map(|p| {
            let weighted: u64 = p.0.iter().zip(LUMA_WEIGHTS).map(|(&c, wt)| c as u64 * wt).sum();
            (weighted as f64 / scale).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::new(vec![1, h as usize, w as usize], data).expect("buffer size matches dimensions")
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a plane whose values already lie in `[0,1]`.
pub fn save_gray_unit(path: &Path, plane: &[f64], h: usize, w: usize) -> Result<()> {
    if plane.len() != h * w {
        return shape_err(format!("plane of {} values is not {h}x{w}", plane.len()));
    }
    let img = GrayImage::from_raw(w as u32, h as u32, plane.iter().map(|&v| to_u8(v)).collect())
        .expect("buffer size checked");
    img.save(path)?;
    Ok(())
}

/// Writes a plane after min-max normalization; a constant plane becomes black.
pub fn save_gray_min_max(path: &Path, plane: &[f64], h: usize, w: usize) -> Result<()> {
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let scaled: Vec<f64> = if range > 0.0 {
        plane.iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![0.0; plane.len()]
    };
    save_gray_unit(path, &scaled, h, w)
}

/// Writes a `[3,H,W]` tensor in `[0,1]` as an RGB PNG.
pub fn save_rgb(path: &Path, image: &Tensor) -> Result<()> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return shape_err(format!("RGB export needs 3 channels, got {c}"));
    }
    let mut buf = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            buf.push(to_u8(image.plane(ch)[i]));
        }
    }
    let img = RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size checked");
    img.save(path)?;
    Ok(())
}
