use super::LabeledSample;
use crate::numerics::Tensor;

/// Bilinear resampling of one `h x w` plane with half-pixel centers: output
/// pixel `o` samples input coordinate `(o + 0.5) * in/out - 0.5`, clamped to
/// the valid range.
pub fn resize_plane(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    if (h, w) == (out_h, out_w) {
        return src.to_vec();
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, pos - i0 as f64)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Resizes every channel of a `[C,H,W]` tensor.
pub fn resize(image: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = image.chw().expect("resize needs a [C,H,W] tensor");
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        data.extend(resize_plane(image.plane(ch), h, w, out_h, out_w));
    }
    Tensor::new(vec![c, out_h, out_w], data).expect("resized size")
}

/// Resizes to `target_side x target_side` and clamps into `[0,1]`.
pub fn preprocess(sample: &LabeledSample, target_side: usize) -> LabeledSample {
    let resized = resize(&sample.image, target_side, target_side).map(|v| v.clamp(0.0, 1.0));
    LabeledSample {
        image: resized,
        label: sample.label,
        source: sample.source.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_size_is_bit_exact() {
        let t = Tensor::from_fn(&[1, 5, 4], |i| (i as f64 * 0.37).sin().abs());
        assert_eq!(resize(&t, 5, 4), t);
    }

    #[test]
    fn constant_stays_constant() {
        let t = Tensor::filled(&[1, 7, 3], 0.4);
        let r = resize(&t, 12, 10);
        assert!(r.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn checkerboard_upsample_closed_form() {
        // [[0,1],[1,0]] to 4x4: sample coordinates are 0, .25, .75, 1 on both axes
        let t = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = resize(&t, 4, 4);
        let coord = [0.0, 0.25, 0.75, 1.0];
        for (y, &v) in coord.iter().enumerate() {
            for (x, &u) in coord.iter().enumerate() {
                // bilinear interpolation of f(u,v) = u + v - 2uv on the unit square
                let expected = u + v - 2.0 * u * v;
                assert!((r.data()[y * 4 + x] - expected).abs() < 1e-15);
            }
        }
    }
}
