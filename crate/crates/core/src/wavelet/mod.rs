//! Level-1 separable 2-D Daubechies wavelet transform with periodic
//! boundary extension, and its exact inverse.
//!
//! With periodic extension the analysis operator is orthogonal, so the
//! transform conserves energy and the inverse reconstructs the input up to
//! rounding.

mod export;

pub use export::export_subbands;

use crate::error::{shape_err, Error, Result};
use crate::numerics::Tensor;

/// Daubechies scaling (lowpass) filters, `2 * order` taps each, in the
/// conventional table order.
const DB1: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2; 2];
const DB2: [f64; 4] = [
    0.4829629131445341433748716,
    0.8365163037378079055752938,
    0.2241438680420133810259728,
    -0.1294095225512603811744494,
];
const DB3: [f64; 6] = [
    0.3326705529500826159985116,
    0.8068915093110925764944936,
    0.4598775021184915700951519,
    -0.1350110200102545886963899,
    -0.08544127388202666169281917,
    0.03522629188570953660274066,
];
const DB4: [f64; 8] = [
    0.2303778133088965008632912,
    0.714846570552915647089922,
    0.6308807679298589078817163,
    -0.02798376941685985421141375,
    -0.1870348117190930840795707,
    0.03084138183556076362721936,
    0.03288301166688519973540751,
    -0.01059740178506903210488321,
];

pub const DEFAULT_ORDER: usize = 2;

/// Orthonormal analysis filter pair. `highpass` is the quadrature mirror of
/// `lowpass`: `highpass[n] = (-1)^n * lowpass[L-1-n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletFilterPair {
    pub order: usize,
    pub lowpass: Vec<f64>,
    pub highpass: Vec<f64>,
}

impl WaveletFilterPair {
    pub fn len(&self) -> usize {
        self.lowpass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lowpass.is_empty()
    }
}

pub fn daubechies_filters(order: usize) -> Result<WaveletFilterPair> {
    let lowpass: Vec<f64> = match order {
        1 => DB1.to_vec(),
        2 => DB2.to_vec(),
        3 => DB3.to_vec(),
        4 => DB4.to_vec(),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unsupported Daubechies order {order} (supported: 1-4)"
            )))
        }
    };
    Ok(WaveletFilterPair {
        order,
        highpass: quadrature_mirror(&lowpass),
        lowpass,
    })
}

pub fn quadrature_mirror(lowpass: &[f64]) -> Vec<f64> {
    let l = lowpass.len();
    (0..l)
        .map(|n| {
            let v = lowpass[l - 1 - n];
            if n % 2 == 0 {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// The four level-1 subbands of an image. The first letter of each detail
/// name refers to the filter applied along rows (x), the second to the
/// filter along columns (y).
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletDecomposition {
    /// Lowpass along both axes (A1).
    pub approximation: Tensor,
    /// Highpass along x, lowpass along y.
    pub hl: Tensor,
    /// Lowpass along x, highpass along y.
    pub lh: Tensor,
    /// Highpass along both axes.
    pub hh: Tensor,
}

impl WaveletDecomposition {
    pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
        let z = Tensor::zeros(&[channels, h, w]);
        Self {
            approximation: z.clone(),
            hl: z.clone(),
            lh: z.clone(),
            hh: z,
        }
    }

    /// Detail subbands stacked along channels as `[HL, LH, HH]`.
    pub fn stacked_details(&self) -> Result<Tensor> {
        Tensor::concat_channels(&[&self.hl, &self.lh, &self.hh])
    }

    pub fn subbands(&self) -> [&Tensor; 4] {
        [&self.approximation, &self.hl, &self.lh, &self.hh]
    }

    pub fn energy(&self) -> f64 {
        self.subbands().iter().map(|t| t.norm_sq()).sum()
    }

    fn check_consistent(&self) -> Result<(usize, usize, usize)> {
        let dims = self.approximation.chw()?;
        for band in &self.subbands()[1..] {
            if band.chw()? != dims {
                return shape_err(format!(
                    "subband shapes differ: {:?} vs {:?}",
                    self.approximation.shape(),
                    band.shape()
                ));
            }
        }
        Ok(dims)
    }
}

/// One-dimensional periodic analysis of `signal` into `(low, high)` halves.
fn analyze_line(signal: &[f64], f: &WaveletFilterPair, low: &mut [f64], high: &mut [f64]) {
    let n = signal.len();
    for k in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for (t, (&h, &g)) in f.lowpass.iter().zip(&f.highpass).enumerate() {
            let x = signal[(2 * k + t) % n];
            a += h * x;
            d += g * x;
        }
        low[k] = a;
        high[k] = d;
    }
}

/// Adjoint of [`analyze_line`]; `out` must be zeroed.
fn synthesize_line(low: &[f64], high: &[f64], f: &WaveletFilterPair, out: &mut [f64]) {
    let n = out.len();
    for k in 0..n / 2 {
        for (t, (&h, &g)) in f.lowpass.iter().zip(&f.highpass).enumerate() {
            out[(2 * k + t) % n] += h * low[k] + g * high[k];
        }
    }
}

/// Level-1 separable transform applied independently to every channel of a
/// `[C,H,W]` image: rows first, then columns, each followed by dyadic
/// downsampling.
pub fn dwt2_level1(image: &Tensor, filters: &WaveletFilterPair) -> Result<WaveletDecomposition> {
    let (c, h, w) = image.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return shape_err(format!("wavelet transform needs even dimensions, got {h}x{w}"));
    }
    if h < filters.len() || w < filters.len() {
        return shape_err(format!(
            "image {h}x{w} smaller than the {}-tap filter",
            filters.len()
        ));
    }
    let (h2, w2) = (h / 2, w / 2);
    let mut out = WaveletDecomposition::zeros(c, h2, w2);
    let mut row_low = vec![0.0; h * w2];
    let mut row_high = vec![0.0; h * w2];
    let mut column = vec![0.0; h];
    let (mut col_lo, mut col_hi) = (vec![0.0; h2], vec![0.0; h2]);

    for ch in 0..c {
        let plane = image.plane(ch);
        for y in 0..h {
            analyze_line(
                &plane[y * w..(y + 1) * w],
                filters,
                &mut row_low[y * w2..(y + 1) * w2],
                &mut row_high[y * w2..(y + 1) * w2],
            );
        }
        for (src, (lo_dst, hi_dst)) in [
            (&row_low, (&mut out.approximation, &mut out.lh)),
            (&row_high, (&mut out.hl, &mut out.hh)),
        ] {
            for x in 0..w2 {
                for y in 0..h {
                    column[y] = src[y * w2 + x];
                }
                analyze_line(&column, filters, &mut col_lo, &mut col_hi);
                let (lo_plane, hi_plane) = (lo_dst.plane_mut(ch), hi_dst.plane_mut(ch));
                for y in 0..h2 {
                    lo_plane[y * w2 + x] = col_lo[y];
                    hi_plane[y * w2 + x] = col_hi[y];
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`dwt2_level1`].
pub fn idwt2_level1(decomp: &WaveletDecomposition, filters: &WaveletFilterPair) -> Result<Tensor> {
    let (c, h2, w2) = decomp.check_consistent()?;
    let (h, w) = (2 * h2, 2 * w2);
    if h < filters.len() || w < filters.len() {
        return shape_err(format!("subbands too small for the {}-tap filter", filters.len()));
    }
    let mut image = Tensor::zeros(&[c, h, w]);
    let mut row_low = vec![0.0; h * w2];
    let mut row_high = vec![0.0; h * w2];
    let mut column = vec![0.0; h];
    let (mut lo, mut hi) = (vec![0.0; h2], vec![0.0; h2]);

    for ch in 0..c {
        for (lo_band, hi_band, dst) in [
            (&decomp.approximation, &decomp.lh, &mut row_low),
            (&decomp.hl, &decomp.hh, &mut row_high),
        ] {
            let (lp, hp) = (lo_band.plane(ch), hi_band.plane(ch));
            for x in 0..w2 {
                for y in 0..h2 {
                    lo[y] = lp[y * w2 + x];
                    hi[y] = hp[y * w2 + x];
                }
                column.fill(0.0);
                synthesize_line(&lo, &hi, filters, &mut column);
                for y in 0..h {
                    dst[y * w2 + x] = column[y];
                }
            }
        }
        let plane = image.plane_mut(ch);
        for y in 0..h {
            synthesize_line(
                &row_low[y * w2..(y + 1) * w2],
                &row_high[y * w2..(y + 1) * w2],
                filters,
                &mut plane[y * w..(y + 1) * w],
            );
        }
    }
    Ok(image)
}
