//! Separable 2-D multi-level db4 wavelet analysis/synthesis used by the
//! pixel-level fusion baseline.
//!
//! Analysis: extend each row/column by L-1 samples per side (symmetric or
//! zero), correlate with the analysis filters over valid positions, keep the
//! odd-indexed outputs. Synthesis is the exact adjoint: zero-upsample each
//! band, fully convolve with the same analysis filters, sum, and crop at
//! offset L-2. Because the db4 filter pair is orthonormal under alternating
//! flip, this round trip is the identity on the original samples regardless
//! of the extension mode.

use ndarray::Array2;

use crate::config::WaveletBoundary;
use crate::error::{Error, Result};

/// db4 scaling (reconstruction low-pass) filter.
pub const DB4_SCALING: [f64; 8] = [
    0.23037781330885523,
    0.7148465705525415,
    0.6308807679295904,
    -0.02798376941698385,
    -0.18703481171888114,
    0.030841381835986965,
    0.032883011666982945,
    -0.010597401784997278,
];

const L: usize = DB4_SCALING.len();
/// Synthesis crop offset: (L - 1) - 1 for the odd downsampling phase.
const REC_OFFSET: usize = L - 2;

/// Analysis low-pass: the scaling filter reversed.
fn dec_lo() -> [f64; L] {
    let mut f = [0.0; L];
    for (j, v) in f.iter_mut().enumerate() {
        *v = DB4_SCALING[L - 1 - j];
    }
    f
}

/// Analysis high-pass: alternating-flip complement, reversed.
fn dec_hi() -> [f64; L] {
    let mut f = [0.0; L];
    for (j, v) in f.iter_mut().enumerate() {
        // reverse of g[k] = (-1)^k * scaling[L-1-k]
        let k = L - 1 - j;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *v = sign * DB4_SCALING[L - 1 - k];
    }
    f
}

/// Number of coefficients per band for an n-sample signal.
pub fn band_len(n: usize) -> usize {
    (n + L - 1) / 2
}

fn extend(x: &[f64], boundary: WaveletBoundary) -> Vec<f64> {
    let n = x.len();
    let mut e = Vec::with_capacity(n + 2 * (L - 1));
    for i in 0..L - 1 {
        e.push(match boundary {
            // half-sample symmetry: ..., x[1], x[0] | x[0], x[1], ...
            WaveletBoundary::Symmetric => x[L - 2 - i],
            WaveletBoundary::Zero => 0.0,
        });
    }
    e.extend_from_slice(x);
    for i in 0..L - 1 {
        e.push(match boundary {
            WaveletBoundary::Symmetric => x[n - 1 - i],
            WaveletBoundary::Zero => 0.0,
        });
    }
    e
}

/// One analysis level: signal -> (approximation, detail).
fn dwt1d(x: &[f64], boundary: WaveletBoundary) -> (Vec<f64>, Vec<f64>) {
    let e = extend(x, boundary);
    let lo = dec_lo();
    let hi = dec_hi();
    let k = band_len(x.len());
    let mut a = Vec::with_capacity(k);
    let mut d = Vec::with_capacity(k);
    for m in 0..k {
        let base = 2 * m + 1;
        let mut sa = 0.0;
        let mut sd = 0.0;
        for j in 0..L {
            let v = e[base + j];
            sa += lo[j] * v;
            sd += hi[j] * v;
        }
        a.push(sa);
        d.push(sd);
    }
    (a, d)
}

/// Exact inverse of `dwt1d` for a signal of original length `n`.
fn idwt1d(a: &[f64], d: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), d.len());
    let lo = dec_lo();
    let hi = dec_hi();
    let mut full = vec![0.0; 2 * a.len() + L - 2];
    for (m, (&ca, &cd)) in a.iter().zip(d).enumerate() {
        let base = 2 * m;
        for j in 0..L {
            full[base + j] += ca * lo[j] + cd * hi[j];
        }
    }
    full[REC_OFFSET..REC_OFFSET + n].to_vec()
}

fn rows_of(img: &Array2<f64>) -> Vec<Vec<f64>> {
    img.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// One 2-D analysis level: rows first, then columns of each half.
fn dwt2d(img: &Array2<f64>, boundary: WaveletBoundary) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let kw = band_len(w);
    let kh = band_len(h);
    // Row transform.
    let mut row_lo = Array2::zeros((h, kw));
    let mut row_hi = Array2::zeros((h, kw));
    for (i, row) in rows_of(img).into_iter().enumerate() {
        let (a, d) = dwt1d(&row, boundary);
        for j in 0..kw {
            row_lo[(i, j)] = a[j];
            row_hi[(i, j)] = d[j];
        }
    }
    // Column transform of both halves.
    let mut ll = Array2::zeros((kh, kw));
    let mut lh = Array2::zeros((kh, kw));
    let mut hl = Array2::zeros((kh, kw));
    let mut hh = Array2::zeros((kh, kw));
    for j in 0..kw {
        let col_lo: Vec<f64> = (0..h).map(|i| row_lo[(i, j)]).collect();
        let (a, d) = dwt1d(&col_lo, boundary);
        for i in 0..kh {
            ll[(i, j)] = a[i];
            lh[(i, j)] = d[i];
        }
        let col_hi: Vec<f64> = (0..h).map(|i| row_hi[(i, j)]).collect();
        let (a, d) = dwt1d(&col_hi, boundary);
        for i in 0..kh {
            hl[(i, j)] = a[i];
            hh[(i, j)] = d[i];
        }
    }
    (ll, lh, hl, hh)
}

fn idwt2d(
    ll: &Array2<f64>,
    lh: &Array2<f64>,
    hl: &Array2<f64>,
    hh: &Array2<f64>,
    out_hw: (usize, usize),
) -> Array2<f64> {
    let (h, w) = out_hw;
    let kw = ll.dim().1;
    // Invert the column transform.
    let mut row_lo = Array2::zeros((h, kw));
    let mut row_hi = Array2::zeros((h, kw));
    for j in 0..kw {
        let a: Vec<f64> = (0..ll.dim().0).map(|i| ll[(i, j)]).collect();
        let d: Vec<f64> = (0..lh.dim().0).map(|i| lh[(i, j)]).collect();
        for (i, v) in idwt1d(&a, &d, h).into_iter().enumerate() {
            row_lo[(i, j)] = v;
        }
        let a: Vec<f64> = (0..hl.dim().0).map(|i| hl[(i, j)]).collect();
        let d: Vec<f64> = (0..hh.dim().0).map(|i| hh[(i, j)]).collect();
        for (i, v) in idwt1d(&a, &d, h).into_iter().enumerate() {
            row_hi[(i, j)] = v;
        }
    }
    // Invert the row transform.
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        let a: Vec<f64> = (0..kw).map(|j| row_lo[(i, j)]).collect();
        let d: Vec<f64> = (0..kw).map(|j| row_hi[(i, j)]).collect();
        for (j, v) in idwt1d(&a, &d, w).into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

/// Detail bands of one level plus the spatial size of the signal they were
/// computed from (needed for the exact inverse crop).
#[derive(Debug, Clone)]
pub struct DetailBands {
    pub lh: Array2<f64>,
    pub hl: Array2<f64>,
    pub hh: Array2<f64>,
    pub input_hw: (usize, usize),
}

/// Multi-level 2-D decomposition: `details[0]` is the finest level.
#[derive(Debug, Clone)]
pub struct WaveletPyramid {
    pub details: Vec<DetailBands>,
    pub approx: Array2<f64>,
}

/// Decompose a single-channel image into `levels` detail levels plus the
/// coarse approximation.
pub fn decompose(
    img: &Array2<f64>,
    levels: usize,
    boundary: WaveletBoundary,
) -> Result<WaveletPyramid> {
    if levels == 0 {
        return Err(Error::data("wavelet decomposition needs at least 1 level"));
    }
    let mut current = img.clone();
    let mut details = Vec::with_capacity(levels);
    for level in 0..levels {
        let (h, w) = current.dim();
        if h < L || w < L {
            return Err(Error::data(format!(
                "image too small for wavelet level {}: {h}x{w} is below the filter length {L}",
                level + 1
            )));
        }
        let (ll, lh, hl, hh) = dwt2d(&current, boundary);
        details.push(DetailBands {
            lh,
            hl,
            hh,
            input_hw: (h, w),
        });
        current = ll;
    }
    Ok(WaveletPyramid {
        details,
        approx: current,
    })
}

/// Invert `decompose` exactly (up to floating-point roundoff).
pub fn reconstruct(pyramid: &WaveletPyramid) -> Array2<f64> {
    let mut current = pyramid.approx.clone();
    for bands in pyramid.details.iter().rev() {
        current = idwt2d(&current, &bands.lh, &bands.hl, &bands.hh, bands.input_hw);
    }
    current
}
