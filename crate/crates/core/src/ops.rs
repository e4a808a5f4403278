//! Low-level differentiable tensor operations.
//!
//! Everything here works on `f64` feature maps of shape (channels, height,
//! width) in standard (C-contiguous) layout. Convolutions are computed by
//! im2col + matrix multiply; backward passes re-materialize the column
//! matrix instead of caching it, trading a second im2col for a much smaller
//! activation cache. All routines are single-threaded and deterministic:
//! identical inputs produce bit-identical outputs.

use ndarray::{Array1, Array2, Array3, Array4};

/// A (C, H, W) feature map.
pub type Feat = Array3<f64>;

/// Spatial padding behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Reflection without edge repeat: index -1 maps to 1, index H maps to H-2.
    Reflect,
}

/// Output side length of a convolution along one axis.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

/// Output side length of a transposed convolution along one axis.
pub fn deconv_out_len(len: usize, k: usize, stride: usize, pad: usize, out_pad: usize) -> usize {
    (len - 1) * stride + k + out_pad - 2 * pad
}

fn reflect_index(i: isize, len: usize) -> usize {
    let n = len as isize;
    let mut j = i;
    if j < 0 {
        j = -j;
    }
    if j >= n {
        j = 2 * (n - 1) - j;
    }
    debug_assert!(0 <= j && j < n);
    j as usize
}

/// Pad each spatial side by `p`.
pub fn pad2d(x: &Feat, p: usize, mode: PadMode) -> Feat {
    if p == 0 {
        return x.clone();
    }
    let (c, h, w) = x.dim();
    if mode == PadMode::Reflect {
        assert!(h > p && w > p, "reflect pad {p} needs spatial dims > {p}");
    }
    let mut out = Array3::zeros((c, h + 2 * p, w + 2 * p));
    for ch in 0..c {
        for i in 0..h + 2 * p {
            for j in 0..w + 2 * p {
                let (si, sj) = match mode {
                    PadMode::Zero => {
                        let si = i as isize - p as isize;
                        let sj = j as isize - p as isize;
                        if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                            continue;
                        }
                        (si as usize, sj as usize)
                    }
                    PadMode::Reflect => (
                        reflect_index(i as isize - p as isize, h),
                        reflect_index(j as isize - p as isize, w),
                    ),
                };
                out[(ch, i, j)] = x[(ch, si, sj)];
            }
        }
    }
    out
}

/// Adjoint of `pad2d`: fold gradients on the padded grid back onto the
/// original (h, w) grid (reflected positions accumulate).
pub fn pad2d_backward(gp: &Feat, p: usize, mode: PadMode, h: usize, w: usize) -> Feat {
    if p == 0 {
        return gp.clone();
    }
    let (c, hp, wp) = gp.dim();
    debug_assert_eq!((hp, wp), (h + 2 * p, w + 2 * p));
    let mut gx = Array3::zeros((c, h, w));
    for ch in 0..c {
        for i in 0..hp {
            for j in 0..wp {
                let (si, sj) = match mode {
                    PadMode::Zero => {
                        let si = i as isize - p as isize;
                        let sj = j as isize - p as isize;
                        if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                            continue;
                        }
                        (si as usize, sj as usize)
                    }
                    PadMode::Reflect => (
                        reflect_index(i as isize - p as isize, h),
                        reflect_index(j as isize - p as isize, w),
                    ),
                };
                gx[(ch, si, sj)] += gp[(ch, i, j)];
            }
        }
    }
    gx
}

/// Unfold a padded feature map into a (C*k*k, ho*wo) column matrix.
pub fn im2col(xp: &Feat, k: usize, stride: usize, ho: usize, wo: usize) -> Array2<f64> {
    let (c, hp, wp) = xp.dim();
    let xs = xp.as_slice().expect("standard layout");
    let mut col = Array2::zeros((c * k * k, ho * wo));
    {
        let cs = col.as_slice_mut().expect("standard layout");
        for ch in 0..c {
            for di in 0..k {
                for dj in 0..k {
                    let row = (ch * k + di) * k + dj;
                    let rbase = row * ho * wo;
                    for oh in 0..ho {
                        let ibase = ch * hp * wp + (oh * stride + di) * wp + dj;
                        let obase = rbase + oh * wo;
                        if stride == 1 {
                            cs[obase..obase + wo].copy_from_slice(&xs[ibase..ibase + wo]);
                        } else {
                            for ow in 0..wo {
                                cs[obase + ow] = xs[ibase + ow * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of `im2col`: scatter-add a column matrix back onto a padded
/// (c, hp, wp) grid.
pub fn col2im(
    col: &Array2<f64>,
    c: usize,
    hp: usize,
    wp: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) -> Feat {
    let cs = col.as_slice().expect("standard layout");
    let mut out = Array3::zeros((c, hp, wp));
    {
        let os = out.as_slice_mut().expect("standard layout");
        for ch in 0..c {
            for di in 0..k {
                for dj in 0..k {
                    let row = (ch * k + di) * k + dj;
                    let rbase = row * ho * wo;
                    for oh in 0..ho {
                        let ibase = ch * hp * wp + (oh * stride + di) * wp + dj;
                        let obase = rbase + oh * wo;
                        for ow in 0..wo {
                            os[ibase + ow * stride] += cs[obase + ow];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Convolution forward. `w` has shape (c_out, c_in, k, k).
pub fn conv2d(
    x: &Feat,
    w: &Array4<f64>,
    b: Option<&Array1<f64>>,
    stride: usize,
    pad: usize,
    mode: PadMode,
) -> Feat {
    let (c_in, h, win) = x.dim();
    let (c_out, c_in_w, k, k2) = w.dim();
    assert_eq!(k, k2);
    assert_eq!(c_in, c_in_w, "conv input channels {c_in} != kernel {c_in_w}");
    let ho = conv_out_len(h, k, stride, pad);
    let wo = conv_out_len(win, k, stride, pad);
    let xp = pad2d(x, pad, mode);
    let col = im2col(&xp, k, stride, ho, wo);
    let wm = w
        .view()
        .into_shape_with_order((c_out, c_in * k * k))
        .expect("standard layout");
    let mut y2 = wm.dot(&col);
    if let Some(bias) = b {
        for (mut row, bv) in y2.rows_mut().into_iter().zip(bias.iter()) {
            row += *bv;
        }
    }
    y2.into_shape_with_order((c_out, ho, wo)).expect("size")
}

/// Convolution backward: gradients w.r.t. input, kernel, and bias.
pub fn conv2d_backward(
    x: &Feat,
    w: &Array4<f64>,
    gy: &Feat,
    stride: usize,
    pad: usize,
    mode: PadMode,
) -> (Feat, Array4<f64>, Array1<f64>) {
    let (c_in, h, win) = x.dim();
    let (c_out, _, k, _) = w.dim();
    let (gc, ho, wo) = gy.dim();
    assert_eq!(gc, c_out);
    let xp = pad2d(x, pad, mode);
    let (_, hp, wp) = xp.dim();
    let col = im2col(&xp, k, stride, ho, wo);
    let gy2 = gy
        .view()
        .into_shape_with_order((c_out, ho * wo))
        .expect("standard layout");
    // Kernel gradient: gY x col^T.
    let gw2 = gy2.dot(&col.t());
    let gw = gw2
        .into_shape_with_order((c_out, c_in, k, k))
        .expect("size");
    // Bias gradient: per-channel sum.
    let gb = Array1::from_iter((0..c_out).map(|co| gy2.row(co).sum()));
    // Input gradient: W^T x gY scattered back through im2col and padding.
    let wm = w
        .view()
        .into_shape_with_order((c_out, c_in * k * k))
        .expect("standard layout");
    let gcol = wm.t().dot(&gy2);
    let gxp = col2im(&gcol, c_in, hp, wp, k, stride, ho, wo);
    let gx = pad2d_backward(&gxp, pad, mode, h, win);
    (gx, gw, gb)
}

/// Transposed convolution forward. `w` has shape (c_in, c_out, k, k);
/// output side = (len-1)*stride + k + out_pad - 2*pad.
pub fn conv_transpose2d(
    x: &Feat,
    w: &Array4<f64>,
    b: Option<&Array1<f64>>,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Feat {
    let (c_in, h, win) = x.dim();
    let (c_in_w, c_out, k, _) = w.dim();
    assert_eq!(c_in, c_in_w, "deconv input channels");
    assert!(out_pad < stride, "output padding must be < stride");
    let ho = deconv_out_len(h, k, stride, pad, out_pad);
    let wo = deconv_out_len(win, k, stride, pad, out_pad);
    let hp = ho + 2 * pad;
    let wp = wo + 2 * pad;
    let wm = w
        .view()
        .into_shape_with_order((c_in, c_out * k * k))
        .expect("standard layout");
    let x2 = x
        .view()
        .into_shape_with_order((c_in, h * win))
        .expect("standard layout");
    let col = wm.t().dot(&x2); // (c_out*k*k, h*w)
    let ypad = col2im(&col, c_out, hp, wp, k, stride, h, win);
    let mut y = Array3::zeros((c_out, ho, wo));
    for c in 0..c_out {
        for i in 0..ho {
            for j in 0..wo {
                y[(c, i, j)] = ypad[(c, i + pad, j + pad)];
            }
        }
    }
    if let Some(bias) = b {
        for (mut plane, bv) in y.outer_iter_mut().zip(bias.iter()) {
            plane += *bv;
        }
    }
    y
}

/// Transposed convolution backward.
pub fn conv_transpose2d_backward(
    x: &Feat,
    w: &Array4<f64>,
    gy: &Feat,
    stride: usize,
    pad: usize,
    _out_pad: usize,
) -> (Feat, Array4<f64>, Array1<f64>) {
    let (c_in, h, win) = x.dim();
    let (_, c_out, k, _) = w.dim();
    let (gc, ho, wo) = gy.dim();
    assert_eq!(gc, c_out);
    // Adjoint of the final crop: embed gy into the padded grid.
    let mut gypad = Array3::zeros((c_out, ho + 2 * pad, wo + 2 * pad));
    for c in 0..c_out {
        for i in 0..ho {
            for j in 0..wo {
                gypad[(c, i + pad, j + pad)] = gy[(c, i, j)];
            }
        }
    }
    // Adjoint of col2im is im2col over the input's sampling grid.
    let colg = im2col(&gypad, k, stride, h, win); // (c_out*k*k, h*w)
    let wm = w
        .view()
        .into_shape_with_order((c_in, c_out * k * k))
        .expect("standard layout");
    let gx2 = wm.dot(&colg); // (c_in, h*w)
    let gx = gx2.into_shape_with_order((c_in, h, win)).expect("size");
    let x2 = x
        .view()
        .into_shape_with_order((c_in, h * win))
        .expect("standard layout");
    let gw2 = x2.dot(&colg.t()); // (c_in, c_out*k*k)
    let gw = gw2
        .into_shape_with_order((c_in, c_out, k, k))
        .expect("size");
    let gb = Array1::from_iter(gy.outer_iter().map(|plane| plane.sum()));
    (gx, gw, gb)
}

/// Variance floor inside instance normalization. Chosen tiny so that the
/// normalized output's variance is 1 to well within 1e-5 for any
/// non-degenerate channel.
pub const INSTANCE_NORM_EPS: f64 = 1e-9;

/// Per-channel statistics cached by instance norm for the backward pass.
#[derive(Debug, Clone)]
pub struct InstanceNormCache {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Instance normalization (per channel, no affine parameters):
/// y_c = (x_c - mean_c) / sqrt(var_c + eps).
pub fn instance_norm(x: &Feat) -> (Feat, InstanceNormCache) {
    let (c, h, w) = x.dim();
    let area = (h * w) as f64;
    let mut y = Array3::zeros((c, h, w));
    let mut mean = Vec::with_capacity(c);
    let mut inv_std = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = x.index_axis(ndarray::Axis(0), ch);
        let mu = plane.sum() / area;
        let var = plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / area;
        let istd = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        let mut out = y.index_axis_mut(ndarray::Axis(0), ch);
        for (o, v) in out.iter_mut().zip(plane.iter()) {
            *o = (v - mu) * istd;
        }
        mean.push(mu);
        inv_std.push(istd);
    }
    (y, InstanceNormCache { mean, inv_std })
}

/// Instance norm backward:
/// gx = istd * (gy - mean(gy) - xhat * mean(gy * xhat)) per channel.
pub fn instance_norm_backward(x: &Feat, cache: &InstanceNormCache, gy: &Feat) -> Feat {
    let (c, h, w) = x.dim();
    let area = (h * w) as f64;
    let mut gx = Array3::zeros((c, h, w));
    for ch in 0..c {
        let mu = cache.mean[ch];
        let istd = cache.inv_std[ch];
        let xp = x.index_axis(ndarray::Axis(0), ch);
        let gp = gy.index_axis(ndarray::Axis(0), ch);
        let mut g_sum = 0.0;
        let mut gx_dot = 0.0;
        for (xv, gv) in xp.iter().zip(gp.iter()) {
            let xhat = (xv - mu) * istd;
            g_sum += gv;
            gx_dot += gv * xhat;
        }
        let g_mean = g_sum / area;
        let gxhat_mean = gx_dot / area;
        let mut op = gx.index_axis_mut(ndarray::Axis(0), ch);
        for ((o, xv), gv) in op.iter_mut().zip(xp.iter()).zip(gp.iter()) {
            let xhat = (xv - mu) * istd;
            *o = istd * (gv - g_mean - xhat * gxhat_mean);
        }
    }
    gx
}

/// Pointwise nonlinearity selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    None,
    Relu,
    /// Leaky ReLU with the given negative-side slope.
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    /// Apply in place; returns nothing extra — backward re-derives the mask
    /// from the pre-activation input.
    pub fn forward(&self, x: &mut Feat) {
        match self {
            Activation::None => {}
            Activation::Relu => x.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::LeakyRelu(a) => {
                let a = *a;
                x.mapv_inplace(move |v| if v > 0.0 { v } else { a * v })
            }
            Activation::Tanh => x.mapv_inplace(f64::tanh),
        }
    }

    /// Chain `gy` through the activation given the pre-activation input.
    pub fn backward(&self, pre: &Feat, gy: &Feat) -> Feat {
        match self {
            Activation::None => gy.clone(),
            Activation::Relu => {
                let mut gx = gy.clone();
                gx.zip_mut_with(pre, |g, p| {
                    if *p <= 0.0 {
                        *g = 0.0;
                    }
                });
                gx
            }
            Activation::LeakyRelu(a) => {
                let a = *a;
                let mut gx = gy.clone();
                gx.zip_mut_with(pre, move |g, p| {
                    if *p <= 0.0 {
                        *g *= a;
                    }
                });
                gx
            }
            Activation::Tanh => {
                let mut gx = gy.clone();
                gx.zip_mut_with(pre, |g, p| {
                    let t = p.tanh();
                    *g *= 1.0 - t * t;
                });
                gx
            }
        }
    }
}
