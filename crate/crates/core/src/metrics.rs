//! Image-quality metrics (PSNR, SSIM) on [0,1]-scaled images, plus the
//! mean/variance aggregation and table formatting used by `evaluate`.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::ops::Feat;

/// SSIM window: 11x11 Gaussian, sigma 1.5.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
/// Dynamic range L = 1: metrics are defined on [0,1] images.
const SSIM_C1: f64 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
const SSIM_C2: f64 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);

/// Peak signal-to-noise ratio in dB with MAX = 1. Identical images yield
/// `f64::INFINITY` (rendered as "inf" in tables and excluded from
/// aggregates).
pub fn psnr(x: &Feat, y: &Feat) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::data(format!(
            "psnr: shape mismatch {:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    let mse = (x - y).mapv(|d| d * d).mean().unwrap();
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(-10.0 * mse.log10())
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Valid-mode windowed weighted mean with the separable Gaussian window.
fn windowed_mean(img: &ArrayView2<f64>, win: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = img.dim();
    let oh = h - SSIM_WINDOW + 1;
    let ow = w - SSIM_WINDOW + 1;
    // Horizontal pass.
    let mut horiz = Array2::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                acc += wk * img[(i, j + k)];
            }
            horiz[(i, j)] = acc;
        }
    }
    // Vertical pass.
    let mut out = Array2::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                acc += wk * horiz[(i + k, j)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Structural similarity: mean local SSIM over all fully valid 11x11
/// windows, averaged across channels for multi-channel images.
pub fn ssim(x: &Feat, y: &Feat) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::data(format!(
            "ssim: shape mismatch {:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    let (c, h, w) = x.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::data(format!(
            "ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let win = gaussian_window();
    let mut channel_means = Vec::with_capacity(c);
    for ch in 0..c {
        let xc = x.index_axis(ndarray::Axis(0), ch);
        let yc = y.index_axis(ndarray::Axis(0), ch);
        let mu_x = windowed_mean(&xc, &win);
        let mu_y = windowed_mean(&yc, &win);
        let xx = windowed_mean(&(&xc * &xc).view(), &win);
        let yy = windowed_mean(&(&yc * &yc).view(), &win);
        let xy = windowed_mean(&(&xc * &yc).view(), &win);
        let mut sum = 0.0;
        let n = mu_x.len();
        for (idx, &mx) in mu_x.indexed_iter() {
            let my = mu_y[idx];
            let var_x = xx[idx] - mx * mx;
            let var_y = yy[idx] - my * my;
            let cov = xy[idx] - mx * my;
            let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2);
            sum += num / den;
        }
        channel_means.push(sum / n as f64);
    }
    Ok(channel_means.iter().sum::<f64>() / c as f64)
}

/// Per-image metric pair, tagged by the image's identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Population mean/variance per metric. Images with infinite PSNR are
/// excluded from the PSNR aggregate and counted separately.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub n_images: usize,
    pub n_infinite_psnr: usize,
    pub psnr_mean: f64,
    pub psnr_variance: f64,
    pub ssim_mean: f64,
    pub ssim_variance: f64,
}

fn population_stats(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Aggregate per-image metrics into population mean and variance.
pub fn aggregate(reports: &[ImageMetrics]) -> Result<MetricSummary> {
    if reports.is_empty() {
        return Err(Error::data("aggregate: no metric reports"));
    }
    let finite_psnr: Vec<f64> = reports
        .iter()
        .map(|r| r.psnr)
        .filter(|v| v.is_finite())
        .collect();
    let ssim_vals: Vec<f64> = reports.iter().map(|r| r.ssim).collect();
    let (psnr_mean, psnr_variance) = population_stats(&finite_psnr);
    let (ssim_mean, ssim_variance) = population_stats(&ssim_vals);
    Ok(MetricSummary {
        n_images: reports.len(),
        n_infinite_psnr: reports.len() - finite_psnr.len(),
        psnr_mean,
        psnr_variance,
        ssim_mean,
        ssim_variance,
    })
}

/// "mean (variance)" cell with three decimals, e.g. "23.113 (9.147)".
pub fn format_mean_variance(mean: f64, variance: f64) -> String {
    format!("{mean:.3} ({variance:.3})")
}

fn format_psnr_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

/// One CSV row per image: name,psnr,ssim (psnr "inf" when exact).
pub fn render_metrics_csv(reports: &[ImageMetrics]) -> String {
    let mut out = String::from("image,psnr,ssim\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{}\n",
            r.name,
            format_psnr_value(r.psnr),
            r.ssim
        ));
    }
    out
}

/// Markdown summary table in "mean (variance)" format.
pub fn render_summary_markdown(s: &MetricSummary) -> String {
    let psnr_cell = if s.n_images == s.n_infinite_psnr {
        "inf".to_string()
    } else {
        format_mean_variance(s.psnr_mean, s.psnr_variance)
    };
    let mut out = String::new();
    out.push_str("| metric | mean (variance) |\n");
    out.push_str("|--------|-----------------|\n");
    out.push_str(&format!("| PSNR (dB) | {psnr_cell} |\n"));
    out.push_str(&format!(
        "| SSIM | {} |\n",
        format_mean_variance(s.ssim_mean, s.ssim_variance)
    ));
    out.push_str(&format!("\n{} images evaluated.", s.n_images));
    if s.n_infinite_psnr > 0 {
        out.push_str(&format!(
            " {} image(s) with infinite PSNR excluded from the PSNR aggregate.",
            s.n_infinite_psnr
        ));
    }
    out.push('\n');
    out
}
