//! Objective terms: adversarial values in both GAN modes, latent
//! consistency, cycle consistency, the weighted total, and the training-side
//! gradient producers. Also hosts an independently coded single-pair
//! cycle-GAN objective used purely as a limiting-case test oracle.
//!
//! Reported adversarial values are the two-sided minimax quantities; the
//! training functions split them into the discriminator's descent target and
//! the generator's non-saturating target.

use crate::config::GanMode;
use crate::error::{Error, Result};
use crate::ops::Feat;

/// Probabilities are clamped to [SCORE_EPS, 1 - SCORE_EPS] before any log.
pub const SCORE_EPS: f64 = 1e-7;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Raw score map -> clamped probability map, for log-mode reporting.
pub fn to_probabilities(scores: &Feat) -> Feat {
    scores.mapv(|v| sigmoid(v).clamp(SCORE_EPS, 1.0 - SCORE_EPS))
}

fn check_same_shape(what: &str, a: &Feat, b: &Feat) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::numeric(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn check_open_unit(what: &str, x: &Feat) -> Result<()> {
    if x.iter().any(|&v| v <= 0.0 || v >= 1.0 || !v.is_finite()) {
        return Err(Error::numeric(format!(
            "{what}: log-mode scores must lie strictly inside (0, 1)"
        )));
    }
    Ok(())
}

/// Two-sided adversarial value for the target domain.
///
/// Log mode consumes probability maps (strictly inside (0,1)) and returns
/// mean log D(real) + mean log(1 - D(fake)); least-squares mode consumes raw
/// score maps and returns mean (D(real) - 1)^2 + mean D(fake)^2.
pub fn adversarial_forward(d_real: &Feat, d_fake: &Feat, mode: GanMode) -> Result<f64> {
    check_same_shape("adversarial_forward", d_real, d_fake)?;
    match mode {
        GanMode::Log => {
            check_open_unit("adversarial_forward real", d_real)?;
            check_open_unit("adversarial_forward fake", d_fake)?;
            let real = d_real.mapv(f64::ln).mean().unwrap();
            let fake = d_fake.mapv(|v| (1.0 - v).ln()).mean().unwrap();
            Ok(real + fake)
        }
        GanMode::LeastSquares => {
            let real = d_real.mapv(|v| (v - 1.0) * (v - 1.0)).mean().unwrap();
            let fake = d_fake.mapv(|v| v * v).mean().unwrap();
            Ok(real + fake)
        }
    }
}

/// Sum of per-source adversarial values (same form as the forward term).
pub fn adversarial_reverse(d_reals: &[Feat], d_fakes: &[Feat], mode: GanMode) -> Result<f64> {
    if d_reals.len() != d_fakes.len() || d_reals.is_empty() {
        return Err(Error::numeric(format!(
            "adversarial_reverse: {} real maps vs {} fake maps",
            d_reals.len(),
            d_fakes.len()
        )));
    }
    let mut sum = 0.0;
    for (r, f) in d_reals.iter().zip(d_fakes) {
        sum += adversarial_forward(r, f, mode)?;
    }
    Ok(sum)
}

fn l1_mean_checked(what: &str, a: &Feat, b: &Feat) -> Result<f64> {
    check_same_shape(what, a, b)?;
    Ok((a - b).mapv(f64::abs).mean().unwrap())
}

/// Element-averaged L1 between the source-side latent and the latent
/// recovered from the translated image.
pub fn latent_consistency_forward(z_src: &Feat, z_cycle: &Feat) -> Result<f64> {
    l1_mean_checked("latent_consistency_forward", z_src, z_cycle)
}

/// Element-averaged L1 between the target-side latent and the latent
/// recovered from the reverse translations.
pub fn latent_consistency_reverse(z_tgt: &Feat, z_cycle: &Feat) -> Result<f64> {
    l1_mean_checked("latent_consistency_reverse", z_tgt, z_cycle)
}

/// Element-averaged L1 between a target image and its round trip.
pub fn cycle_reverse(t: &Feat, t_rec: &Feat) -> Result<f64> {
    l1_mean_checked("cycle_reverse", t, t_rec)
}

/// L1 between each source image and its round trip, averaged over the
/// pooled elements of all modalities (so modalities with more pixels weigh
/// proportionally more).
pub fn cycle_forward(s: &[Feat], s_rec: &[Feat]) -> Result<f64> {
    if s.len() != s_rec.len() || s.is_empty() {
        return Err(Error::numeric(format!(
            "cycle_forward: {} inputs vs {} reconstructions",
            s.len(),
            s_rec.len()
        )));
    }
    let mut abs_sum = 0.0;
    let mut n = 0usize;
    for (a, b) in s.iter().zip(s_rec) {
        check_same_shape("cycle_forward", a, b)?;
        abs_sum += (a - b).mapv(f64::abs).sum();
        n += a.len();
    }
    Ok(abs_sum / n as f64)
}

/// All objective terms of one step plus their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub adv_forward: f64,
    pub adv_reverse: f64,
    pub latent_forward: f64,
    pub latent_reverse: f64,
    pub cycle_forward: f64,
    pub cycle_reverse: f64,
    pub total: f64,
}

impl LossReport {
    /// Column names used in the per-step CSV, in serialization order.
    pub const CSV_FIELDS: [&'static str; 7] = [
        "adv_fwd", "adv_rev", "lat_fwd", "lat_rev", "cyc_fwd", "cyc_rev", "total",
    ];

    pub fn csv_values(&self) -> [f64; 7] {
        [
            self.adv_forward,
            self.adv_reverse,
            self.latent_forward,
            self.latent_reverse,
            self.cycle_forward,
            self.cycle_reverse,
            self.total,
        ]
    }
}

/// Combine the six component scalars:
/// total = adv_f + adv_r + lambda1*(cyc_rev + cyc_fwd) + lambda2*(lat_f + lat_r).
pub fn total_loss(
    adv_forward: f64,
    adv_reverse: f64,
    latent_forward: f64,
    latent_reverse: f64,
    cycle_forward: f64,
    cycle_reverse: f64,
    lambda1: f64,
    lambda2: f64,
) -> Result<LossReport> {
    let parts = [
        ("adv_forward", adv_forward),
        ("adv_reverse", adv_reverse),
        ("latent_forward", latent_forward),
        ("latent_reverse", latent_reverse),
        ("cycle_forward", cycle_forward),
        ("cycle_reverse", cycle_reverse),
    ];
    for (name, v) in parts {
        if !v.is_finite() {
            return Err(Error::numeric(format!("loss term {name} is {v}")));
        }
    }
    let total = adv_forward
        + adv_reverse
        + lambda1 * (cycle_reverse + cycle_forward)
        + lambda2 * (latent_forward + latent_reverse);
    Ok(LossReport {
        adv_forward,
        adv_reverse,
        latent_forward,
        latent_reverse,
        cycle_forward,
        cycle_reverse,
        total,
    })
}

/// Independently coded two-domain cycle-GAN objective (one source pair, one
/// target pair, two cycle terms under one weight). Kept as a deliberately
/// separate scalar-loop implementation: the n=1, lambda2=0 configuration of
/// `total_loss` must agree with it, and sharing code would make that
/// comparison vacuous.
#[allow(clippy::too_many_arguments)]
pub fn cyclegan_reference_loss(
    d_y_real: &Feat,
    d_y_fake: &Feat,
    d_x_real: &Feat,
    d_x_fake: &Feat,
    x: &Feat,
    x_rec: &Feat,
    y: &Feat,
    y_rec: &Feat,
    lambda_cyc: f64,
    mode: GanMode,
) -> f64 {
    fn adv(real: &Feat, fake: &Feat, mode: GanMode) -> f64 {
        let mut sum_r = 0.0;
        let mut n_r = 0usize;
        for &v in real.iter() {
            sum_r += match mode {
                GanMode::Log => v.ln(),
                GanMode::LeastSquares => (v - 1.0) * (v - 1.0),
            };
            n_r += 1;
        }
        let mut sum_f = 0.0;
        let mut n_f = 0usize;
        for &v in fake.iter() {
            sum_f += match mode {
                GanMode::Log => (1.0 - v).ln(),
                GanMode::LeastSquares => v * v,
            };
            n_f += 1;
        }
        sum_r / n_r as f64 + sum_f / n_f as f64
    }
    fn l1(a: &Feat, b: &Feat) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (&u, &v) in a.iter().zip(b.iter()) {
            sum += (u - v).abs();
            n += 1;
        }
        sum / n as f64
    }
    let adv_y = adv(d_y_real, d_y_fake, mode);
    let adv_x = adv(d_x_real, d_x_fake, mode);
    let cyc = l1(y, y_rec) + l1(x, x_rec);
    adv_y + adv_x + lambda_cyc * cyc
}

// ---------------------------------------------------------------------------
// Training-side losses with gradients. All take raw (pre-sigmoid) score maps.
// ---------------------------------------------------------------------------

/// Discriminator descent target for one domain, with gradients w.r.t. the
/// raw real/fake score maps. Log mode: -mean log s(real) - mean log(1 -
/// s(fake)); least-squares: mean (real-1)^2 + mean fake^2.
pub fn discriminator_loss_and_grads(real: &Feat, fake: &Feat, mode: GanMode) -> (f64, Feat, Feat) {
    let n_r = real.len() as f64;
    let n_f = fake.len() as f64;
    match mode {
        GanMode::Log => {
            let p_r = real.mapv(sigmoid);
            let p_f = fake.mapv(sigmoid);
            let loss = -p_r
                .mapv(|p| p.clamp(SCORE_EPS, 1.0 - SCORE_EPS).ln())
                .mean()
                .unwrap()
                - p_f
                    .mapv(|p| (1.0 - p).clamp(SCORE_EPS, 1.0 - SCORE_EPS).ln())
                    .mean()
                    .unwrap();
            let g_real = p_r.mapv(|p| (p - 1.0) / n_r);
            let g_fake = p_f.mapv(|p| p / n_f);
            (loss, g_real, g_fake)
        }
        GanMode::LeastSquares => {
            let loss = real.mapv(|v| (v - 1.0) * (v - 1.0)).mean().unwrap()
                + fake.mapv(|v| v * v).mean().unwrap();
            let g_real = real.mapv(|v| 2.0 * (v - 1.0) / n_r);
            let g_fake = fake.mapv(|v| 2.0 * v / n_f);
            (loss, g_real, g_fake)
        }
    }
}

/// Generator adversarial target for one fake score map, with gradient.
/// Log mode uses the non-saturating form -mean log s(fake); least-squares
/// uses mean (fake - 1)^2.
pub fn generator_adversarial_loss_and_grad(fake: &Feat, mode: GanMode) -> (f64, Feat) {
    let n = fake.len() as f64;
    match mode {
        GanMode::Log => {
            let p = fake.mapv(sigmoid);
            let loss = -p
                .mapv(|v| v.clamp(SCORE_EPS, 1.0 - SCORE_EPS).ln())
                .mean()
                .unwrap();
            let g = p.mapv(|v| (v - 1.0) / n);
            (loss, g)
        }
        GanMode::LeastSquares => {
            let loss = fake.mapv(|v| (v - 1.0) * (v - 1.0)).mean().unwrap();
            let g = fake.mapv(|v| 2.0 * (v - 1.0) / n);
            (loss, g)
        }
    }
}

fn l1_subgradient(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Element-mean L1 and its gradient w.r.t. the first argument (the gradient
/// w.r.t. the second is the negation).
pub fn l1_mean_and_grad(a: &Feat, b: &Feat) -> (f64, Feat) {
    debug_assert_eq!(a.dim(), b.dim());
    let n = a.len() as f64;
    let diff = a - b;
    let loss = diff.mapv(f64::abs).mean().unwrap();
    let grad = diff.mapv(|d| l1_subgradient(d) / n);
    (loss, grad)
}

/// Pooled element-mean L1 over modality lists, with per-modality gradients
/// w.r.t. the first list.
pub fn l1_pooled_and_grads(a: &[Feat], b: &[Feat]) -> (f64, Vec<Feat>) {
    debug_assert_eq!(a.len(), b.len());
    let n: usize = a.iter().map(|t| t.len()).sum();
    let nf = n as f64;
    let mut abs_sum = 0.0;
    let grads = a
        .iter()
        .zip(b)
        .map(|(u, v)| {
            let diff = u - v;
            abs_sum += diff.mapv(f64::abs).sum();
            diff.mapv(|d| l1_subgradient(d) / nf)
        })
        .collect();
    (abs_sum / nf, grads)
}
