//! Comparison input adapters: channel concatenation and db4 wavelet
//! pixel-level fusion. Both collapse the n source modalities into a single
//! input so the rest of the pipeline runs in its n=1 configuration.

use ndarray::{concatenate, Axis};

use crate::config::WaveletBoundary;
use crate::error::{Error, Result};
use crate::ops::Feat;
use crate::wavelet::{decompose, reconstruct, WaveletPyramid};

/// Stack the sources along the channel axis, in the given order.
pub fn concat_adapter(sources: &[Feat]) -> Result<Feat> {
    if sources.is_empty() {
        return Err(Error::data("concat_adapter: no source images"));
    }
    let hw = (sources[0].dim().1, sources[0].dim().2);
    for (i, s) in sources.iter().enumerate() {
        if (s.dim().1, s.dim().2) != hw {
            return Err(Error::data(format!(
                "concat_adapter: source {} is {}x{}, source 0 is {}x{}",
                i,
                s.dim().1,
                s.dim().2,
                hw.0,
                hw.1
            )));
        }
    }
    let views: Vec<_> = sources.iter().map(|s| s.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("spatial dims checked"))
}

/// Decompose each single-channel source, average the pyramids
/// coefficient-wise, reconstruct, and clip to the [-1, 1] working range.
///
/// Averaging commutes with the linear transform, so away from clipping this
/// equals the pixel average of the inputs; the value of the routine is that
/// it follows the described coefficient-domain procedure.
pub fn wavelet_fuse(
    sources: &[Feat],
    levels: usize,
    boundary: WaveletBoundary,
) -> Result<Feat> {
    if sources.is_empty() {
        return Err(Error::data("wavelet_fuse: no source images"));
    }
    let hw = (sources[0].dim().1, sources[0].dim().2);
    let mut pyramids: Vec<WaveletPyramid> = Vec::with_capacity(sources.len());
    for (i, s) in sources.iter().enumerate() {
        if s.dim().0 != 1 {
            return Err(Error::data(format!(
                "wavelet_fuse: source {} has {} channels; fusion operates on single-channel images (convert first)",
                i,
                s.dim().0
            )));
        }
        if (s.dim().1, s.dim().2) != hw {
            return Err(Error::data(format!(
                "wavelet_fuse: source {} is {}x{}, source 0 is {}x{}",
                i,
                s.dim().1,
                s.dim().2,
                hw.0,
                hw.1
            )));
        }
        let plane = s.index_axis(Axis(0), 0).to_owned();
        pyramids.push(decompose(&plane, levels, boundary)?);
    }

    let n = pyramids.len() as f64;
    let mut fused = pyramids[0].clone();
    for p in &pyramids[1..] {
        fused.approx += &p.approx;
        for (acc, d) in fused.details.iter_mut().zip(&p.details) {
            acc.lh += &d.lh;
            acc.hl += &d.hl;
            acc.hh += &d.hh;
        }
    }
    fused.approx /= n;
    for d in &mut fused.details {
        d.lh /= n;
        d.hl /= n;
        d.hh /= n;
    }

    let plane = reconstruct(&fused).mapv(|v| v.clamp(-1.0, 1.0));
    let (h, w) = plane.dim();
    Ok(plane.into_shape_with_order((1, h, w)).expect("adds unit channel"))
}
