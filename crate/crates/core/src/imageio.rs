//! PNG/JPEG decoding and encoding, channel adaptation, bilinear resizing,
//! and the [0,1] <-> [-1,1] range maps. All pixel math is f64; files are
//! 8-bit, so a save/load round trip moves values by at most one quantization
//! step.

use std::path::Path;

use image::{DynamicImage, ImageReader};
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::ops::Feat;

/// Decode an image to f64 planes in [0,1]. Grayscale files load as 1
/// channel, color files as 3 (alpha is dropped).
pub fn load_image(path: &Path) -> Result<Feat> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let img = reader
        .decode()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    Ok(match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma8();
            let (w, h) = g.dimensions();
            Array3::from_shape_fn((1, h as usize, w as usize), |(_, i, j)| {
                g.get_pixel(j as u32, i as u32)[0] as f64 / 255.0
            })
        }
        _ => {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            Array3::from_shape_fn((3, h as usize, w as usize), |(c, i, j)| {
                rgb.get_pixel(j as u32, i as u32)[c] as f64 / 255.0
            })
        }
    })
}

/// Rec. 601 luminance: Y = 0.299 R + 0.587 G + 0.114 B. Range-preserving.
pub fn derive_grayscale(rgb: &Feat) -> Result<Feat> {
    if rgb.dim().0 != 3 {
        return Err(Error::data(format!(
            "derive_grayscale expects 3 channels, got {}",
            rgb.dim().0
        )));
    }
    let (_, h, w) = rgb.dim();
    Ok(Array3::from_shape_fn((1, h, w), |(_, i, j)| {
        0.299 * rgb[(0, i, j)] + 0.587 * rgb[(1, i, j)] + 0.114 * rgb[(2, i, j)]
    }))
}

/// Adapt a loaded image to the channel count a modality declares.
/// 3 -> 1 uses the luminance map; any other mismatch is an error.
pub fn to_channels(img: Feat, want: usize) -> Result<Feat> {
    let have = img.dim().0;
    if have == want {
        Ok(img)
    } else if have == 3 && want == 1 {
        derive_grayscale(&img)
    } else {
        Err(Error::data(format!(
            "image has {have} channels but the modality declares {want}"
        )))
    }
}

/// Bilinear resize with the pixel-center convention
/// (src = (dst + 0.5) * scale - 0.5, edges clamped).
pub fn resize_bilinear(img: &Feat, out_h: usize, out_w: usize) -> Feat {
    let (c, h, w) = img.dim();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Array3::zeros((c, out_h, out_w));
    for oi in 0..out_h {
        let fy = ((oi as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for oj in 0..out_w {
            let fx = ((oj as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let top = img[(ch, y0, x0)] * (1.0 - wx) + img[(ch, y0, x1)] * wx;
                let bot = img[(ch, y1, x0)] * (1.0 - wx) + img[(ch, y1, x1)] * wx;
                out[(ch, oi, oj)] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

/// [0,1] -> [-1,1] (the network working range).
pub fn to_signed_range(img: &Feat) -> Feat {
    img.mapv(|v| 2.0 * v - 1.0)
}

/// [-1,1] -> [0,1], clamped.
pub fn to_unit_range(img: &Feat) -> Feat {
    img.mapv(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// Encode a [0,1] image as an 8-bit PNG/JPEG (format from the extension).
/// 1-channel images save as grayscale, 3-channel as RGB.
pub fn save_image(path: &Path, img: &Feat) -> Result<()> {
    let (c, h, w) = img.dim();
    let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (buf, color): (Vec<u8>, image::ExtendedColorType) = match c {
        1 => (
            img.iter().map(|&v| quant(v)).collect(),
            image::ExtendedColorType::L8,
        ),
        3 => {
            let mut buf = Vec::with_capacity(3 * h * w);
            for i in 0..h {
                for j in 0..w {
                    for ch in 0..3 {
                        buf.push(quant(img[(ch, i, j)]));
                    }
                }
            }
            (buf, image::ExtendedColorType::Rgb8)
        }
        other => {
            return Err(Error::data(format!(
                "save_image supports 1 or 3 channels, got {other}"
            )))
        }
    };
    image::save_buffer(path, &buf, w as u32, h as u32, color).map_err(|e| {
        Error::data(format!("failed to encode {}: {e}", path.display()))
    })
}
