//! Deterministic synthetic dataset for desk-scale end-to-end runs.
//!
//! Each sample is one geometric shape (circle, square, or triangle) at a
//! jittered position and scale. Modality `mask` is the filled silhouette,
//! modality `edges` is a band along its boundary, and the target domain renders
//! the same geometry filled with a color keyed to the shape class. The
//! target training pool is drawn independently (unpaired); pixel-aligned
//! ground truth is written for test ids only.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::config::{DomainSpec, ModalitySpec};
use crate::error::{Error, Result};
use crate::imageio::save_image;
use crate::ops::Feat;
use crate::rng::{stream_rng, Stream};

/// Shape classes, in class-index order.
pub const TOY_CLASS_NAMES: [&str; 3] = ["circle", "square", "triangle"];

/// Published class -> fill color table (RGB in [0,1]).
pub const TOY_COLOR_TABLE: [[f64; 3]; 3] = [
    [0.85, 0.15, 0.15], // circle
    [0.15, 0.85, 0.15], // square
    [0.15, 0.25, 0.90], // triangle
];

/// The modality layout every toy dataset uses.
pub fn toy_domains() -> DomainSpec {
    DomainSpec {
        sources: vec![ModalitySpec::new("mask", 1), ModalitySpec::new("edges", 1)],
        target: ModalitySpec::new("rgb", 3),
    }
}

/// What `generate_toy_dataset` wrote.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToySummary {
    pub n_train: usize,
    pub n_test: usize,
    pub n_targets: usize,
}

struct ShapeDraw {
    class: usize,
    cx: f64,
    cy: f64,
    r: f64,
}

fn draw_shape(rng: &mut impl Rng, size: usize) -> ShapeDraw {
    let s = size as f64;
    let class = rng.gen_range(0..TOY_CLASS_NAMES.len());
    let cx = s / 2.0 + rng.gen_range(-0.10..0.10) * s;
    let cy = s / 2.0 + rng.gen_range(-0.10..0.10) * s;
    let r = rng.gen_range(0.18..0.30) * s;
    ShapeDraw { class, cx, cy, r }
}

fn render_mask(size: usize, d: &ShapeDraw) -> Array2<f64> {
    Array2::from_shape_fn((size, size), |(i, j)| {
        let y = i as f64 + 0.5 - d.cy;
        let x = j as f64 + 0.5 - d.cx;
        let inside = match d.class {
            0 => x * x + y * y <= d.r * d.r,
            1 => x.abs() <= 0.9 * d.r && y.abs() <= 0.9 * d.r,
            _ => {
                // Upward triangle: apex (0, -r), base corners (+-r, 0.8 r).
                let ax = 0.0;
                let ay = -d.r;
                let bx = -d.r;
                let by = 0.8 * d.r;
                let cxv = d.r;
                let cyv = 0.8 * d.r;
                let sign = |x1: f64, y1: f64, x2: f64, y2: f64| -> f64 {
                    (x - x2) * (y1 - y2) - (x1 - x2) * (y - y2)
                };
                let d1 = sign(ax, ay, bx, by);
                let d2 = sign(bx, by, cxv, cyv);
                let d3 = sign(cxv, cyv, ax, ay);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
        };
        if inside {
            1.0
        } else {
            0.0
        }
    })
}

/// One-pixel boundary: mask pixels with at least one 4-neighbor outside.
/// Width of the boundary band in the `edges` modality. Two pixels keeps the
/// band visible to an encoder/decoder that works at quarter resolution; a
/// one-pixel line is mostly erased by the two downsamplings.
const EDGE_BAND: usize = 2;

fn edge_of(mask: &Array2<f64>) -> Array2<f64> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        if mask[(i, j)] == 0.0 {
            return 0.0;
        }
        // Inside pixel within EDGE_BAND (Chebyshev) of the outside or of the
        // image border.
        let d = EDGE_BAND as isize;
        for di in -d..=d {
            for dj in -d..=d {
                let ii = i as isize + di;
                let jj = j as isize + dj;
                if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                    return 1.0;
                }
                if mask[(ii as usize, jj as usize)] == 0.0 {
                    return 1.0;
                }
            }
        }
        0.0
    })
}

fn colored(mask: &Array2<f64>, class: usize) -> Feat {
    let (h, w) = mask.dim();
    let rgb = TOY_COLOR_TABLE[class];
    Array3::from_shape_fn((3, h, w), |(c, i, j)| mask[(i, j)] * rgb[c])
}

fn plane(img: Array2<f64>) -> Feat {
    let (h, w) = img.dim();
    img.into_shape_with_order((1, h, w)).expect("adds channel axis")
}

/// Generate `count` sample bundles plus an equally sized independent target
/// pool under the standard dataset layout. An 80/20 train/test split is
/// written to split.txt; ground truth is stored for the test ids.
pub fn generate_toy_dataset(
    out: &Path,
    size: usize,
    count: usize,
    seed: u64,
) -> Result<ToySummary> {
    if size < 16 {
        return Err(Error::data("toy images must be at least 16x16"));
    }
    if count < 2 {
        return Err(Error::data("toy dataset needs at least 2 samples"));
    }
    let mkdir = |p: &Path| {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p.display().to_string(), e))
    };
    let dirs = [
        out.join("source").join("mask"),
        out.join("source").join("edges"),
        out.join("target"),
        out.join("ground_truth"),
    ];
    for d in &dirs {
        mkdir(d)?;
    }

    let n_test = count / 5;
    let n_train = count - n_test;
    let mut rng = stream_rng(seed, Stream::ToyData);

    let width = count.to_string().len().max(3);
    let mut split = String::new();
    for i in 0..count {
        let id = format!("s{i:0width$}");
        let d = draw_shape(&mut rng, size);
        let mask = render_mask(size, &d);
        let edges = edge_of(&mask);
        let is_test = i >= n_train;
        save_image(
            &out.join("source/mask").join(format!("{id}.png")),
            &plane(mask.clone()),
        )?;
        save_image(
            &out.join("source/edges").join(format!("{id}.png")),
            &plane(edges),
        )?;
        if is_test {
            save_image(
                &out.join("ground_truth").join(format!("{id}.png")),
                &colored(&mask, d.class),
            )?;
        }
        split.push_str(&format!(
            "{id} {}\n",
            if is_test { "test" } else { "train" }
        ));
    }

    // Independent target pool: fresh draws from the same stream.
    for i in 0..count {
        let tid = format!("t{i:0width$}");
        let d = draw_shape(&mut rng, size);
        let mask = render_mask(size, &d);
        save_image(
            &out.join("target").join(format!("{tid}.png")),
            &colored(&mask, d.class),
        )?;
    }

    let split_path = out.join("split.txt");
    std::fs::write(&split_path, split)
        .map_err(|e| Error::io(split_path.display().to_string(), e))?;

    Ok(ToySummary {
        n_train,
        n_test,
        n_targets: count,
    })
}
