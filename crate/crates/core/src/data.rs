//! Unpaired multi-modal dataset handling.
//!
//! Source modalities are mutually paired by sample id; the target pool is a
//! separate, unpaired set. Layout on disk:
//!
//! ```text
//! root/source/<modality_name>/<sample_id>.(png|jpg)
//! root/target/<target_id>.(png|jpg)
//! root/ground_truth/<sample_id>.(png|jpg)   # optional, evaluation only
//! root/split.txt                            # lines: "<sample_id> train|test"
//! ```
//!
//! Without `split.txt` every sample is a training sample; with it, every
//! sample must be assigned exactly once.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::DomainSpec;
use crate::error::{Error, Result};
use crate::imageio::{load_image, resize_bilinear, to_channels, to_signed_range};
use crate::ops::Feat;
use crate::rng::{epoch_rng, shuffled_indices, Stream};

/// Immutable index of a scanned dataset.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    /// Modality names in declaration order, for error messages.
    pub modalities: Vec<String>,
    /// All sample ids, sorted.
    pub sample_ids: Vec<String>,
    /// sample id -> one file per modality, in declaration order.
    source_files: BTreeMap<String, Vec<PathBuf>>,
    /// (target id, file), sorted by id.
    pub target_files: Vec<(String, PathBuf)>,
    /// Optional per-sample ground-truth target images.
    pub ground_truth: BTreeMap<String, PathBuf>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// One training draw: the paired source stack plus an independently drawn
/// target image. All tensors are resized to the configured size and mapped
/// to [-1, 1].
#[derive(Debug, Clone)]
pub struct SampleBundle {
    pub sources: Vec<Feat>,
    pub target: Feat,
    pub sample_id: String,
    pub target_id: String,
}

fn is_image_ext(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
    )
}

/// Map stem -> path for every image file directly inside `dir`.
fn index_dir(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = entry.path();
        if !path.is_file() || !is_image_ext(&path) {
            continue;
        }
        let stem = match path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s.to_string(),
            None => continue,
        };
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::data(format!(
                "ambiguous id '{stem}': both {} and {} exist",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

fn parse_split(path: &Path, sample_ids: &[String]) -> Result<(Vec<String>, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut assignment: BTreeMap<String, bool> = BTreeMap::new(); // true = train
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (id, tag) = match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(tag), None) => (id, tag),
            _ => {
                return Err(Error::data(format!(
                    "split.txt line {}: expected '<id> train|test', got '{line}'",
                    lineno + 1
                )))
            }
        };
        let is_train = match tag {
            "train" => true,
            "test" => false,
            other => {
                return Err(Error::data(format!(
                    "split.txt line {}: unknown tag '{other}'",
                    lineno + 1
                )))
            }
        };
        if !sample_ids.iter().any(|s| s == id) {
            return Err(Error::data(format!(
                "split.txt line {}: id '{id}' is not in the source index",
                lineno + 1
            )));
        }
        if assignment.insert(id.to_string(), is_train).is_some() {
            return Err(Error::data(format!(
                "split.txt line {}: id '{id}' assigned twice",
                lineno + 1
            )));
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for id in sample_ids {
        match assignment.get(id) {
            Some(true) => train.push(id.clone()),
            Some(false) => test.push(id.clone()),
            None => {
                return Err(Error::data(format!(
                    "split.txt exists but does not assign id '{id}'"
                )))
            }
        }
    }
    Ok((train, test))
}

/// Build the complete index for `root` under the declared modalities.
pub fn scan_dataset(root: &Path, domains: &DomainSpec) -> Result<DatasetIndex> {
    let mut per_modality = Vec::with_capacity(domains.n_sources());
    for m in &domains.sources {
        let dir = root.join("source").join(&m.name);
        if !dir.is_dir() {
            return Err(Error::data(format!(
                "missing modality directory {}",
                dir.display()
            )));
        }
        per_modality.push(index_dir(&dir)?);
    }

    // The id universe is the union; every modality must cover all of it.
    let mut sample_ids: Vec<String> = per_modality
        .iter()
        .flat_map(|m| m.keys().cloned())
        .collect();
    sample_ids.sort();
    sample_ids.dedup();
    if sample_ids.is_empty() {
        return Err(Error::data(format!(
            "no source samples found under {}",
            root.join("source").display()
        )));
    }
    let mut source_files = BTreeMap::new();
    for id in &sample_ids {
        let mut files = Vec::with_capacity(per_modality.len());
        for (m, index) in domains.sources.iter().zip(&per_modality) {
            match index.get(id) {
                Some(p) => files.push(p.clone()),
                None => {
                    return Err(Error::data(format!(
                        "sample '{id}' is missing modality '{}'",
                        m.name
                    )))
                }
            }
        }
        source_files.insert(id.clone(), files);
    }

    let target_dir = root.join("target");
    if !target_dir.is_dir() {
        return Err(Error::data(format!(
            "missing target directory {}",
            target_dir.display()
        )));
    }
    let target_files: Vec<(String, PathBuf)> = index_dir(&target_dir)?.into_iter().collect();
    if target_files.is_empty() {
        return Err(Error::data(format!(
            "target pool {} is empty",
            target_dir.display()
        )));
    }

    let gt_dir = root.join("ground_truth");
    let ground_truth = if gt_dir.is_dir() {
        index_dir(&gt_dir)?
    } else {
        BTreeMap::new()
    };

    let split_path = root.join("split.txt");
    let (train_ids, test_ids) = if split_path.is_file() {
        parse_split(&split_path, &sample_ids)?
    } else {
        (sample_ids.clone(), Vec::new())
    };

    Ok(DatasetIndex {
        root: root.to_path_buf(),
        modalities: domains.sources.iter().map(|m| m.name.clone()).collect(),
        sample_ids,
        source_files,
        target_files,
        ground_truth,
        train_ids,
        test_ids,
    })
}

/// The draw order of one epoch: (sample_id, target_id) pairs. Sources are a
/// permutation of the train split; targets come from an independently
/// shuffled pool, reused round-robin when the pool is smaller.
pub fn epoch_plan(ds: &DatasetIndex, seed: u64, epoch: usize) -> Vec<(String, String)> {
    let mut src_rng = epoch_rng(seed, Stream::SourceOrder, epoch);
    let mut tgt_rng = epoch_rng(seed, Stream::TargetOrder, epoch);
    let src_order = shuffled_indices(&mut src_rng, ds.train_ids.len());
    let tgt_order = shuffled_indices(&mut tgt_rng, ds.target_files.len());
    src_order
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let t = tgt_order[i % tgt_order.len()];
            (ds.train_ids[s].clone(), ds.target_files[t].0.clone())
        })
        .collect()
}

/// Extra margin used before a random crop (an eighth of the target size).
fn crop_pad(len: usize) -> usize {
    (len / 8).max(2)
}

/// Load one image ready for the networks: adapt to `channels`, resize to
/// `size` (plus jittered crop when a crop rng is given), map to [-1, 1].
pub fn load_adapted(
    path: &Path,
    channels: usize,
    size: (usize, usize),
    crop: Option<&mut ChaCha8Rng>,
) -> Result<Feat> {
    let raw = load_image(path)?;
    let img = to_channels(raw, channels)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let (h, w) = size;
    let out = match crop {
        None => resize_bilinear(&img, h, w),
        Some(rng) => {
            let (ph, pw) = (h + crop_pad(h), w + crop_pad(w));
            let padded = resize_bilinear(&img, ph, pw);
            let oy = rng.gen_range(0..=(ph - h));
            let ox = rng.gen_range(0..=(pw - w));
            padded
                .slice(ndarray::s![.., oy..oy + h, ox..ox + w])
                .to_owned()
        }
    };
    Ok(to_signed_range(&out))
}

impl DatasetIndex {
    pub fn n_train(&self) -> usize {
        self.train_ids.len()
    }

    /// Load the paired source stack for `sample_id`. With crop jitter all
    /// modalities share one offset so they stay pixel-aligned.
    pub fn load_sources(
        &self,
        domains: &DomainSpec,
        size: (usize, usize),
        sample_id: &str,
        mut crop: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<Feat>> {
        let files = self.source_files.get(sample_id).ok_or_else(|| {
            Error::data(format!("unknown sample id '{sample_id}'"))
        })?;
        // One shared offset: draw it once by cloning the rng state per
        // modality after advancing the parent exactly once.
        let shared: Option<ChaCha8Rng> = crop.as_deref_mut().map(|rng| {
            let snapshot = rng.clone();
            // advance the parent so successive bundles differ
            let _ = rng.gen::<u64>();
            snapshot
        });
        let mut out = Vec::with_capacity(files.len());
        for (m, path) in domains.sources.iter().zip(files) {
            let mut local = shared.clone();
            out.push(load_adapted(path, m.channels, size, local.as_mut())?);
        }
        Ok(out)
    }

    /// Load one target image by id.
    pub fn load_target(
        &self,
        domains: &DomainSpec,
        size: (usize, usize),
        target_id: &str,
        crop: Option<&mut ChaCha8Rng>,
    ) -> Result<Feat> {
        let path = self
            .target_files
            .iter()
            .find(|(id, _)| id == target_id)
            .map(|(_, p)| p.clone())
            .ok_or_else(|| Error::data(format!("unknown target id '{target_id}'")))?;
        load_adapted(&path, domains.target.channels, size, crop)
    }

    /// Load the ground-truth target paired with `sample_id` (evaluation
    /// only; errors when absent).
    pub fn load_ground_truth(
        &self,
        domains: &DomainSpec,
        size: (usize, usize),
        sample_id: &str,
    ) -> Result<Feat> {
        let path = self.ground_truth.get(sample_id).ok_or_else(|| {
            Error::data(format!("no ground-truth image for sample '{sample_id}'"))
        })?;
        load_adapted(path, domains.target.channels, size, None)
    }

    /// Assemble the bundle for one epoch-plan entry.
    pub fn load_bundle(
        &self,
        domains: &DomainSpec,
        size: (usize, usize),
        sample_id: &str,
        target_id: &str,
        mut crop: Option<&mut ChaCha8Rng>,
    ) -> Result<SampleBundle> {
        let sources = self.load_sources(domains, size, sample_id, crop.as_deref_mut())?;
        let target = self.load_target(domains, size, target_id, crop)?;
        Ok(SampleBundle {
            sources,
            target,
            sample_id: sample_id.to_string(),
            target_id: target_id.to_string(),
        })
    }
}
