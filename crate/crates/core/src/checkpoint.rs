//! Checkpoint serialization: a manifest plus one binary blob per parameter.
//!
//! A checkpoint is a directory:
//!
//! ```text
//! <dir>/
//!   manifest.toml     metadata: hashes, epoch/step, gan mode, modality order
//!   config.toml       the resolved config snapshot the run was built from
//!   params/gen/       one .bin tensor blob per generator parameter
//!   params/disc/      one .bin tensor blob per discriminator parameter
//!   opt/gen/, opt/disc/   Adam moment tensors (<name>.m.bin, <name>.v.bin)
//! ```
//!
//! Tensor blobs are `TNSR` | version u32 | ndim u32 | dims u64xN | f64 LE
//! data. Loading rebuilds the networks from the embedded config, verifies the
//! config hash recorded in the manifest, and requires an exact bijection
//! between stored blobs and network parameters.

use std::collections::BTreeMap;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{parse_and_validate, GanMode, ResolvedConfig};
use crate::discriminator::DiscriminatorBank;
use crate::error::{Error, Result};
use crate::generator::Generators;
use crate::params::{Adam, ParamSet};
use crate::rng::{stream_rng, Stream};

const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
const TENSOR_VERSION: u32 = 1;
const MANIFEST_VERSION: u32 = 1;

/// Progress counters stored with a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimization steps.
    pub step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    epoch: usize,
    step: u64,
    config_hash: String,
    arch_hash: String,
    gan_mode: GanMode,
    /// Source modality names in network order, then the target name.
    modalities: Vec<String>,
    opt_gen_step: u64,
    opt_disc_step: u64,
}

fn write_tensor(path: &Path, data: &[f64], shape: &[usize]) -> Result<()> {
    let n: usize = shape.iter().product();
    debug_assert_eq!(n, data.len(), "shape/data mismatch for {}", path.display());
    let mut buf = Vec::with_capacity(4 + 8 + 8 * shape.len() + 8 * data.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_tensor(path: &Path) -> Result<(Vec<f64>, Vec<usize>)> {
    let ioerr = |e| Error::io(path.display().to_string(), e);
    let corrupt = |what: &str| Error::data(format!("corrupt tensor blob {}: {what}", path.display()));
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(ioerr)?
        .read_to_end(&mut bytes)
        .map_err(ioerr)?;
    if bytes.len() < 12 || &bytes[0..4] != TENSOR_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let ndim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = 12 + 8 * ndim;
    if bytes.len() < header {
        return Err(corrupt("truncated header"));
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 12 + 8 * i;
        shape.push(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize);
    }
    let n: usize = shape.iter().product();
    if bytes.len() != header + 8 * n {
        return Err(corrupt("payload size does not match dims"));
    }
    let data = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((data, shape))
}

fn save_params(dir: &Path, net: &dyn ParamSet) -> Result<()> {
    let mut result = Ok(());
    net.visit(&mut |name, data, shape| {
        if result.is_ok() {
            result = write_tensor(&dir.join(format!("{name}.bin")), data, shape);
        }
    });
    result
}

/// Overwrite every parameter of `net` from blobs in `dir`, requiring an
/// exact bijection between files and parameter names.
fn load_params(dir: &Path, net: &mut dyn ParamSet) -> Result<()> {
    let mut result = Ok(());
    let mut loaded = 0usize;
    net.visit_mut(&mut |name, data, shape| {
        if result.is_err() {
            return;
        }
        let path = dir.join(format!("{name}.bin"));
        match read_tensor(&path) {
            Ok((blob, blob_shape)) => {
                if blob_shape != shape {
                    result = Err(Error::data(format!(
                        "checkpoint tensor {name} has shape {blob_shape:?}, network expects {shape:?}"
                    )));
                    return;
                }
                data.copy_from_slice(&blob);
                loaded += 1;
            }
            Err(e) => result = Err(e),
        }
    });
    result?;
    let on_disk = list_bin_files(dir)?;
    if on_disk.len() != loaded {
        return Err(Error::data(format!(
            "checkpoint {} holds {} tensor blobs but the network has {} parameters",
            dir.display(),
            on_disk.len(),
            loaded
        )));
    }
    Ok(())
}

fn list_bin_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let p = entry.path();
        if p.extension().is_some_and(|e| e == "bin") {
            out.push(p);
        }
    }
    Ok(out)
}

fn save_moments(dir: &Path, opt: &Adam) -> Result<()> {
    for (name, m, v) in opt.moments() {
        write_tensor(&dir.join(format!("{name}.m.bin")), m, &[m.len()])?;
        write_tensor(&dir.join(format!("{name}.v.bin")), v, &[v.len()])?;
    }
    Ok(())
}

fn load_moments(dir: &Path, step: u64) -> Result<Adam> {
    let mut moments: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for path in list_bin_files(dir)? {
        let file = path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let (kind, name) = if let Some(n) = file.strip_suffix(".m.bin") {
            ('m', n.to_string())
        } else if let Some(n) = file.strip_suffix(".v.bin") {
            ('v', n.to_string())
        } else {
            return Err(Error::data(format!(
                "unexpected file in optimizer state dir: {}",
                path.display()
            )));
        };
        let (data, _) = read_tensor(&path)?;
        let slot = moments.entry(name).or_default();
        if kind == 'm' {
            slot.0 = data;
        } else {
            slot.1 = data;
        }
    }
    for (name, (m, v)) in &moments {
        if m.is_empty() != v.is_empty() || m.len() != v.len() {
            return Err(Error::data(format!(
                "optimizer state for {name} is incomplete in {}",
                dir.display()
            )));
        }
    }
    let mut opt = Adam::new();
    opt.restore(step, moments);
    Ok(opt)
}

/// Write a complete training snapshot into `dir` (created if needed).
pub fn save_checkpoint(
    dir: &Path,
    cfg: &ResolvedConfig,
    meta: CheckpointMeta,
    generators: &Generators,
    discriminators: &DiscriminatorBank,
    opt_gen: &Adam,
    opt_disc: &Adam,
) -> Result<()> {
    let mkdir = |p: &Path| {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p.display().to_string(), e))
    };
    let gen_dir = dir.join("params/gen");
    let disc_dir = dir.join("params/disc");
    let opt_gen_dir = dir.join("opt/gen");
    let opt_disc_dir = dir.join("opt/disc");
    for d in [&gen_dir, &disc_dir, &opt_gen_dir, &opt_disc_dir] {
        mkdir(d)?;
    }

    let mut modalities: Vec<String> = cfg
        .model
        .effective_domains()
        .sources
        .iter()
        .map(|m| m.name.clone())
        .collect();
    modalities.push(cfg.model.domains.target.name.clone());
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        epoch: meta.epoch,
        step: meta.step,
        config_hash: cfg.config_hash(),
        arch_hash: cfg.arch_hash(),
        gan_mode: cfg.model.gan_mode,
        modalities,
        opt_gen_step: opt_gen.step,
        opt_disc_step: opt_disc.step,
    };
    let manifest_text =
        toml::to_string(&manifest).expect("manifest serializes");
    let write = |rel: &str, text: &str| {
        let p = dir.join(rel);
        std::fs::write(&p, text).map_err(|e| Error::io(p.display().to_string(), e))
    };
    write("manifest.toml", &manifest_text)?;
    write("config.toml", &cfg.to_toml_string())?;

    save_params(&gen_dir, generators)?;
    save_params(&disc_dir, discriminators)?;
    save_moments(&opt_gen_dir, opt_gen)?;
    save_moments(&opt_disc_dir, opt_disc)?;
    Ok(())
}

/// A checkpoint fully materialized in memory.
#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub config: ResolvedConfig,
    pub meta: CheckpointMeta,
    pub generators: Generators,
    pub discriminators: DiscriminatorBank,
    pub opt_gen: Adam,
    pub opt_disc: Adam,
}

/// Load a checkpoint directory, verifying the manifest's config hash against
/// the embedded config snapshot.
pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let read = |rel: &str| -> Result<String> {
        let p = dir.join(rel);
        std::fs::read_to_string(&p).map_err(|e| Error::io(p.display().to_string(), e))
    };
    let manifest: Manifest = toml::from_str(&read("manifest.toml")?)
        .map_err(|e| Error::data(format!("corrupt checkpoint manifest: {e}")))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint format version {}",
            manifest.format_version
        )));
    }
    let config = parse_and_validate(&read("config.toml")?, None)?;
    if config.config_hash() != manifest.config_hash {
        return Err(Error::numeric(format!(
            "checkpoint {} fails its config-hash check: the embedded config does not match the manifest",
            dir.display()
        )));
    }
    if config.model.gan_mode != manifest.gan_mode {
        return Err(Error::data(
            "checkpoint manifest gan_mode disagrees with the embedded config",
        ));
    }

    // Rebuild networks at the right shapes; weights are overwritten below.
    let eff = config.model.effective_domains();
    let mut init_rng = stream_rng(0, Stream::WeightInit);
    let mut generators = Generators::init(&mut init_rng, &eff, &config.model);
    let mut discriminators = DiscriminatorBank::init(&mut init_rng, &eff, config.model.base_width);
    load_params(&dir.join("params/gen"), &mut generators)?;
    load_params(&dir.join("params/disc"), &mut discriminators)?;
    let opt_gen = load_moments(&dir.join("opt/gen"), manifest.opt_gen_step)?;
    let opt_disc = load_moments(&dir.join("opt/disc"), manifest.opt_disc_step)?;

    Ok(LoadedCheckpoint {
        config,
        meta: CheckpointMeta {
            epoch: manifest.epoch,
            step: manifest.step,
        },
        generators,
        discriminators,
        opt_gen,
        opt_disc,
    })
}

/// Load a checkpoint and require that it was produced by exactly `expect`
/// (full config hash) — the resume precondition.
pub fn load_checkpoint_matching(dir: &Path, expect: &ResolvedConfig) -> Result<LoadedCheckpoint> {
    let ckpt = load_checkpoint(dir)?;
    if ckpt.config.config_hash() != expect.config_hash() {
        return Err(Error::numeric(format!(
            "checkpoint {} was trained under a different configuration (config hash mismatch)",
            dir.display()
        )));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::GradStore;

    fn toy_config() -> ResolvedConfig {
        parse_and_validate(
            r#"
                [model]
                image_size = [16, 16]
                base_width = 4
                n_res_extract = 1
                n_res_encoder = 1
                n_res_decoder = 1
                latent_channels = 8

                [train]
                seed = 5

                [data]
                sources = [{ name = "m0", channels = 1 }, { name = "m1", channels = 1 }]
                target = { name = "t", channels = 3 }
            "#,
            None,
        )
        .unwrap()
    }

    fn build(cfg: &ResolvedConfig) -> (Generators, DiscriminatorBank) {
        let mut rng = stream_rng(cfg.train.seed, Stream::WeightInit);
        let eff = cfg.model.effective_domains();
        let gens = Generators::init(&mut rng, &eff, &cfg.model);
        let bank = DiscriminatorBank::init(&mut rng, &eff, cfg.model.base_width);
        (gens, bank)
    }

    fn collect(net: &dyn ParamSet) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        net.visit(&mut |name, data, _| out.push((name.to_string(), data.to_vec())));
        out
    }

    #[test]
    fn tensor_blob_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("t.bin");
        let data = vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE, 1e300];
        write_tensor(&path, &data, &[5]).unwrap();
        let (back, shape) = read_tensor(&path).unwrap();
        assert_eq!(back, data);
        assert_eq!(shape, vec![5]);
        // Corruption is detected.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_tensor(&path).is_err());
    }

    #[test]
    fn checkpoint_round_trip_restores_everything() {
        let cfg = toy_config();
        let (mut gens, mut bank) = build(&cfg);
        // Give the optimizers non-trivial state.
        let mut opt_g = Adam::new();
        let mut opt_d = Adam::new();
        let mut grads = GradStore::new();
        gens.visit(&mut |name, data, shape| {
            grads.add(name, &vec![0.01; data.len()], shape);
        });
        opt_g.apply(&mut gens, &grads, 1e-3);
        let mut dgrads = GradStore::new();
        bank.visit(&mut |name, data, shape| {
            dgrads.add(name, &vec![0.02; data.len()], shape);
        });
        opt_d.apply(&mut bank, &dgrads, 1e-3);

        let tmp = tempfile::tempdir().unwrap();
        let meta = CheckpointMeta { epoch: 3, step: 42 };
        save_checkpoint(tmp.path(), &cfg, meta, &gens, &bank, &opt_g, &opt_d).unwrap();
        let ckpt = load_checkpoint(tmp.path()).unwrap();

        assert_eq!(ckpt.meta, meta);
        assert_eq!(ckpt.config, cfg);
        assert_eq!(collect(&gens), collect(&ckpt.generators));
        assert_eq!(collect(&bank), collect(&ckpt.discriminators));
        assert_eq!(ckpt.opt_gen.step, opt_g.step);
        assert_eq!(ckpt.opt_disc.step, opt_d.step);
        let saved: Vec<_> = opt_g.moments().map(|(n, m, v)| (n.to_string(), m.to_vec(), v.to_vec())).collect();
        let loaded: Vec<_> = ckpt.opt_gen.moments().map(|(n, m, v)| (n.to_string(), m.to_vec(), v.to_vec())).collect();
        assert_eq!(saved, loaded);
    }

    #[test]
    fn config_hash_mismatch_is_rejected() {
        let cfg = toy_config();
        let (gens, bank) = build(&cfg);
        let tmp = tempfile::tempdir().unwrap();
        save_checkpoint(
            tmp.path(),
            &cfg,
            CheckpointMeta { epoch: 0, step: 0 },
            &gens,
            &bank,
            &Adam::new(),
            &Adam::new(),
        )
        .unwrap();

        // Resume under a different config must fail.
        let mut other = cfg.clone();
        other.train.lambda1 = 3.0;
        let err = load_checkpoint_matching(tmp.path(), &other).unwrap_err();
        assert!(err.to_string().contains("config hash mismatch"), "{err}");
        assert!(load_checkpoint_matching(tmp.path(), &cfg).is_ok());

        // Tampering with the embedded config breaks the manifest check.
        let cfg_path = tmp.path().join("config.toml");
        let text = std::fs::read_to_string(&cfg_path).unwrap();
        std::fs::write(&cfg_path, text.replace("lambda1 = 10.0", "lambda1 = 9.0")).unwrap();
        assert!(load_checkpoint(tmp.path()).is_err());
    }

    #[test]
    fn missing_parameter_blob_is_detected() {
        let cfg = toy_config();
        let (gens, bank) = build(&cfg);
        let tmp = tempfile::tempdir().unwrap();
        save_checkpoint(
            tmp.path(),
            &cfg,
            CheckpointMeta { epoch: 0, step: 0 },
            &gens,
            &bank,
            &Adam::new(),
            &Adam::new(),
        )
        .unwrap();
        std::fs::remove_file(tmp.path().join("params/gen/gen_fwd.fuse.weight.bin")).unwrap();
        assert!(load_checkpoint(tmp.path()).is_err());
    }

    #[test]
    fn manifest_lists_modalities_in_order() {
        let cfg = toy_config();
        let (gens, bank) = build(&cfg);
        let tmp = tempfile::tempdir().unwrap();
        save_checkpoint(
            tmp.path(),
            &cfg,
            CheckpointMeta { epoch: 0, step: 0 },
            &gens,
            &bank,
            &Adam::new(),
            &Adam::new(),
        )
        .unwrap();
        let manifest: Manifest =
            toml::from_str(&std::fs::read_to_string(tmp.path().join("manifest.toml")).unwrap())
                .unwrap();
        assert_eq!(manifest.modalities, vec!["m0", "m1", "t"]);
        assert_eq!(manifest.config_hash, cfg.config_hash());
        assert_eq!(manifest.arch_hash, cfg.arch_hash());
    }
}
