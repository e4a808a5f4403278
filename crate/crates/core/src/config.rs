//! Configuration types, TOML parsing, validation, and canonical
//! serialization for resolved-config snapshots.
//!
//! A config file has three sections — `[model]`, `[train]`, `[data]` — and
//! unknown keys anywhere are a hard error so typos cannot silently fall back
//! to defaults. Validation collects every violation before failing, and
//! returns a fully resolved config in which all defaulted fields are
//! materialized; the resolved form serializes back to the same file shape so
//! snapshots are re-runnable.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ConfigIssue, Error, Result};

/// One input or output modality: a name (also the dataset directory name)
/// and its channel count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub name: String,
    pub channels: usize,
}

impl ModalitySpec {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            channels,
        }
    }
}

/// The ordered source modalities plus the target modality. Source order is
/// load-bearing: reverse-decoder `i` always emits modality `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub sources: Vec<ModalitySpec>,
    pub target: ModalitySpec,
}

impl DomainSpec {
    /// Number of source modalities (`n`).
    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }
}

/// Which adversarial objective the discriminators/generators train under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanMode {
    /// Cross-entropy objective: discriminator scores go through a sigmoid
    /// and losses are log-likelihoods.
    Log,
    /// Least-squares objective on raw scores.
    LeastSquares,
}

/// How the n source modalities are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Per-modality feature extractors fused by a convolution (the method).
    Feature,
    /// Baseline: channel-concatenate inputs, run an n=1 pipeline.
    Concat,
    /// Baseline: db4 wavelet coefficient averaging into one image, then an
    /// n=1 pipeline. Requires single-channel sources.
    WaveletDb4,
}

/// Boundary extension used by the wavelet transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletBoundary {
    /// Half-sample symmetric reflection (the default).
    Symmetric,
    /// Zero padding.
    Zero,
}

/// Fully resolved model/architecture configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub domains: DomainSpec,
    /// (height, width); both divisible by 4.
    pub image_size: (usize, usize),
    /// Filter count of the first convolution; later stages use 2x and 4x.
    pub base_width: usize,
    /// Residual blocks per extractor branch.
    pub n_res_extract: usize,
    /// Residual blocks between fusion and the latent tap.
    pub n_res_encoder: usize,
    /// Residual blocks at the head of each decoder.
    pub n_res_decoder: usize,
    /// Channel count of the shared latent code.
    pub latent_channels: usize,
    pub gan_mode: GanMode,
    pub fusion_mode: FusionMode,
    /// Decomposition depth for the wavelet fusion baseline.
    pub wavelet_levels: usize,
    pub wavelet_boundary: WaveletBoundary,
}

impl ModelConfig {
    /// Spatial shape of the latent code for this image size (two stride-2
    /// stages: H/4 x W/4).
    pub fn latent_hw(&self) -> (usize, usize) {
        (self.image_size.0 / 4, self.image_size.1 / 4)
    }

    /// Channel count at the end of each extractor branch.
    pub fn branch_width(&self) -> usize {
        4 * self.base_width
    }

    /// The domains the networks are actually built for, after applying the
    /// fusion-mode input adapter: `concat` and `wavelet_db4` collapse the
    /// sources into one synthetic modality and force n=1.
    pub fn effective_domains(&self) -> DomainSpec {
        match self.fusion_mode {
            FusionMode::Feature => self.domains.clone(),
            FusionMode::Concat => {
                let channels = self.domains.sources.iter().map(|m| m.channels).sum();
                let name = format!(
                    "concat_{}",
                    self.domains
                        .sources
                        .iter()
                        .map(|m| m.name.as_str())
                        .collect::<Vec<_>>()
                        .join("_")
                );
                DomainSpec {
                    sources: vec![ModalitySpec { name, channels }],
                    target: self.domains.target.clone(),
                }
            }
            FusionMode::WaveletDb4 => {
                let name = format!(
                    "db4fused_{}",
                    self.domains
                        .sources
                        .iter()
                        .map(|m| m.name.as_str())
                        .collect::<Vec<_>>()
                        .join("_")
                );
                DomainSpec {
                    sources: vec![ModalitySpec { name, channels: 1 }],
                    target: self.domains.target.clone(),
                }
            }
        }
    }
}

/// Fully resolved optimization configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the two cycle-consistency terms.
    pub lambda1: f64,
    /// Weight of the two latent-consistency terms.
    pub lambda2: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub epochs: usize,
    /// Epoch at which linear LR decay begins.
    pub decay_start_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Data-loading options that are not part of the domain description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub random_crop: bool,
}

/// A validated, fully materialized configuration triple.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

// ---------------------------------------------------------------------------
// Raw file shape (every field optional except the domain lists).
// ---------------------------------------------------------------------------

fn default_image_size() -> (usize, usize) {
    (256, 256)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelSection {
    image_size: Option<(usize, usize)>,
    base_width: Option<usize>,
    n_res_extract: Option<usize>,
    n_res_encoder: Option<usize>,
    n_res_decoder: Option<usize>,
    latent_channels: Option<usize>,
    gan_mode: Option<GanMode>,
    fusion_mode: Option<FusionMode>,
    wavelet_levels: Option<usize>,
    wavelet_boundary: Option<WaveletBoundary>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainSection {
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    lr_generator: Option<f64>,
    lr_discriminator: Option<f64>,
    epochs: Option<usize>,
    decay_start_epoch: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    sources: Vec<ModalitySpec>,
    target: ModalitySpec,
    #[serde(default)]
    random_crop: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    train: TrainSection,
    data: DataSection,
}

// ---------------------------------------------------------------------------
// Parsing + validation
// ---------------------------------------------------------------------------

/// Parse a config file's text. `seed_override` (from the command line) takes
/// precedence over `[train].seed`; a seed must come from one of the two.
pub fn parse_and_validate(text: &str, seed_override: Option<u64>) -> Result<ResolvedConfig> {
    let file: FileConfig = toml::from_str(text).map_err(|e| {
        Error::Config(vec![ConfigIssue {
            field: "<config>".to_string(),
            message: e.to_string(),
        }])
    })?;
    validate_file_config(&file, seed_override)
}

/// Read, parse, and validate a config file from disk.
pub fn load_config(path: &std::path::Path, seed_override: Option<u64>) -> Result<ResolvedConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_and_validate(&text, seed_override)
}

fn valid_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn validate_file_config(file: &FileConfig, seed_override: Option<u64>) -> Result<ResolvedConfig> {
    let mut issues: Vec<ConfigIssue> = Vec::new();
    let mut push = |field: &str, message: String| {
        issues.push(ConfigIssue {
            field: field.to_string(),
            message,
        });
    };

    let m = &file.model;
    let t = &file.train;
    let d = &file.data;

    let image_size = m.image_size.unwrap_or_else(default_image_size);
    let base_width = m.base_width.unwrap_or(64);
    let n_res_extract = m.n_res_extract.unwrap_or(4);
    let n_res_encoder = m.n_res_encoder.unwrap_or(4);
    let n_res_decoder = m.n_res_decoder.unwrap_or(3);
    let latent_channels = m.latent_channels.unwrap_or(256);
    let gan_mode = m.gan_mode.unwrap_or(GanMode::Log);
    let fusion_mode = m.fusion_mode.unwrap_or(FusionMode::Feature);
    let wavelet_levels = m.wavelet_levels.unwrap_or(2);
    let wavelet_boundary = m.wavelet_boundary.unwrap_or(WaveletBoundary::Symmetric);

    let lambda1 = t.lambda1.unwrap_or(10.0);
    let lambda2 = t.lambda2.unwrap_or(1.0);
    let lr_generator = t.lr_generator.unwrap_or(2e-4);
    let lr_discriminator = t.lr_discriminator.unwrap_or(1e-4);
    let epochs = t.epochs.unwrap_or(200);
    let decay_start_epoch = t.decay_start_epoch.unwrap_or(100);
    let batch_size = t.batch_size.unwrap_or(1);

    // --- domains ---
    if d.sources.is_empty() {
        push("data.sources", "at least one source modality required".into());
    }
    let mut names: Vec<&str> = Vec::new();
    for (i, src) in d.sources.iter().enumerate() {
        let field = format!("data.sources[{i}]");
        if !valid_identifier(&src.name) {
            push(
                &field,
                format!(
                    "modality name {:?} must be non-empty [A-Za-z0-9_-]",
                    src.name
                ),
            );
        }
        if names.contains(&src.name.as_str()) {
            push(&field, format!("duplicate modality name {:?}", src.name));
        }
        names.push(&src.name);
        if src.channels == 0 {
            push(&field, "channels must be >= 1".into());
        }
    }
    if !valid_identifier(&d.target.name) {
        push(
            "data.target",
            format!(
                "modality name {:?} must be non-empty [A-Za-z0-9_-]",
                d.target.name
            ),
        );
    }
    if names.contains(&d.target.name.as_str()) {
        push(
            "data.target",
            format!("target name {:?} duplicates a source name", d.target.name),
        );
    }
    if d.target.channels == 0 {
        push("data.target", "channels must be >= 1".into());
    }

    // --- model ---
    let (h, w) = image_size;
    if h % 4 != 0 || w % 4 != 0 {
        push(
            "model.image_size",
            format!("{h}x{w} not divisible by 4 (two stride-2 stages)"),
        );
    }
    if h < 8 || w < 8 {
        push("model.image_size", "each side must be >= 8".into());
    }
    if base_width == 0 {
        push("model.base_width", "must be >= 1".into());
    }
    if latent_channels == 0 {
        push("model.latent_channels", "must be >= 1".into());
    }
    if wavelet_levels == 0 {
        push("model.wavelet_levels", "must be >= 1".into());
    }
    if fusion_mode == FusionMode::WaveletDb4 {
        for src in &d.sources {
            if src.channels != 1 {
                push(
                    "model.fusion_mode",
                    format!(
                        "wavelet_db4 fusion requires single-channel sources; {:?} has {}",
                        src.name, src.channels
                    ),
                );
            }
        }
    }

    // --- train ---
    if !(lambda1 >= 0.0 && lambda1.is_finite()) {
        push("train.lambda1", "must be finite and >= 0".into());
    }
    if !(lambda2 >= 0.0 && lambda2.is_finite()) {
        push("train.lambda2", "must be finite and >= 0".into());
    }
    if !(lr_generator > 0.0 && lr_generator.is_finite()) {
        push("train.lr_generator", "must be finite and > 0".into());
    }
    if !(lr_discriminator > 0.0 && lr_discriminator.is_finite()) {
        push("train.lr_discriminator", "must be finite and > 0".into());
    }
    if epochs == 0 {
        push("train.epochs", "must be >= 1".into());
    }
    if decay_start_epoch >= epochs {
        push(
            "train.decay_start_epoch",
            format!("decay_start_epoch ({decay_start_epoch}) must be < epochs ({epochs})"),
        );
    }
    if batch_size == 0 {
        push("train.batch_size", "must be >= 1".into());
    }
    let seed = match seed_override.or(t.seed) {
        Some(s) => s,
        None => {
            push(
                "train.seed",
                "a seed is required (set [train].seed or pass --seed)".into(),
            );
            0
        }
    };

    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }

    Ok(ResolvedConfig {
        model: ModelConfig {
            domains: DomainSpec {
                sources: d.sources.clone(),
                target: d.target.clone(),
            },
            image_size,
            base_width,
            n_res_extract,
            n_res_encoder,
            n_res_decoder,
            latent_channels,
            gan_mode,
            fusion_mode,
            wavelet_levels,
            wavelet_boundary,
        },
        train: TrainConfig {
            lambda1,
            lambda2,
            lr_generator,
            lr_discriminator,
            epochs,
            decay_start_epoch,
            batch_size,
            seed,
        },
        data: DataConfig {
            random_crop: d.random_crop.unwrap_or(false),
        },
    })
}

impl ResolvedConfig {
    /// Canonical TOML snapshot with every field explicit (including the
    /// resolved seed). Parsing and validating this text reproduces `self`.
    pub fn to_toml_string(&self) -> String {
        let file = FileConfig {
            model: ModelSection {
                image_size: Some(self.model.image_size),
                base_width: Some(self.model.base_width),
                n_res_extract: Some(self.model.n_res_extract),
                n_res_encoder: Some(self.model.n_res_encoder),
                n_res_decoder: Some(self.model.n_res_decoder),
                latent_channels: Some(self.model.latent_channels),
                gan_mode: Some(self.model.gan_mode),
                fusion_mode: Some(self.model.fusion_mode),
                wavelet_levels: Some(self.model.wavelet_levels),
                wavelet_boundary: Some(self.model.wavelet_boundary),
            },
            train: TrainSection {
                lambda1: Some(self.train.lambda1),
                lambda2: Some(self.train.lambda2),
                lr_generator: Some(self.train.lr_generator),
                lr_discriminator: Some(self.train.lr_discriminator),
                epochs: Some(self.train.epochs),
                decay_start_epoch: Some(self.train.decay_start_epoch),
                batch_size: Some(self.train.batch_size),
                seed: Some(self.train.seed),
            },
            data: DataSection {
                sources: self.model.domains.sources.clone(),
                target: self.model.domains.target.clone(),
                random_crop: Some(self.data.random_crop),
            },
        };
        toml::to_string(&file).expect("resolved config serializes")
    }

    /// Hash of the full resolved config (architecture + training + data);
    /// resuming requires an exact match.
    pub fn config_hash(&self) -> String {
        sha256_hex(self.to_toml_string().as_bytes())
    }

    /// Hash of the architecture-determining parts only (`[model]` including
    /// domains); inference from a checkpoint requires this to match.
    pub fn arch_hash(&self) -> String {
        let arch =
            toml::to_string(&self.model).expect("model config serializes");
        sha256_hex(arch.as_bytes())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
