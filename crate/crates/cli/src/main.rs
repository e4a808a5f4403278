//! Command-line surface: training, inference, evaluation, ablation sweeps,
//! wavelet fusion, and toy-dataset generation.
//!
//! Every command is non-interactive, writes all artifacts under its output
//! directory, records a resolved-config (or resolved-arguments) snapshot
//! there, and exits 0 on success, 2 on configuration errors, 3 on data/io
//! errors, and 4 on numeric failures.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crossmodal_core::checkpoint::load_checkpoint;
use crossmodal_core::config::{load_config, ResolvedConfig, WaveletBoundary};
use crossmodal_core::data::{load_adapted, scan_dataset};
use crossmodal_core::error::{Error, Result};
use crossmodal_core::imageio::{load_image, save_image, to_channels, to_unit_range};
use crossmodal_core::metrics::{
    aggregate, psnr, render_metrics_csv, render_summary_markdown, ssim, ImageMetrics,
};
use crossmodal_core::toy::generate_toy_dataset;
use crossmodal_core::trainer::{run_training, translate};
use crossmodal_core::baselines::wavelet_fuse;

#[derive(Parser)]
#[command(
    name = "crossmodal",
    about = "Unpaired multi-modal image-to-image translation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file and a dataset directory.
    Train(TrainArgs),
    /// Translate one source stack through a trained checkpoint.
    Translate(TranslateArgs),
    /// Compute PSNR/SSIM between a prediction dir and a ground-truth dir.
    Evaluate(EvaluateArgs),
    /// Run the loss-term ablation presets (adv / adv-latent / full).
    Ablate(AblateArgs),
    /// Fuse single-channel images by db4 wavelet coefficient averaging.
    Fuse(FuseArgs),
    /// Generate the deterministic shape-coloring toy dataset.
    MakeToy(MakeToyArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dataset root (source/<modality>/, target/, optional ground_truth/).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints, loss CSV, and config snapshot.
    #[arg(long)]
    out: PathBuf,
    /// Random seed; overrides [train].seed. One of the two must be set.
    #[arg(long)]
    seed: Option<u64>,
    /// Resume from this checkpoint directory (config hash must match).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Save a checkpoint every K epochs (0 = final checkpoint only).
    #[arg(long, default_value_t = 1)]
    checkpoint_every: usize,
}

#[derive(clap::Args)]
struct TranslateArgs {
    /// Trained checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Source images as <modality>=<path>, repeated, in the checkpoint's
    /// modality order.
    #[arg(long = "input", value_parser = parse_named_path, required = true)]
    inputs: Vec<(String, PathBuf)>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write the reverse generator's source reconstructions.
    #[arg(long)]
    cycle: bool,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// Directory of predicted images.
    #[arg(long)]
    pred_dir: PathBuf,
    /// Directory of ground-truth images with matching filenames.
    #[arg(long)]
    gt_dir: PathBuf,
    /// Output directory for metrics.csv and metrics.md.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    /// Adversarial terms only (lambda1 = lambda2 = 0).
    Adv,
    /// Adversarial + latent consistency (lambda1 = 0).
    AdvLatent,
    /// The full objective as configured.
    Full,
}

impl Variant {
    fn dir_name(self) -> &'static str {
        match self {
            Variant::Adv => "adv",
            Variant::AdvLatent => "adv_latent",
            Variant::Full => "full",
        }
    }

    fn apply(self, mut cfg: ResolvedConfig) -> ResolvedConfig {
        match self {
            Variant::Adv => {
                cfg.train.lambda1 = 0.0;
                cfg.train.lambda2 = 0.0;
            }
            Variant::AdvLatent => cfg.train.lambda1 = 0.0,
            Variant::Full => {}
        }
        cfg
    }
}

#[derive(clap::Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output root; each variant trains into <out>/<variant>/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Run a single variant instead of all three.
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(clap::Args)]
struct FuseArgs {
    /// Input images (single-channel; RGB inputs are converted to luminance).
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Output directory; the result is named <first-stem>_db4fused.png.
    #[arg(long)]
    out: PathBuf,
    /// Decomposition depth.
    #[arg(long, default_value_t = 2)]
    levels: usize,
    /// Boundary extension: symmetric or zero.
    #[arg(long, value_enum, default_value_t = BoundaryArg::Symmetric)]
    boundary: BoundaryArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Symmetric,
    Zero,
}

impl From<BoundaryArg> for WaveletBoundary {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Symmetric => WaveletBoundary::Symmetric,
            BoundaryArg::Zero => WaveletBoundary::Zero,
        }
    }
}

#[derive(clap::Args)]
struct MakeToyArgs {
    #[arg(long)]
    out: PathBuf,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Total number of sample bundles (80/20 train/test split).
    #[arg(long, default_value_t = 80)]
    count: usize,
    #[arg(long)]
    seed: u64,
}

fn parse_named_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected <modality>=<path>, got {s:?}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Translate(a) => cmd_translate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::MakeToy(a) => cmd_make_toy(a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Record the fully resolved config in the output dir and announce it.
fn snapshot_config(out: &Path, cfg: &ResolvedConfig) -> Result<()> {
    let path = out.join("resolved_config.toml");
    write_text(&path, &cfg.to_toml_string())?;
    println!("resolved config -> {} (hash {})", path.display(), &cfg.config_hash()[..12]);
    Ok(())
}

/// Commands without a config file record their resolved arguments instead.
fn snapshot_args(out: &Path, lines: &[(&str, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in lines {
        text.push_str(&format!("{k} = {v}\n"));
    }
    let path = out.join("resolved_args.toml");
    write_text(&path, &text)?;
    println!("resolved arguments -> {}", path.display());
    Ok(())
}

fn toml_str(s: &str) -> String {
    format!("{:?}", s)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.seed)?;
    ensure_dir(&a.out)?;
    snapshot_config(&a.out, &cfg)?;
    let ds = scan_dataset(&a.data, &cfg.model.domains)?;
    println!(
        "training on {} samples ({} target images) for {} epochs",
        ds.n_train(),
        ds.target_files.len(),
        cfg.train.epochs
    );
    let outcome = run_training(&cfg, &ds, &a.out, a.resume.as_deref(), a.checkpoint_every)?;
    println!(
        "done: {} steps, loss CSV at {}, final checkpoint at {}",
        outcome.steps,
        outcome.csv_path.display(),
        outcome.final_checkpoint.display()
    );
    Ok(())
}

fn cmd_translate(a: TranslateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let cfg = &ckpt.config;
    ensure_dir(&a.out)?;
    snapshot_config(&a.out, cfg)?;

    // The provided modalities must match the checkpoint's, in order.
    let expected: Vec<&str> = cfg.model.domains.sources.iter().map(|m| m.name.as_str()).collect();
    let given: Vec<&str> = a.inputs.iter().map(|(n, _)| n.as_str()).collect();
    if given != expected {
        return Err(Error::data(format!(
            "modality mismatch: checkpoint expects inputs [{}] in that order, got [{}]",
            expected.join(", "),
            given.join(", ")
        )));
    }

    let size = cfg.model.image_size;
    let mut sources = Vec::with_capacity(a.inputs.len());
    for ((_, path), spec) in a.inputs.iter().zip(&cfg.model.domains.sources) {
        sources.push(load_adapted(path, spec.channels, size, None)?);
    }
    let tr = translate(&ckpt, &sources, a.cycle)?;

    let stem = a.inputs[0]
        .1
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("output")
        .to_string();
    let out_path = a.out.join(format!("{stem}_{}.png", cfg.model.domains.target.name));
    save_image(&out_path, &to_unit_range(&tr.output))?;
    println!("translation -> {}", out_path.display());
    if let Some(recs) = tr.reconstructions {
        for (rec, spec) in recs.iter().zip(&cfg.model.effective_domains().sources) {
            let p = a.out.join(format!("{stem}_{}_reconstructed.png", spec.name));
            save_image(&p, &to_unit_range(rec))?;
            println!("reconstruction -> {}", p.display());
        }
    }
    Ok(())
}

/// Map stem -> path for the image files directly inside `dir`.
fn stems_of(dir: &Path) -> Result<std::collections::BTreeMap<String, PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut out = std::collections::BTreeMap::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir.display().to_string(), e))?.path();
        let is_image = matches!(
            p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase),
            Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
        );
        if is_image {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), p.clone());
            }
        }
    }
    Ok(out)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let pred = stems_of(&a.pred_dir)?;
    let gt = stems_of(&a.gt_dir)?;
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::data(format!(
            "no images to evaluate (pred: {}, gt: {})",
            pred.len(),
            gt.len()
        )));
    }
    let pred_keys: BTreeSet<&String> = pred.keys().collect();
    let gt_keys: BTreeSet<&String> = gt.keys().collect();
    if pred_keys != gt_keys {
        let only_pred: Vec<&str> = pred_keys.difference(&gt_keys).map(|s| s.as_str()).collect();
        let only_gt: Vec<&str> = gt_keys.difference(&pred_keys).map(|s| s.as_str()).collect();
        return Err(Error::data(format!(
            "filename sets differ: only in predictions [{}], only in ground truth [{}]",
            only_pred.join(", "),
            only_gt.join(", ")
        )));
    }

    let mut rows = Vec::with_capacity(pred.len());
    for (stem, pred_path) in &pred {
        let x = load_image(pred_path)?;
        let y = load_image(&gt[stem])?;
        rows.push(ImageMetrics {
            name: stem.clone(),
            psnr: psnr(&x, &y)?,
            ssim: ssim(&x, &y)?,
        });
    }
    let summary = aggregate(&rows)?;

    ensure_dir(&a.report)?;
    snapshot_args(
        &a.report,
        &[
            ("command", toml_str("evaluate")),
            ("pred_dir", toml_str(&a.pred_dir.display().to_string())),
            ("gt_dir", toml_str(&a.gt_dir.display().to_string())),
        ],
    )?;
    write_text(&a.report.join("metrics.csv"), &render_metrics_csv(&rows))?;
    write_text(&a.report.join("metrics.md"), &render_summary_markdown(&summary))?;
    println!(
        "{} images: PSNR {} dB, SSIM {}",
        summary.n_images,
        crossmodal_core::metrics::format_mean_variance(summary.psnr_mean, summary.psnr_variance),
        crossmodal_core::metrics::format_mean_variance(summary.ssim_mean, summary.ssim_variance),
    );
    println!("reports -> {}", a.report.display());
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let base = load_config(&a.config, a.seed)?;
    let ds = scan_dataset(&a.data, &base.model.domains)?;
    let variants: Vec<Variant> = match a.variant {
        Some(v) => vec![v],
        None => vec![Variant::Adv, Variant::AdvLatent, Variant::Full],
    };
    for v in variants {
        let cfg = v.apply(base.clone());
        let out = a.out.join(v.dir_name());
        ensure_dir(&out)?;
        snapshot_config(&out, &cfg)?;
        println!(
            "variant {}: lambda1 = {}, lambda2 = {}",
            v.dir_name(),
            cfg.train.lambda1,
            cfg.train.lambda2
        );
        let outcome = run_training(&cfg, &ds, &out, None, a.checkpoint_every)?;
        println!("variant {} finished after {} steps", v.dir_name(), outcome.steps);
    }
    Ok(())
}

fn cmd_fuse(a: FuseArgs) -> Result<()> {
    ensure_dir(&a.out)?;
    let mut images = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        let img = load_image(path)?;
        let grey = to_channels(img, 1)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        images.push(grey);
    }
    let fused = wavelet_fuse(&images, a.levels, a.boundary.into())?;

    let stem = a.inputs[0]
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("output");
    let out_path = a.out.join(format!("{stem}_db4fused.png"));
    save_image(&out_path, &fused)?;
    snapshot_args(
        &a.out,
        &[
            ("command", toml_str("fuse")),
            (
                "inputs",
                format!(
                    "[{}]",
                    a.inputs
                        .iter()
                        .map(|p| toml_str(&p.display().to_string()))
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            ),
            ("levels", a.levels.to_string()),
            (
                "boundary",
                toml_str(match a.boundary {
                    BoundaryArg::Symmetric => "symmetric",
                    BoundaryArg::Zero => "zero",
                }),
            ),
        ],
    )?;
    println!("fused image -> {}", out_path.display());
    Ok(())
}

fn cmd_make_toy(a: MakeToyArgs) -> Result<()> {
    ensure_dir(&a.out)?;
    let summary = generate_toy_dataset(&a.out, a.size, a.count, a.seed)?;
    snapshot_args(
        &a.out,
        &[
            ("command", toml_str("make-toy")),
            ("size", a.size.to_string()),
            ("count", a.count.to_string()),
            ("seed", a.seed.to_string()),
        ],
    )?;
    println!(
        "toy dataset -> {} ({} train / {} test, {} target images)",
        a.out.display(),
        summary.n_train,
        summary.n_test,
        summary.n_targets
    );
    Ok(())
}
