//! The optimization loop: alternating discriminator/generator Adam updates
//! under the cumulative objective, the linear learning-rate schedule,
//! per-step CSV logging, and epoch checkpointing.
//!
//! Each step updates all n+1 discriminators first, on fakes detached from
//! the generator graph, then updates both generators jointly on the full
//! objective (adversarial generator targets plus weighted cycle and latent
//! terms). Reported loss values are computed after the discriminator update
//! so the CSV reflects the objective the generators were optimized against.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::baselines::{concat_adapter, wavelet_fuse};
use crate::checkpoint::{
    load_checkpoint_matching, save_checkpoint, CheckpointMeta, LoadedCheckpoint,
};
use crate::config::{FusionMode, GanMode, ResolvedConfig};
use crate::data::{epoch_plan, DatasetIndex, SampleBundle};
use crate::discriminator::DiscriminatorBank;
use crate::error::{Error, Result};
use crate::generator::{ForwardPass, Generators, ReversePass};
use crate::losses::{
    adversarial_forward, adversarial_reverse, cycle_forward, cycle_reverse,
    discriminator_loss_and_grads, generator_adversarial_loss_and_grad,
    latent_consistency_forward, latent_consistency_reverse, l1_mean_and_grad,
    l1_pooled_and_grads, to_probabilities, total_loss, LossReport,
};
use crate::ops::Feat;
use crate::params::{Adam, GradStore};
use crate::rng::{epoch_rng, stream_rng, Stream};

/// The linear decay schedule: constant at `base` before `decay_start`, then
/// scaled by (epochs - e)/(epochs - decay_start), reaching
/// base/(epochs - decay_start) at the final epoch.
pub fn lr_at_epoch(base: f64, epochs: usize, decay_start: usize, epoch: usize) -> f64 {
    let remaining = (epochs - epoch) as f64;
    let window = (epochs - decay_start) as f64;
    base * (remaining / window).min(1.0)
}

/// Everything that evolves during training.
pub struct TrainState {
    pub config: ResolvedConfig,
    pub generators: Generators,
    pub discriminators: DiscriminatorBank,
    pub opt_gen: Adam,
    pub opt_disc: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimization steps.
    pub step: u64,
    /// Current learning rates, set from the schedule at each epoch boundary.
    pub lr_gen: f64,
    pub lr_disc: f64,
}

impl TrainState {
    /// Freshly initialized networks, all weights drawn from the seed's
    /// weight-init stream.
    pub fn new(config: ResolvedConfig) -> Self {
        let mut rng = stream_rng(config.train.seed, Stream::WeightInit);
        let eff = config.model.effective_domains();
        let generators = Generators::init(&mut rng, &eff, &config.model);
        let discriminators = DiscriminatorBank::init(&mut rng, &eff, config.model.base_width);
        let lr_gen = config.train.lr_generator;
        let lr_disc = config.train.lr_discriminator;
        Self {
            config,
            generators,
            discriminators,
            opt_gen: Adam::new(),
            opt_disc: Adam::new(),
            epoch: 0,
            step: 0,
            lr_gen,
            lr_disc,
        }
    }

    /// Continue from a loaded checkpoint.
    pub fn from_checkpoint(ckpt: LoadedCheckpoint) -> Self {
        let lr_gen = ckpt.config.train.lr_generator;
        let lr_disc = ckpt.config.train.lr_discriminator;
        Self {
            config: ckpt.config,
            generators: ckpt.generators,
            discriminators: ckpt.discriminators,
            opt_gen: ckpt.opt_gen,
            opt_disc: ckpt.opt_disc,
            epoch: ckpt.meta.epoch,
            step: ckpt.meta.step,
            lr_gen,
            lr_disc,
        }
    }

    /// Apply the fusion-mode input adapter: `feature` passes sources
    /// through unchanged, the baselines collapse them into one stack.
    pub fn adapt_sources(&self, raw: &[Feat]) -> Result<Vec<Feat>> {
        adapt_sources(&self.config, raw)
    }

    /// One optimization step on a single bundle (batch 1).
    pub fn train_step(&mut self, bundle: &SampleBundle) -> Result<LossReport> {
        self.train_step_batch(std::slice::from_ref(bundle))
    }

    /// One optimization step over a mini-batch: discriminators update on the
    /// batch-averaged gradient first, then both generators.
    pub fn train_step_batch(&mut self, bundles: &[SampleBundle]) -> Result<LossReport> {
        assert!(!bundles.is_empty(), "empty batch");
        let mode = self.config.model.gan_mode;
        let l1w = self.config.train.lambda1;
        let l2w = self.config.train.lambda2;
        let scale = 1.0 / bundles.len() as f64;

        // ---- Discriminator phase: score reals and detached fakes.
        let mut passes: Vec<(Vec<Feat>, ForwardPass, ReversePass)> =
            Vec::with_capacity(bundles.len());
        let mut d_grads = GradStore::new();
        for bundle in bundles {
            let sources = self.adapt_sources(&bundle.sources)?;
            let fwd = self.generators.fwd.forward(&sources)?;
            let rev = self.generators.rev.forward(&bundle.target)?;

            let (s_real, c_real) = self.discriminators.target.forward(bundle.target.clone());
            let (s_fake, c_fake) = self.discriminators.target.forward(fwd.output.clone());
            let (_, g_real, g_fake) = discriminator_loss_and_grads(&s_real, &s_fake, mode);
            self.discriminators
                .target
                .backward(&c_real, &g_real, Some(&mut d_grads));
            self.discriminators
                .target
                .backward(&c_fake, &g_fake, Some(&mut d_grads));
            for (i, disc) in self.discriminators.sources.iter().enumerate() {
                let (s_real, c_real) = disc.forward(sources[i].clone());
                let (s_fake, c_fake) = disc.forward(rev.outputs[i].clone());
                let (_, g_real, g_fake) = discriminator_loss_and_grads(&s_real, &s_fake, mode);
                disc.backward(&c_real, &g_real, Some(&mut d_grads));
                disc.backward(&c_fake, &g_fake, Some(&mut d_grads));
            }
            passes.push((sources, fwd, rev));
        }
        d_grads.scale(scale);
        if let Some(name) = d_grads.first_non_finite() {
            return Err(Error::numeric(format!(
                "non-finite discriminator gradient for {name} at step {}",
                self.step + 1
            )));
        }
        self.opt_disc
            .apply(&mut self.discriminators, &d_grads, self.lr_disc);

        // ---- Generator phase, against the updated discriminators.
        let mut g_grads = GradStore::new();
        let mut sums = [0.0f64; 6];
        for ((sources, fwd, rev), bundle) in passes.iter().zip(bundles) {
            let target = &bundle.target;
            // Adversarial pull on the fake target; discriminator parameters
            // receive no gradient here (grads: None).
            let (s_fake_t, c_fake_t) = self.discriminators.target.forward(fwd.output.clone());
            let (_, g_scores) = generator_adversarial_loss_and_grad(&s_fake_t, mode);
            let mut g_fake_t = self
                .discriminators
                .target
                .backward(&c_fake_t, &g_scores, None);

            let mut s_fake_srcs = Vec::with_capacity(sources.len());
            let mut g_fake_srcs: Vec<Feat> = Vec::with_capacity(sources.len());
            for (i, disc) in self.discriminators.sources.iter().enumerate() {
                let (s_fake, c_fake) = disc.forward(rev.outputs[i].clone());
                let (_, g_scores) = generator_adversarial_loss_and_grad(&s_fake, mode);
                g_fake_srcs.push(disc.backward(&c_fake, &g_scores, None));
                s_fake_srcs.push(s_fake);
            }

            // Cycle passes: reverse the fake target, re-translate the fake
            // sources. Skipped entirely when both weights are zero.
            let cycles: Option<(ReversePass, ForwardPass)> = if l1w > 0.0 || l2w > 0.0 {
                let back = self.generators.rev.forward(&fwd.output)?;
                let re = self.generators.fwd.forward(&rev.outputs)?;

                if l2w > 0.0 {
                    sums[2] += latent_consistency_forward(&fwd.latent, &back.latent)?;
                    sums[3] += latent_consistency_reverse(&rev.latent, &re.latent)?;
                }
                if l1w > 0.0 {
                    sums[4] += cycle_forward(sources, &back.outputs)?;
                    sums[5] += cycle_reverse(target, &re.output)?;
                }

                // Reconstruction pass backward: pixel gradients weighted by
                // lambda1, latent-tap gradients by lambda2.
                let g_outs: Vec<Feat> = if l1w > 0.0 {
                    let (_, gs) = l1_pooled_and_grads(&back.outputs, sources);
                    gs.into_iter().map(|g| g * l1w).collect()
                } else {
                    back.outputs.iter().map(|o| Array3::zeros(o.dim())).collect()
                };
                let g_lat =
                    (l2w > 0.0).then(|| l1_mean_and_grad(&back.latent, &fwd.latent).1 * l2w);
                let g_from_back = self.generators.rev.backward(
                    &back.cache,
                    &g_outs,
                    g_lat.as_ref(),
                    Some(&mut g_grads),
                );
                g_fake_t += &g_from_back;

                let g_out = if l1w > 0.0 {
                    l1_mean_and_grad(&re.output, target).1 * l1w
                } else {
                    Array3::zeros(re.output.dim())
                };
                let g_lat =
                    (l2w > 0.0).then(|| l1_mean_and_grad(&re.latent, &rev.latent).1 * l2w);
                let g_from_re = self.generators.fwd.backward(
                    &re.cache,
                    &g_out,
                    g_lat.as_ref(),
                    Some(&mut g_grads),
                );
                for (dst, src) in g_fake_srcs.iter_mut().zip(&g_from_re) {
                    *dst += src;
                }
                Some((back, re))
            } else {
                None
            };

            // Original passes backward, closing the latent-consistency pair.
            let g_lat_fwd = cycles.as_ref().and_then(|(back, _)| {
                (l2w > 0.0).then(|| l1_mean_and_grad(&fwd.latent, &back.latent).1 * l2w)
            });
            self.generators
                .fwd
                .backward(&fwd.cache, &g_fake_t, g_lat_fwd.as_ref(), Some(&mut g_grads));
            let g_lat_rev = cycles.as_ref().and_then(|(_, re)| {
                (l2w > 0.0).then(|| l1_mean_and_grad(&rev.latent, &re.latent).1 * l2w)
            });
            self.generators.rev.backward(
                &rev.cache,
                &g_fake_srcs,
                g_lat_rev.as_ref(),
                Some(&mut g_grads),
            );

            // Reported adversarial values, post-discriminator-update.
            let s_real_t = self.discriminators.target.forward(target.clone()).0;
            let s_real_srcs: Vec<Feat> = self
                .discriminators
                .sources
                .iter()
                .zip(sources)
                .map(|(d, s)| d.forward(s.clone()).0)
                .collect();
            let (adv_f, adv_r) = match mode {
                GanMode::Log => {
                    let p = to_probabilities;
                    let reals: Vec<Feat> = s_real_srcs.iter().map(p).collect();
                    let fakes: Vec<Feat> = s_fake_srcs.iter().map(p).collect();
                    (
                        adversarial_forward(&p(&s_real_t), &p(&s_fake_t), mode)?,
                        adversarial_reverse(&reals, &fakes, mode)?,
                    )
                }
                GanMode::LeastSquares => (
                    adversarial_forward(&s_real_t, &s_fake_t, mode)?,
                    adversarial_reverse(&s_real_srcs, &s_fake_srcs, mode)?,
                ),
            };
            sums[0] += adv_f;
            sums[1] += adv_r;
        }
        g_grads.scale(scale);
        if let Some(name) = g_grads.first_non_finite() {
            return Err(Error::numeric(format!(
                "non-finite generator gradient for {name} at step {}",
                self.step + 1
            )));
        }
        self.opt_gen
            .apply(&mut self.generators, &g_grads, self.lr_gen);

        self.step += 1;
        for s in &mut sums {
            *s *= scale;
        }
        total_loss(
            sums[0], sums[1], sums[2], sums[3], sums[4], sums[5], l1w, l2w,
        )
    }
}

/// Collapse raw source stacks according to the fusion mode.
pub fn adapt_sources(config: &ResolvedConfig, raw: &[Feat]) -> Result<Vec<Feat>> {
    match config.model.fusion_mode {
        FusionMode::Feature => Ok(raw.to_vec()),
        FusionMode::Concat => Ok(vec![concat_adapter(raw)?]),
        FusionMode::WaveletDb4 => Ok(vec![wavelet_fuse(
            raw,
            config.model.wavelet_levels,
            config.model.wavelet_boundary,
        )?]),
    }
}

/// What a completed training run produced.
#[derive(Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    pub epochs: usize,
    pub csv_path: PathBuf,
    pub final_checkpoint: PathBuf,
}

/// Train for the configured number of epochs, writing a per-step loss CSV,
/// periodic epoch checkpoints, and a final checkpoint under `out_dir`.
pub fn run_training(
    config: &ResolvedConfig,
    ds: &DatasetIndex,
    out_dir: &Path,
    resume: Option<&Path>,
    checkpoint_every: usize,
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut state = match resume {
        Some(dir) => TrainState::from_checkpoint(load_checkpoint_matching(dir, config)?),
        None => TrainState::new(config.clone()),
    };
    if ds.n_train() == 0 {
        return Err(Error::data("dataset has no training samples"));
    }

    let csv_path = out_dir.join("loss.csv");
    let mut csv = open_csv(&csv_path, state.epoch > 0)?;

    let t = &config.train;
    let size = config.model.image_size;
    let start_epoch = state.epoch;
    for epoch in start_epoch..t.epochs {
        state.lr_gen = lr_at_epoch(t.lr_generator, t.epochs, t.decay_start_epoch, epoch);
        state.lr_disc = lr_at_epoch(t.lr_discriminator, t.epochs, t.decay_start_epoch, epoch);
        let plan = epoch_plan(ds, t.seed, epoch);
        let mut crop_rng = config
            .data
            .random_crop
            .then(|| epoch_rng(t.seed, Stream::CropJitter, epoch));

        for chunk in plan.chunks(t.batch_size) {
            let mut bundles = Vec::with_capacity(chunk.len());
            for (sample_id, target_id) in chunk {
                bundles.push(ds.load_bundle(
                    &config.model.domains,
                    size,
                    sample_id,
                    target_id,
                    crop_rng.as_mut(),
                )?);
            }
            let report = state.train_step_batch(&bundles)?;
            write_csv_row(&mut csv, state.step, epoch, &report, state.lr_gen, state.lr_disc)
                .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
        }
        csv.flush()
            .map_err(|e| Error::io(csv_path.display().to_string(), e))?;

        state.epoch = epoch + 1;
        if checkpoint_every > 0 && (epoch + 1) % checkpoint_every == 0 {
            let dir = out_dir.join(format!("checkpoints/epoch_{:04}", epoch + 1));
            save_state(&dir, &state)?;
        }
    }

    let final_dir = out_dir.join("checkpoint_final");
    save_state(&final_dir, &state)?;
    Ok(TrainOutcome {
        steps: state.step,
        epochs: state.epoch,
        csv_path,
        final_checkpoint: final_dir,
    })
}

fn save_state(dir: &Path, state: &TrainState) -> Result<()> {
    save_checkpoint(
        dir,
        &state.config,
        CheckpointMeta {
            epoch: state.epoch,
            step: state.step,
        },
        &state.generators,
        &state.discriminators,
        &state.opt_gen,
        &state.opt_disc,
    )
}

fn open_csv(path: &Path, append: bool) -> Result<std::io::BufWriter<std::fs::File>> {
    let ioerr = |e| Error::io(path.display().to_string(), e);
    if append && path.exists() {
        let f = std::fs::OpenOptions::new().append(true).open(path).map_err(ioerr)?;
        return Ok(std::io::BufWriter::new(f));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(ioerr)?);
    writeln!(f, "step,epoch,{},lr_g,lr_d", LossReport::CSV_FIELDS.join(","))
        .map_err(ioerr)?;
    Ok(f)
}

fn write_csv_row(
    w: &mut impl std::io::Write,
    step: u64,
    epoch: usize,
    report: &LossReport,
    lr_g: f64,
    lr_d: f64,
) -> std::io::Result<()> {
    let v = report.csv_values();
    writeln!(
        w,
        "{step},{epoch},{},{},{},{},{},{},{},{lr_g},{lr_d}",
        v[0], v[1], v[2], v[3], v[4], v[5], v[6]
    )
}

/// Inference result: the translated target and, when requested, the reverse
/// generator's per-modality reconstructions of the sources.
pub struct Translation {
    pub output: Feat,
    pub reconstructions: Option<Vec<Feat>>,
}

/// Run the forward generator on one source stack (raw, pre-fusion). With
/// `cycle`, also map the translation back through the reverse generator.
pub fn translate(ckpt: &LoadedCheckpoint, raw_sources: &[Feat], cycle: bool) -> Result<Translation> {
    let sources = adapt_sources(&ckpt.config, raw_sources)?;
    let fwd = ckpt.generators.fwd.forward(&sources)?;
    let reconstructions = if cycle {
        Some(ckpt.generators.rev.forward(&fwd.output)?.outputs)
    } else {
        None
    };
    Ok(Translation {
        output: fwd.output,
        reconstructions,
    })
}
