//! Unsupervised multi-modal image-to-image translation.
//!
//! Given `n` mutually paired source-modality images and an unpaired pool of
//! target-domain images, this crate trains a forward N->1 generator and a
//! reverse 1->N generator with n+1 patch discriminators under adversarial,
//! latent-consistency, and cycle-consistency objectives, evaluates
//! translations with PSNR/SSIM, and provides channel-concatenation and
//! db4-wavelet fusion baselines.
//!
//! All numerics are `f64`, single-threaded, and deterministic: a master
//! seed fully determines weight initialization, data order, and therefore
//! every loss value and checkpoint byte.

pub mod baselines;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod ops;
pub mod params;
pub mod rng;
pub mod toy;
pub mod trainer;
pub mod wavelet;

pub use config::{
    DataConfig, DomainSpec, FusionMode, GanMode, ModalitySpec, ModelConfig, ResolvedConfig,
    TrainConfig, WaveletBoundary,
};
pub use error::{Error, Result};
