//! The two translation generators.
//!
//! Forward (N->1): n per-modality extractor branches -> channel concat ->
//! fusion convolution -> encoder residual blocks -> latent -> one decoder.
//! Reverse (1->N): one extractor branch -> encoder residual blocks ->
//! latent -> n independent decoders, one per source modality.
//!
//! Both generators tap their latent code after the last encoder residual
//! block; under one config the two latents share (latent_channels, H/4, W/4)
//! by construction, which is what makes the latent-consistency losses
//! well-defined. Backward passes accept an optional gradient injected at
//! the latent tap in addition to the output gradient.

use ndarray::{concatenate, Axis};

use crate::blocks::{BlockCache, ConvBlock, DeconvBlock, ResBlock, ResCache};
use crate::config::{DomainSpec, ModelConfig};
use crate::error::{Error, Result};
use crate::ops::{Activation, Feat, PadMode};
use crate::params::{GradStore, ParamSet};

/// Conv stem + residual stack shared by both generators' input sides.
/// Spatial dims shrink by 4x; channels grow 1x -> W -> 2W -> `out_width`.
#[derive(Debug, Clone)]
pub struct ExtractorBranch {
    c1: ConvBlock,
    c2: ConvBlock,
    c3: ConvBlock,
    res: Vec<ResBlock>,
}

#[derive(Debug)]
pub struct BranchCache {
    c1: BlockCache,
    c2: BlockCache,
    c3: BlockCache,
    res: Vec<ResCache>,
}

impl ExtractorBranch {
    fn init<R: rand::Rng>(
        rng: &mut R,
        name: &str,
        in_channels: usize,
        base_width: usize,
        out_width: usize,
        n_res: usize,
    ) -> Self {
        let c1 = ConvBlock::init(
            rng,
            &format!("{name}.c1"),
            in_channels,
            base_width,
            7,
            1,
            3,
            PadMode::Reflect,
            true,
            Activation::Relu,
        );
        let c2 = ConvBlock::init(
            rng,
            &format!("{name}.c2"),
            base_width,
            2 * base_width,
            3,
            2,
            1,
            PadMode::Zero,
            true,
            Activation::Relu,
        );
        let c3 = ConvBlock::init(
            rng,
            &format!("{name}.c3"),
            2 * base_width,
            out_width,
            3,
            2,
            1,
            PadMode::Zero,
            true,
            Activation::Relu,
        );
        let res = (0..n_res)
            .map(|j| ResBlock::init(rng, &format!("{name}.res{j}"), out_width))
            .collect();
        Self { c1, c2, c3, res }
    }

    fn forward(&self, x: Feat) -> (Feat, BranchCache) {
        let (y1, c1) = self.c1.forward(x);
        let (y2, c2) = self.c2.forward(y1);
        let (mut y, c3) = self.c3.forward(y2);
        let mut res_caches = Vec::with_capacity(self.res.len());
        for block in &self.res {
            let (ynext, cache) = block.forward(y);
            y = ynext;
            res_caches.push(cache);
        }
        (
            y,
            BranchCache {
                c1,
                c2,
                c3,
                res: res_caches,
            },
        )
    }

    fn backward(
        &self,
        cache: &BranchCache,
        gy: &Feat,
        mut grads: Option<&mut GradStore>,
    ) -> Feat {
        let mut g = gy.clone();
        for (block, bc) in self.res.iter().zip(cache.res.iter()).rev() {
            g = block.backward(bc, &g, grads.as_deref_mut());
        }
        let g = self.c3.backward(&cache.c3, &g, grads.as_deref_mut());
        let g = self.c2.backward(&cache.c2, &g, grads.as_deref_mut());
        self.c1.backward(&cache.c1, &g, grads)
    }
}

impl ParamSet for ExtractorBranch {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64], &[usize])) {
        self.c1.visit(f);
        self.c2.visit(f);
        self.c3.visit(f);
        for r in &self.res {
            r.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &[usize])) {
        self.c1.visit_mut(f);
        self.c2.visit_mut(f);
        self.c3.visit_mut(f);
        for r in &mut self.res {
            r.visit_mut(f);
        }
    }
}

/// Residual blocks -> two stride-2 transposed convolutions -> 7x7 output
/// convolution with tanh. Emits `out_channels` at full resolution.
#[derive(Debug, Clone)]
pub struct DecoderStack {
    res: Vec<ResBlock>,
    up1: DeconvBlock,
    up2: DeconvBlock,
    out: ConvBlock,
}

#[derive(Debug)]
pub struct DecoderCache {
    res: Vec<ResCache>,
    up1: BlockCache,
    up2: BlockCache,
    out: BlockCache,
}

impl DecoderStack {
    fn init<R: rand::Rng>(
        rng: &mut R,
        name: &str,
        latent_channels: usize,
        base_width: usize,
        out_channels: usize,
        n_res: usize,
    ) -> Self {
        let res = (0..n_res)
            .map(|j| ResBlock::init(rng, &format!("{name}.res{j}"), latent_channels))
            .collect();
        let up1 = DeconvBlock::init(
            rng,
            &format!("{name}.up1"),
            latent_channels,
            2 * base_width,
            3,
            2,
            1,
            1,
            true,
            Activation::Relu,
        );
        let up2 = DeconvBlock::init(
            rng,
            &format!("{name}.up2"),
            2 * base_width,
            base_width,
            3,
            2,
            1,
            1,
            true,
            Activation::Relu,
        );
        let out = ConvBlock::init(
            rng,
            &format!("{name}.out"),
            base_width,
            out_channels,
            7,
            1,
            3,
            PadMode::Reflect,
            false,
            Activation::Tanh,
        );
        Self { res, up1, up2, out }
    }

    fn forward(&self, latent: Feat) -> (Feat, DecoderCache) {
        let mut y = latent;
        let mut res_caches = Vec::with_capacity(self.res.len());
        for block in &self.res {
            let (ynext, cache) = block.forward(y);
            y = ynext;
            res_caches.push(cache);
        }
        let (y, up1) = self.up1.forward(y);
        let (y, up2) = self.up2.forward(y);
        let (y, out) = self.out.forward(y);
        (
            y,
            DecoderCache {
                res: res_caches,
                up1,
                up2,
                out,
            },
        )
    }

    /// Returns the gradient w.r.t. the latent input.
    fn backward(
        &self,
        cache: &DecoderCache,
        gy: &Feat,
        mut grads: Option<&mut GradStore>,
    ) -> Feat {
        let g = self.out.backward(&cache.out, gy, grads.as_deref_mut());
        let g = self.up2.backward(&cache.up2, &g, grads.as_deref_mut());
        let mut g = self.up1.backward(&cache.up1, &g, grads.as_deref_mut());
        for (block, bc) in self.res.iter().zip(cache.res.iter()).rev() {
            g = block.backward(bc, &g, grads.as_deref_mut());
        }
        g
    }
}

impl ParamSet for DecoderStack {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64], &[usize])) {
        for r in &self.res {
            r.visit(f);
        }
        self.up1.visit(f);
        self.up2.visit(f);
        self.out.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &[usize])) {
        for r in &mut self.res {
            r.visit_mut(f);
        }
        self.up1.visit_mut(f);
        self.up2.visit_mut(f);
        self.out.visit_mut(f);
    }
}

/// Output of a forward-generator pass.
pub struct ForwardPass {
    pub output: Feat,
    pub latent: Feat,
    pub cache: ForwardCache,
}

pub struct ForwardCache {
    branches: Vec<BranchCache>,
    branch_channels: Vec<usize>,
    fusion: BlockCache,
    encoder: Vec<ResCache>,
    decoder: DecoderCache,
}

/// The N->1 generator.
#[derive(Debug, Clone)]
pub struct ForwardGenerator {
    pub in_channels: Vec<usize>,
    pub out_channels: usize,
    branches: Vec<ExtractorBranch>,
    fusion: ConvBlock,
    encoder: Vec<ResBlock>,
    decoder: DecoderStack,
}

impl ForwardGenerator {
    /// Build from a validated config. `domains` is passed separately so the
    /// caller can supply fusion-adapted (effective) domains.
    pub fn init<R: rand::Rng>(rng: &mut R, domains: &DomainSpec, cfg: &ModelConfig) -> Self {
        let w = cfg.base_width;
        let branch_width = cfg.branch_width();
        let n = domains.n_sources();
        let branches: Vec<ExtractorBranch> = domains
            .sources
            .iter()
            .enumerate()
            .map(|(i, m)| {
                ExtractorBranch::init(
                    rng,
                    &format!("gen_fwd.ext{i}"),
                    m.channels,
                    w,
                    branch_width,
                    cfg.n_res_extract,
                )
            })
            .collect();
        let fusion = ConvBlock::init(
            rng,
            "gen_fwd.fuse",
            n * branch_width,
            cfg.latent_channels,
            3,
            1,
            1,
            PadMode::Zero,
            true,
            Activation::Relu,
        );
        let encoder = (0..cfg.n_res_encoder)
            .map(|j| ResBlock::init(rng, &format!("gen_fwd.enc.res{j}"), cfg.latent_channels))
            .collect();
        let decoder = DecoderStack::init(
            rng,
            "gen_fwd.dec",
            cfg.latent_channels,
            w,
            domains.target.channels,
            cfg.n_res_decoder,
        );
        Self {
            in_channels: domains.sources.iter().map(|m| m.channels).collect(),
            out_channels: domains.target.channels,
            branches,
            fusion,
            encoder,
            decoder,
        }
    }

    /// Translate n source images into one target image, exposing the latent.
    pub fn forward(&self, sources: &[Feat]) -> Result<ForwardPass> {
        if sources.len() != self.branches.len() {
            return Err(Error::data(format!(
                "forward generator expects {} source images, got {}",
                self.branches.len(),
                sources.len()
            )));
        }
        let hw = (sources[0].dim().1, sources[0].dim().2);
        for (i, (s, want)) in sources.iter().zip(&self.in_channels).enumerate() {
            if s.dim().0 != *want {
                return Err(Error::data(format!(
                    "source {} has {} channels, modality expects {} (check input order)",
                    i,
                    s.dim().0,
                    want
                )));
            }
            if (s.dim().1, s.dim().2) != hw {
                return Err(Error::data(format!(
                    "source {} is {}x{}, source 0 is {}x{}",
                    i,
                    s.dim().1,
                    s.dim().2,
                    hw.0,
                    hw.1
                )));
            }
        }

        let mut branch_outs = Vec::with_capacity(sources.len());
        let mut branch_caches = Vec::with_capacity(sources.len());
        for (branch, s) in self.branches.iter().zip(sources) {
            let (y, cache) = branch.forward(s.clone());
            branch_outs.push(y);
            branch_caches.push(cache);
        }
        let branch_channels: Vec<usize> = branch_outs.iter().map(|b| b.dim().0).collect();
        let views: Vec<_> = branch_outs.iter().map(|b| b.view()).collect();
        let fused_in = concatenate(Axis(0), &views).expect("branch dims agree");
        let (mut y, fusion_cache) = self.fusion.forward(fused_in);
        let mut enc_caches = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            let (ynext, cache) = block.forward(y);
            y = ynext;
            enc_caches.push(cache);
        }
        let latent = y.clone();
        let (output, dec_cache) = self.decoder.forward(y);
        Ok(ForwardPass {
            output,
            latent,
            cache: ForwardCache {
                branches: branch_caches,
                branch_channels,
                fusion: fusion_cache,
                encoder: enc_caches,
                decoder: dec_cache,
            },
        })
    }

    /// Back-propagate `g_output` (and an optional gradient injected at the
    /// latent tap) through the pass; returns per-source input gradients.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        g_output: &Feat,
        g_latent: Option<&Feat>,
        mut grads: Option<&mut GradStore>,
    ) -> Vec<Feat> {
        let mut g = self
            .decoder
            .backward(&cache.decoder, g_output, grads.as_deref_mut());
        if let Some(gl) = g_latent {
            g += gl;
        }
        for (block, bc) in self.encoder.iter().zip(cache.encoder.iter()).rev() {
            g = block.backward(bc, &g, grads.as_deref_mut());
        }
        let g_concat = self
            .fusion
            .backward(&cache.fusion, &g, grads.as_deref_mut());
        let mut out = Vec::with_capacity(self.branches.len());
        let mut start = 0;
        for ((branch, bc), &ch) in self
            .branches
            .iter()
            .zip(cache.branches.iter())
            .zip(cache.branch_channels.iter())
        {
            let slice = g_concat
                .slice(ndarray::s![start..start + ch, .., ..])
                .to_owned();
            out.push(branch.backward(bc, &slice, grads.as_deref_mut()));
            start += ch;
        }
        out
    }
}

impl ParamSet for ForwardGenerator {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64], &[usize])) {
        for b in &self.branches {
            b.visit(f);
        }
        self.fusion.visit(f);
        for r in &self.encoder {
            r.visit(f);
        }
        self.decoder.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &[usize])) {
        for b in &mut self.branches {
            b.visit_mut(f);
        }
        self.fusion.visit_mut(f);
        for r in &mut self.encoder {
            r.visit_mut(f);
        }
        self.decoder.visit_mut(f);
    }
}

/// Output of a reverse-generator pass.
pub struct ReversePass {
    pub outputs: Vec<Feat>,
    pub latent: Feat,
    pub cache: ReverseCache,
}

pub struct ReverseCache {
    branch: BranchCache,
    encoder: Vec<ResCache>,
    decoders: Vec<DecoderCache>,
}

/// The 1->N generator.
#[derive(Debug, Clone)]
pub struct ReverseGenerator {
    pub in_channels: usize,
    pub out_channels: Vec<usize>,
    branch: ExtractorBranch,
    encoder: Vec<ResBlock>,
    decoders: Vec<DecoderStack>,
}

impl ReverseGenerator {
    pub fn init<R: rand::Rng>(rng: &mut R, domains: &DomainSpec, cfg: &ModelConfig) -> Self {
        let w = cfg.base_width;
        // The single extractor ends directly at latent width (no fusion
        // stage on this side); with default widths this matches the forward
        // branch since latent_channels == 4 * base_width.
        let branch = ExtractorBranch::init(
            rng,
            "gen_rev.ext",
            domains.target.channels,
            w,
            cfg.latent_channels,
            cfg.n_res_extract,
        );
        let encoder = (0..cfg.n_res_encoder)
            .map(|j| ResBlock::init(rng, &format!("gen_rev.enc.res{j}"), cfg.latent_channels))
            .collect();
        let decoders = domains
            .sources
            .iter()
            .enumerate()
            .map(|(i, m)| {
                DecoderStack::init(
                    rng,
                    &format!("gen_rev.dec{i}"),
                    cfg.latent_channels,
                    w,
                    m.channels,
                    cfg.n_res_decoder,
                )
            })
            .collect();
        Self {
            in_channels: domains.target.channels,
            out_channels: domains.sources.iter().map(|m| m.channels).collect(),
            branch,
            encoder,
            decoders,
        }
    }

    /// Translate one target image into n source-modality images.
    pub fn forward(&self, target: &Feat) -> Result<ReversePass> {
        if target.dim().0 != self.in_channels {
            return Err(Error::data(format!(
                "reverse generator expects {} input channels, got {}",
                self.in_channels,
                target.dim().0
            )));
        }
        let (mut y, branch_cache) = {
            let (y, c) = self.branch.forward(target.clone());
            (y, c)
        };
        let mut enc_caches = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            let (ynext, cache) = block.forward(y);
            y = ynext;
            enc_caches.push(cache);
        }
        let latent = y;
        let mut outputs = Vec::with_capacity(self.decoders.len());
        let mut dec_caches = Vec::with_capacity(self.decoders.len());
        for dec in &self.decoders {
            let (out, cache) = dec.forward(latent.clone());
            outputs.push(out);
            dec_caches.push(cache);
        }
        Ok(ReversePass {
            outputs,
            latent,
            cache: ReverseCache {
                branch: branch_cache,
                encoder: enc_caches,
                decoders: dec_caches,
            },
        })
    }

    /// Back-propagate per-output gradients (and an optional latent-tap
    /// gradient); returns the gradient w.r.t. the target image.
    pub fn backward(
        &self,
        cache: &ReverseCache,
        g_outputs: &[Feat],
        g_latent: Option<&Feat>,
        mut grads: Option<&mut GradStore>,
    ) -> Feat {
        assert_eq!(g_outputs.len(), self.decoders.len());
        let mut g_lat: Option<Feat> = g_latent.cloned();
        for ((dec, dc), gy) in self
            .decoders
            .iter()
            .zip(cache.decoders.iter())
            .zip(g_outputs)
        {
            let g = dec.backward(dc, gy, grads.as_deref_mut());
            g_lat = Some(match g_lat {
                Some(acc) => acc + &g,
                None => g,
            });
        }
        let mut g = g_lat.expect("at least one decoder");
        for (block, bc) in self.encoder.iter().zip(cache.encoder.iter()).rev() {
            g = block.backward(bc, &g, grads.as_deref_mut());
        }
        self.branch.backward(&cache.branch, &g, grads)
    }
}

impl ParamSet for ReverseGenerator {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64], &[usize])) {
        self.branch.visit(f);
        for r in &self.encoder {
            r.visit(f);
        }
        for d in &self.decoders {
            d.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &[usize])) {
        self.branch.visit_mut(f);
        for r in &mut self.encoder {
            r.visit_mut(f);
        }
        for d in &mut self.decoders {
            d.visit_mut(f);
        }
    }
}

/// Both generators, updated jointly by one optimizer. Parameter names are
/// disjoint (`gen_fwd.*` / `gen_rev.*`).
#[derive(Debug, Clone)]
pub struct Generators {
    pub fwd: ForwardGenerator,
    pub rev: ReverseGenerator,
}

impl Generators {
    pub fn init<R: rand::Rng>(rng: &mut R, domains: &DomainSpec, cfg: &ModelConfig) -> Self {
        let fwd = ForwardGenerator::init(rng, domains, cfg);
        let rev = ReverseGenerator::init(rng, domains, cfg);
        Self { fwd, rev }
    }
}

impl ParamSet for Generators {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64], &[usize])) {
        self.fwd.visit(f);
        self.rev.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &[usize])) {
        self.fwd.visit_mut(f);
        self.rev.visit_mut(f);
    }
}
