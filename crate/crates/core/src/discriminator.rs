//! Patch discriminators: five 4x4 convolutions producing a score map whose
//! entries each judge one overlapping image patch. One discriminator guards
//! the target domain and one guards each source modality.

use crate::blocks::{BlockCache, ConvBlock};
use crate::config::DomainSpec;
use crate::ops::{Activation, Feat, PadMode};
use crate::params::{GradStore, ParamSet};

/// Score maps are raw (pre-sigmoid); the loss decides how to read them.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    layers: Vec<ConvBlock>,
}

pub struct DiscCache {
    layers: Vec<BlockCache>,
}

impl PatchDiscriminator {
    /// Layout: C->W (s2, no norm) -> 2W (s2) -> 4W (s2) -> 8W (s1) -> 1 (s1),
    /// all 4x4 zero-padded by 1, LeakyReLU(0.2) everywhere but the last.
    pub fn init<R: rand::Rng>(rng: &mut R, name: &str, in_channels: usize, width: usize) -> Self {
        let lrelu = Activation::LeakyRelu(0.2);
        let spec: [(usize, usize, usize, bool, Activation); 5] = [
            (in_channels, width, 2, false, lrelu),
            (width, 2 * width, 2, true, lrelu),
            (2 * width, 4 * width, 2, true, lrelu),
            (4 * width, 8 * width, 1, true, lrelu),
            (8 * width, 1, 1, false, Activation::None),
        ];
        let layers = spec
            .iter()
            .enumerate()
            .map(|(i, &(c_in, c_out, stride, norm, act))| {
                ConvBlock::init(
                    rng,
                    &format!("{name}.c{}", i + 1),
                    c_in,
                    c_out,
                    4,
                    stride,
                    1,
                    PadMode::Zero,
                    norm,
                    act,
                )
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, x: Feat) -> (Feat, DiscCache) {
        let mut y = x;
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (ynext, cache) = layer.forward(y);
            y = ynext;
            caches.push(cache);
        }
        (y, DiscCache { layers: caches })
    }

    /// Returns the gradient w.r.t. the input image.
    pub fn backward(
        &self,
        cache: &DiscCache,
        g_scores: &Feat,
        mut grads: Option<&mut GradStore>,
    ) -> Feat {
        let mut g = g_scores.clone();
        for (layer, lc) in self.layers.iter().zip(cache.layers.iter()).rev() {
            g = layer.backward(lc, &g, grads.as_deref_mut());
        }
        g
    }

    /// Closed-form score-map size for an (h, w) input: three stride-2 halvings
    /// then two stride-1 steps that each shave one pixel.
    pub fn score_map_hw(h: usize, w: usize) -> (usize, usize) {
        let f = |mut len: usize| {
            for _ in 0..3 {
                len = len / 2; // conv_out_len(len, 4, 2, 1)
            }
            len - 1 - 1 // two stride-1 4x4 convs with pad 1
        };
        (f(h), f(w))
    }
}

impl ParamSet for PatchDiscriminator {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64], &[usize])) {
        for l in &self.layers {
            l.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &[usize])) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}

/// One discriminator per domain: target first, then each source modality in
/// declaration order. All share one optimizer.
#[derive(Debug, Clone)]
pub struct DiscriminatorBank {
    pub target: PatchDiscriminator,
    pub sources: Vec<PatchDiscriminator>,
}

impl DiscriminatorBank {
    pub fn init<R: rand::Rng>(rng: &mut R, domains: &DomainSpec, width: usize) -> Self {
        let target = PatchDiscriminator::init(rng, "disc_t", domains.target.channels, width);
        let sources = domains
            .sources
            .iter()
            .enumerate()
            .map(|(i, m)| PatchDiscriminator::init(rng, &format!("disc_s{i}"), m.channels, width))
            .collect();
        Self { target, sources }
    }
}

impl ParamSet for DiscriminatorBank {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64], &[usize])) {
        self.target.visit(f);
        for d in &self.sources {
            d.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &[usize])) {
        self.target.visit_mut(f);
        for d in &mut self.sources {
            d.visit_mut(f);
        }
    }
}
