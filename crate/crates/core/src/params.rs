//! Named-parameter plumbing: gradient accumulation, visitation, and Adam.
//!
//! Every trainable tensor in the crate has a stable hierarchical name
//! (e.g. `gen_fwd.ext0.c1.weight`). Networks expose their parameters as
//! flat slices through [`ParamSet`]; gradients accumulate in a [`GradStore`]
//! keyed by the same names. Both sides use ordered maps/vectors so that
//! iteration order — and therefore floating-point summation order — is
//! identical across runs.

use std::collections::BTreeMap;

/// Visitation interface over a network's named parameters. Shapes are
/// reported so checkpoints can reconstruct tensors; the data is the
/// row-major flattening.
pub trait ParamSet {
    /// Visit every parameter (name, data, shape) in a fixed order.
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64], &[usize]));
    /// Mutable variant with the same order.
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &[usize]));

    /// Total number of scalar parameters.
    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, data, _| n += data.len());
        n
    }

    /// Collect (name, shape) pairs, in visit order.
    fn param_names(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, _, shape| out.push((name.to_string(), shape.to_vec())));
        out
    }
}

/// Accumulated gradients keyed by parameter name.
#[derive(Debug, Default, Clone)]
pub struct GradStore {
    grads: BTreeMap<String, (Vec<f64>, Vec<usize>)>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add `data` into the gradient for `name`, creating it if absent.
    pub fn add(&mut self, name: &str, data: &[f64], shape: &[usize]) {
        match self.grads.get_mut(name) {
            Some((acc, s)) => {
                debug_assert_eq!(s.as_slice(), shape, "gradient shape changed for {name}");
                for (a, d) in acc.iter_mut().zip(data) {
                    *a += d;
                }
            }
            None => {
                self.grads
                    .insert(name.to_string(), (data.to_vec(), shape.to_vec()));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.grads.get(name).map(|(d, _)| d.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    /// Multiply every gradient by `s` (batch averaging).
    pub fn scale(&mut self, s: f64) {
        for (data, _) in self.grads.values_mut() {
            for v in data.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn clear(&mut self) {
        self.grads.clear();
    }

    /// Iterate (name, data, shape) in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64], &[usize])> {
        self.grads
            .iter()
            .map(|(k, (d, s))| (k.as_str(), d.as_slice(), s.as_slice()))
    }

    /// True if any gradient contains a non-finite value; returns the first
    /// offending name for diagnostics.
    pub fn first_non_finite(&self) -> Option<&str> {
        for (name, (data, _)) in &self.grads {
            if data.iter().any(|v| !v.is_finite()) {
                return Some(name);
            }
        }
        None
    }
}

/// Adam with per-parameter first/second moment estimates and bias
/// correction. One instance per network (the step counter is shared across
/// that network's parameters).
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps taken so far (bias correction uses t = step + 1).
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    /// The conventional GAN configuration: beta1 = 0.5, beta2 = 0.999.
    pub fn new() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Apply one update to every parameter that has a gradient in `grads`,
    /// using learning rate `lr`. Parameters without gradients are untouched.
    pub fn apply(&mut self, net: &mut dyn ParamSet, grads: &GradStore, lr: f64) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let moments = &mut self.moments;
        net.visit_mut(&mut |name, data, _shape| {
            let Some(g) = grads.get(name) else {
                return;
            };
            debug_assert_eq!(g.len(), data.len(), "gradient size mismatch for {name}");
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; data.len()], vec![0.0; data.len()]));
            for i in 0..data.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
    }

    /// Moment tensors for checkpointing: (name, m, v) in name order.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &[f64], &[f64])> {
        self.moments
            .iter()
            .map(|(k, (m, v))| (k.as_str(), m.as_slice(), v.as_slice()))
    }

    /// Restore moment state saved by [`Adam::moments`].
    pub fn restore(&mut self, step: u64, moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>) {
        self.step = step;
        self.moments = moments;
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}
