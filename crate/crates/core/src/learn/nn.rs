//! Dense ReLU networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector, layer by layer, each layer stored as a
//! row-major `out × in` weight matrix followed by its bias. Hidden layers use
//! ReLU; the output layer is linear and the caller applies its own head.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Post-activation values of every layer from one forward pass, input first.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], Vec::as_slice)
    }

    /// Activation of the last hidden layer (the input for a network without
    /// hidden layers).
    pub fn penultimate(&self) -> &[f64] {
        &self.acts[self.acts.len() - 2]
    }
}

impl Mlp {
    /// He-initialized weights, zero biases.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let n = param_count(sizes);
        let mut params = Vec::with_capacity(n);
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            params.extend((0..fan_in * fan_out).map(|_| normal.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("bad layer sizes {sizes:?}")));
        }
        if params.len() != param_count(&sizes) {
            return Err(invalid(format!(
                "layer sizes {sizes:?} need {} parameters, got {}",
                param_count(&sizes),
                params.len()
            )));
        }
        Ok(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Zeroes the output layer so the network initially emits zeros.
    pub fn zero_output_layer(&mut self) {
        let (start, _) = self.layer_range(self.sizes.len() - 2);
        self.params[start..].iter_mut().for_each(|p| *p = 0.0);
    }

    /// Zeroes the output rows `rows` of the last layer.
    pub fn zero_output_rows(&mut self, rows: std::ops::Range<usize>) {
        let layer = self.sizes.len() - 2;
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let (start, _) = self.layer_range(layer);
        for r in rows {
            self.params[start + r * fan_in..start + (r + 1) * fan_in].iter_mut().for_each(|p| *p = 0.0);
            self.params[start + fan_out * fan_in + r] = 0.0;
        }
    }

    /// `(weights_start, bias_start)` offsets of layer `l`.
    fn layer_range(&self, l: usize) -> (usize, usize) {
        let start: usize = self.sizes.windows(2).take(l).map(|p| p[0] * p[1] + p[1]).sum();
        (start, start + self.sizes[l] * self.sizes[l + 1])
    }

    pub fn forward(&self, input: &[f64], cache: &mut Cache) -> Result<()> {
        if input.len() != self.input_size() {
            return Err(invalid(format!("expected {} inputs, got {}", self.input_size(), input.len())));
        }
        let layers = self.sizes.len() - 1;
        cache.acts.resize_with(layers + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let (prev, rest) = cache.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let out = &mut rest[0];
            out.clear();
            let hidden = l + 1 < layers;
            for (row, bias) in w.chunks_exact(fan_in).zip(b) {
                let z = dot(row, x) + bias;
                out.push(if hidden { z.max(0.0) } else { z });
            }
        }
        Ok(())
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = Cache::default();
        self.forward(input, &mut cache)?;
        Ok(cache.output().to_vec())
    }

    /// Back-propagates `grad_out` (dL/d output) and optionally an extra
    /// gradient on the penultimate activation. Parameter gradients are added
    /// into `grads` when given; input gradients are written to `grad_input`
    /// when given.
    pub fn backward(
        &self,
        cache: &Cache,
        grad_out: &[f64],
        grad_penultimate: Option<&[f64]>,
        mut grads: Option<&mut [f64]>,
        grad_input: Option<&mut [f64]>,
    ) {
        let layers = self.sizes.len() - 1;
        let mut delta = grad_out.to_vec();
        let mut next = Vec::new();
        for l in (0..layers).rev() {
            let fan_in = self.sizes[l];
            let (w_start, b_start) = self.layer_range(l);
            let x = &cache.acts[l];
            if let Some(g) = grads.as_deref_mut() {
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        let row = &mut g[w_start + o * fan_in..w_start + (o + 1) * fan_in];
                        for (gi, xi) in row.iter_mut().zip(x) {
                            *gi += d * xi;
                        }
                        g[b_start + o] += d;
                    }
                }
            }
            if l == 0 && grad_input.is_none() {
                break;
            }
            next.clear();
            next.resize(fan_in, 0.0);
            let w = &self.params[w_start..b_start];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (ni, wi) in next.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *ni += d * wi;
                    }
                }
            }
            if l == layers - 1 {
                if let Some(extra) = grad_penultimate {
                    for (ni, e) in next.iter_mut().zip(extra) {
                        *ni += e;
                    }
                }
            }
            if l > 0 {
                // ReLU derivative of the hidden layer that produced x.
                for (ni, xi) in next.iter_mut().zip(x) {
                    if *xi <= 0.0 {
                        *ni = 0.0;
                    }
                }
            }
            std::mem::swap(&mut delta, &mut next);
        }
        if let Some(gi) = grad_input {
            gi.copy_from_slice(&delta);
        }
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * i + k] * b[4 * i + k];
        }
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
