//! Small tanh feedforward networks with hand-written backpropagation, a
//! diagonal Gaussian head and a safety-masked categorical head.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Fully connected network: tanh on hidden layers, linear output.
///
/// Parameters are one flat vector; layer `l` stores its weight matrix
/// (row-major, `out x in`) followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations of every layer, input first, output last.
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("nonempty cache")
    }
}

fn n_params_for(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n_params_for(sizes)],
        }
    }

    /// Glorot-normal hidden layers; the output layer is scaled by `out_gain`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], out_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let mut off = 0;
        let n_layers = sizes.len() - 1;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let mut std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            if l + 1 == n_layers {
                std *= out_gain;
            }
            for w in &mut net.params[off..off + fan_in * fan_out] {
                let z: f64 = StandardNormal.sample(rng);
                *w = z * std;
            }
            off += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<MlpCache> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let mut out = b.to_vec();
            for (j, o) in out.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                *o += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < n_layers {
                for o in &mut out {
                    *o = o.tanh();
                }
            }
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        Ok(MlpCache { acts })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.acts.pop().expect("output"))
    }

    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.forward(x)).collect()
    }

    /// Accumulate `dL/dparams` into `grad` given `dL/doutput`.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < n_layers {
                // tanh' = 1 - tanh²
                for (d, a) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let off = offsets[l];
            let input = &cache.acts[l];
            for j in 0..n_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = &mut grad[off + j * n_in..off + (j + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += dj * a;
                }
                grad[off + n_in * n_out + j] += dj;
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for j in 0..n_out {
                    let dj = delta[j];
                    if dj == 0.0 {
                        continue;
                    }
                    for (p, wji) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *p += dj * wji;
                    }
                }
                delta = prev;
            }
        }
    }
}

/// Log density of a diagonal Gaussian.
pub fn gaussian_logprob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &ls), &a)| {
            let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std
        .iter()
        .map(|&ls| 0.5 * (2.0 * PI * std::f64::consts::E).ln() + ls.clamp(LOG_STD_MIN, LOG_STD_MAX))
        .sum()
}

/// Policy with a network-predicted mean and a state-independent log std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub log_std: Vec<f64>,
}

/// Mean and log std for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianHead {
    pub fn logprob(&self, action: &[f64]) -> f64 {
        gaussian_logprob(&self.mean, &self.log_std, action)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &ls)| {
                let z: f64 = StandardNormal.sample(rng);
                m + z * ls.clamp(LOG_STD_MIN, LOG_STD_MAX).exp()
            })
            .collect()
    }
}

pub fn gaussian_sample<R: Rng + ?Sized>(head: &GaussianHead, rng: &mut R) -> Vec<f64> {
    head.sample(rng)
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], init_log_std: f64, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            net: Mlp::new(&sizes, 0.01, rng),
            log_std: vec![init_log_std],
        }
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params() + self.log_std.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.net.params.clone();
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let n = self.net.n_params();
        self.net.params.copy_from_slice(&flat[..n]);
        self.log_std.copy_from_slice(&flat[n..]);
    }

    pub fn clamp_log_std(&mut self) {
        for ls in &mut self.log_std {
            *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn head(&self, obs: &[f64]) -> Result<GaussianHead> {
        Ok(GaussianHead {
            mean: self.net.forward(obs)?,
            log_std: self.log_std.clone(),
        })
    }

    /// Log probability of a scalar action; accumulates `coef * d logprob / dparams` into `grad`.
    pub fn logprob_grad(&self, obs: &[f64], action: f64, coef: f64, grad: &mut [f64]) -> Result<f64> {
        let cache = self.net.forward_cached(obs)?;
        let mean = cache.output()[0];
        let ls_raw = self.log_std[0];
        let ls = ls_raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let std = ls.exp();
        let z = (action - mean) / std;
        let lp = -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln();
        if coef != 0.0 {
            self.net.backward(&cache, &[coef * z / std], &mut grad[..self.net.n_params()]);
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&ls_raw) {
                grad[self.net.n_params()] += coef * (z * z - 1.0);
            }
        }
        Ok(lp)
    }

    /// Entropy (state-independent); accumulates `coef * dH/dparams`.
    pub fn entropy_grad(&self, coef: f64, grad: &mut [f64]) -> f64 {
        let n = self.net.n_params();
        for (k, &ls) in self.log_std.iter().enumerate() {
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&ls) {
                grad[n + k] += coef;
            }
        }
        gaussian_entropy(&self.log_std)
    }
}

/// Categorical over options reweighted by per-option safety probabilities:
/// `pi(k) ∝ p[k] · softmax(logits)[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedCategorical {
    pub logits: Vec<f64>,
    pub mask: Vec<f64>,
}

impl MaskedCategorical {
    pub fn new(logits: Vec<f64>, mask: Vec<f64>) -> Result<Self> {
        if logits.len() != mask.len() {
            return Err(Error::Shape {
                expected: logits.len(),
                got: mask.len(),
            });
        }
        if !mask.iter().any(|&p| p > 0.0) {
            return Err(Error::InvalidMask);
        }
        Ok(Self { logits, mask })
    }

    /// Normalized probabilities; exactly zero where the mask is zero.
    pub fn probs(&self) -> Vec<f64> {
        let z: Vec<f64> = self
            .logits
            .iter()
            .zip(&self.mask)
            .map(|(&l, &p)| if p > 0.0 { l + p.ln() } else { f64::NEG_INFINITY })
            .collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z
            .iter()
            .map(|&v| if v == f64::NEG_INFINITY { 0.0 } else { (v - max).exp() })
            .collect();
        let sum: f64 = e.iter().sum();
        e.into_iter().map(|v| v / sum).collect()
    }

    pub fn logprob(&self, k: usize) -> f64 {
        if self.mask[k] <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let z: Vec<f64> = self
            .logits
            .iter()
            .zip(&self.mask)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&l, &p)| l + p.ln())
            .collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        self.logits[k] + self.mask[k].ln() - lse
    }

    pub fn entropy(&self) -> f64 {
        self.probs().iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let probs = self.probs();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (k, &p) in probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            last = k;
            acc += p;
            if u < acc {
                return k;
            }
        }
        last
    }

    /// `d logprob(k) / d logits`; the mask is treated as a constant.
    pub fn logprob_grad_logits(&self, k: usize) -> Vec<f64> {
        let probs = self.probs();
        probs.iter().enumerate().map(|(j, &p)| if j == k { 1.0 - p } else { -p }).collect()
    }

    /// `dH / d logits`.
    pub fn entropy_grad_logits(&self) -> Vec<f64> {
        let probs = self.probs();
        let h = self.entropy();
        probs.iter().map(|&p| if p > 0.0 { -p * (p.ln() + h) } else { 0.0 }).collect()
    }
}

pub fn masked_sample<R: Rng + ?Sized>(mc: &MaskedCategorical, rng: &mut R) -> usize {
    mc.sample(rng)
}

pub fn masked_logprob(mc: &MaskedCategorical, k: usize) -> f64 {
    mc.logprob(k)
}

/// Adam optimizer state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One descent step.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Scale `grad` down to at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= k;
        }
    }
    norm
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}
