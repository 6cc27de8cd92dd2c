//! Behavior cloning by maximum likelihood under the Gaussian head.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::discriminator::INPUT_CLIP;
use crate::learning::ExpertSet;
use crate::nn::{clip_grad_norm, Adam, GaussianPolicy};
use crate::observation::NormStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub validation_fraction: f64,
    pub init_log_std: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 50,
            batch: 64,
            lr: 1e-3,
            validation_fraction: 0.1,
            init_log_std: 0.0,
            max_grad_norm: 10.0,
            seed: 0,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(0.0..1.0).contains(&self.validation_fraction) || self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("bc needs batch > 0, lr > 0 and validation fraction in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Mean negative log-likelihood of `actions` and its gradient. `obs` are
/// network inputs (already normalized).
pub fn bc_nll_grad(policy: &GaussianPolicy, obs: &[&[f64]], actions: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = obs.len() as f64;
    let mut grad = vec![0.0; policy.n_params()];
    let mut loss = 0.0;
    for (x, &a) in obs.iter().zip(actions) {
        loss -= policy.logprob_grad(x, a, -1.0 / n, &mut grad)? / n;
    }
    Ok((loss, grad))
}

/// Trained policy with the observation statistics it expects, plus the
/// per-epoch training and validation losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcResult {
    pub policy: GaussianPolicy,
    pub obs_norm: NormStats,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

pub fn bc_init(expert: &ExpertSet, cfg: &BcConfig) -> (GaussianPolicy, NormStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let policy = GaussianPolicy::new(expert.obs_dim(), &cfg.hidden, cfg.init_log_std, &mut rng);
    (policy, expert.obs_norm())
}

/// Minibatch Adam on the NLL; keeps the parameters with the lowest
/// validation loss.
pub fn bc_train(expert: &ExpertSet, cfg: &BcConfig) -> Result<BcResult> {
    cfg.validate()?;
    if expert.is_empty() {
        return Err(Error::Config("behavior cloning needs at least one expert transition".into()));
    }
    let (mut policy, obs_norm) = bc_init(expert, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let inputs: Vec<Vec<f64>> = expert
        .observations
        .iter()
        .map(|o| obs_norm.normalize_clipped(o, INPUT_CLIP))
        .collect();
    let mut idx: Vec<usize> = (0..expert.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = ((expert.len() as f64) * cfg.validation_fraction).floor() as usize;
    let (val_idx, train_idx) = if n_val == 0 || n_val == expert.len() {
        (idx.clone(), idx.clone())
    } else {
        let (v, t) = idx.split_at(n_val);
        (v.to_vec(), t.to_vec())
    };
    let val_obs: Vec<&[f64]> = val_idx.iter().map(|&i| inputs[i].as_slice()).collect();
    let val_act: Vec<f64> = val_idx.iter().map(|&i| expert.actions[i]).collect();

    let mut opt = Adam::new(policy.n_params(), cfg.lr);
    let mut best = policy.clone();
    let mut best_loss = f64::INFINITY;
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_loss = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let obs: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
            let act: Vec<f64> = chunk.iter().map(|&i| expert.actions[i]).collect();
            let (l, mut g) = bc_nll_grad(&policy, &obs, &act)?;
            clip_grad_norm(&mut g, cfg.max_grad_norm);
            let mut flat = policy.flat();
            opt.step(&mut flat, &g);
            policy.set_flat(&flat);
            policy.clamp_log_std();
            epoch_loss += l * chunk.len() as f64;
        }
        train_loss.push(epoch_loss / order.len() as f64);
        let (vl, _) = bc_nll_grad(&policy, &val_obs, &val_act)?;
        val_loss.push(vl);
        if vl < best_loss {
            best_loss = vl;
            best = policy.clone();
        }
    }
    Ok(BcResult {
        policy: best,
        obs_norm,
        train_loss,
        val_loss,
    })
}
