//! Observation-action classifier and the reward derived from it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{clip_grad_norm, sigmoid, softplus, Adam, Mlp};
use crate::observation::NormStats;

/// Bound applied to normalized network inputs.
pub const INPUT_CLIP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub steps_per_iter: usize,
    pub batch: usize,
    pub r_clip: f64,
    pub max_grad_norm: f64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            lr: 3e-4,
            steps_per_iter: 5,
            batch: 256,
            r_clip: 10.0,
            max_grad_norm: 1.0,
        }
    }
}

/// Logit network over normalized (observation, acceleration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub net: Mlp,
    pub obs_norm: NormStats,
    pub act_norm: NormStats,
    pub r_clip: f64,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(obs_norm: NormStats, act_norm: NormStats, cfg: &DiscConfig, rng: &mut R) -> Self {
        let mut sizes = vec![obs_norm.dim() + 1];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(1);
        Self {
            net: Mlp::new(&sizes, 1.0, rng),
            obs_norm,
            act_norm,
            r_clip: cfg.r_clip,
        }
    }

    pub fn input(&self, obs: &[f64], action: f64) -> Vec<f64> {
        let mut x = self.obs_norm.normalize_clipped(obs, INPUT_CLIP);
        x.extend(self.act_norm.normalize_clipped(&[action], INPUT_CLIP));
        x
    }

    pub fn logit(&self, obs: &[f64], action: f64) -> Result<f64> {
        Ok(self.net.forward(&self.input(obs, action))?[0])
    }

    pub fn reward(&self, obs: &[f64], action: f64) -> Result<f64> {
        Ok(imagined_reward(self.logit(obs, action)?, self.r_clip))
    }
}

/// `-log(1 - sigmoid(logit))`, clipped to `[0, r_clip]`.
pub fn imagined_reward(logit: f64, r_clip: f64) -> f64 {
    softplus(logit).clamp(0.0, r_clip)
}

/// Binary cross-entropy with expert inputs labeled 1 and policy inputs 0:
/// `mean_e softplus(-l) + mean_p softplus(l)`. Returns (loss, accuracy, grad).
pub fn discriminator_loss_grad(net: &Mlp, expert: &[&[f64]], policy: &[&[f64]]) -> Result<(f64, f64, Vec<f64>)> {
    let mut grad = vec![0.0; net.n_params()];
    let mut loss = 0.0;
    let mut correct = 0usize;
    let ne = expert.len() as f64;
    for x in expert {
        let cache = net.forward_cached(x)?;
        let l = cache.output()[0];
        loss += softplus(-l) / ne;
        if l > 0.0 {
            correct += 1;
        }
        net.backward(&cache, &[(sigmoid(l) - 1.0) / ne], &mut grad);
    }
    let np = policy.len() as f64;
    for x in policy {
        let cache = net.forward_cached(x)?;
        let l = cache.output()[0];
        loss += softplus(l) / np;
        if l < 0.0 {
            correct += 1;
        }
        net.backward(&cache, &[sigmoid(l) / np], &mut grad);
    }
    let acc = correct as f64 / (expert.len() + policy.len()) as f64;
    Ok((loss, acc, grad))
}

/// One gradient step on the classification loss. Returns (loss, accuracy)
/// measured before the step.
pub fn discriminator_update(
    disc: &mut Discriminator,
    opt: &mut Adam,
    expert: &[Vec<f64>],
    policy: &[Vec<f64>],
    max_grad_norm: f64,
) -> Result<(f64, f64)> {
    let e: Vec<&[f64]> = expert.iter().map(|x| x.as_slice()).collect();
    let p: Vec<&[f64]> = policy.iter().map(|x| x.as_slice()).collect();
    let (loss, acc, mut g) = discriminator_loss_grad(&disc.net, &e, &p)?;
    clip_grad_norm(&mut g, max_grad_norm);
    opt.step(&mut disc.net.params, &g);
    Ok((loss, acc))
}

/// Resampled expert and policy minibatches followed by `steps` updates.
/// Returns the mean loss and accuracy.
pub fn train_discriminator<R: Rng + ?Sized>(
    disc: &mut Discriminator,
    opt: &mut Adam,
    expert_obs: &[Vec<f64>],
    expert_act: &[f64],
    policy_pairs: &[(Vec<f64>, f64)],
    cfg: &DiscConfig,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if expert_act.is_empty() || policy_pairs.is_empty() || cfg.steps_per_iter == 0 {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut tot = (0.0, 0.0);
    for _ in 0..cfg.steps_per_iter {
        let eb: Vec<Vec<f64>> = (0..cfg.batch)
            .map(|_| {
                let i = rng.random_range(0..expert_act.len());
                disc.input(&expert_obs[i], expert_act[i])
            })
            .collect();
        let pb: Vec<Vec<f64>> = (0..cfg.batch)
            .map(|_| {
                let (o, a) = &policy_pairs[rng.random_range(0..policy_pairs.len())];
                disc.input(o, *a)
            })
            .collect();
        let (l, a) = discriminator_update(disc, opt, &eb, &pb, cfg.max_grad_norm)?;
        tot.0 += l;
        tot.1 += a;
    }
    let k = cfg.steps_per_iter as f64;
    Ok((tot.0 / k, tot.1 / k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reward_closed_forms() {
        assert!((imagined_reward(0.0, 10.0) - 2f64.ln()).abs() < 1e-15);
        assert!(imagined_reward(-60.0, 10.0) < 1e-20);
        assert_eq!(imagined_reward(50.0, 10.0), 10.0);
    }

    #[test]
    fn identical_batches_half_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[2, 8, 1], 1.0, &mut rng);
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1, -0.3]).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (_, acc, _) = discriminator_loss_grad(&net, &refs, &refs).unwrap();
        assert!((acc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn separable_reaches_full_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut disc = Discriminator::new(NormStats::identity(1), NormStats::identity(1), &DiscConfig::default(), &mut rng);
        let mut opt = Adam::new(disc.net.n_params(), 1e-2);
        let e: Vec<Vec<f64>> = (0..32).map(|i| disc.input(&[1.0 + 0.01 * i as f64], 0.5)).collect();
        let p: Vec<Vec<f64>> = (0..32).map(|i| disc.input(&[-1.0 - 0.01 * i as f64], -0.5)).collect();
        let mut acc = 0.0;
        for _ in 0..200 {
            acc = discriminator_update(&mut disc, &mut opt, &e, &p, 10.0).unwrap().1;
        }
        assert_eq!(acc, 1.0);
    }
}
