//! Clipped-surrogate policy optimization with generalized advantage estimation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{clip_grad_norm, Adam, GaussianPolicy, MaskedCategorical, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub ent_coef: f64,
    pub lr: f64,
    pub value_lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub target_kl: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            ent_coef: 0.01,
            lr: 3e-4,
            value_lr: 1e-3,
            epochs: 10,
            minibatch: 64,
            target_kl: 0.02,
            max_grad_norm: 0.5,
        }
    }
}

/// How a transition ends the trajectory segment it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    Continue,
    /// Episode ended; no bootstrap.
    Terminal,
    /// Segment cut short; bootstrap from `next_value`.
    Truncated,
}

/// One decision for advantage estimation. `discount` is γ for a single frame
/// and γ^T for a decision lasting T frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaeStep {
    pub reward: f64,
    pub value: f64,
    pub next_value: f64,
    pub discount: f64,
    pub boundary: Boundary,
}

/// Advantages and value targets. Steps must be in time order; segments are
/// separated by `Terminal` or `Truncated` boundaries.
pub fn gae(steps: &[GaeStep], lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = steps.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let s = &steps[t];
        let (boot, carry) = match s.boundary {
            Boundary::Continue => (s.next_value, next_adv),
            Boundary::Truncated => (s.next_value, 0.0),
            Boundary::Terminal => (0.0, 0.0),
        };
        let delta = s.reward + s.discount * boot - s.value;
        adv[t] = delta + s.discount * lambda * carry;
        next_adv = adv[t];
    }
    let ret = adv.iter().zip(steps).map(|(a, s)| a + s.value).collect();
    (adv, ret)
}

/// Policies trainable by the clipped surrogate.
pub trait PpoPolicy {
    type Action: Copy;

    fn n_params(&self) -> usize;
    fn flat(&self) -> Vec<f64>;
    fn set_flat(&mut self, flat: &[f64]);

    /// Log probability of `action`. Then accumulates `coef(logprob) * dlogprob/dparams`
    /// into `grad`.
    fn logprob_with_grad(
        &self,
        obs: &[f64],
        mask: &[f64],
        action: Self::Action,
        coef: &mut dyn FnMut(f64) -> f64,
        grad: &mut [f64],
    ) -> Result<f64>;

    /// Entropy at `obs`; accumulates `coef * dH/dparams`.
    fn entropy_with_grad(&self, obs: &[f64], mask: &[f64], coef: f64, grad: &mut [f64]) -> Result<f64>;

    fn after_step(&mut self) {}
}

impl PpoPolicy for GaussianPolicy {
    type Action = f64;

    fn n_params(&self) -> usize {
        GaussianPolicy::n_params(self)
    }

    fn flat(&self) -> Vec<f64> {
        GaussianPolicy::flat(self)
    }

    fn set_flat(&mut self, flat: &[f64]) {
        GaussianPolicy::set_flat(self, flat)
    }

    fn logprob_with_grad(
        &self,
        obs: &[f64],
        _mask: &[f64],
        action: f64,
        coef: &mut dyn FnMut(f64) -> f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let lp = self.logprob_grad(obs, action, 0.0, grad)?;
        let c = coef(lp);
        if c != 0.0 {
            self.logprob_grad(obs, action, c, grad)?;
        }
        Ok(lp)
    }

    fn entropy_with_grad(&self, _obs: &[f64], _mask: &[f64], coef: f64, grad: &mut [f64]) -> Result<f64> {
        Ok(self.entropy_grad(coef, grad))
    }

    fn after_step(&mut self) {
        self.clamp_log_std();
    }
}

/// High-level selector: a network producing one logit per option, sampled
/// through the safety-masked categorical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPolicy {
    pub net: Mlp,
}

impl CategoricalPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], n_options: usize, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_options);
        Self {
            net: Mlp::new(&sizes, 0.01, rng),
        }
    }

    pub fn dist(&self, obs: &[f64], mask: &[f64]) -> Result<MaskedCategorical> {
        MaskedCategorical::new(self.net.forward(obs)?, mask.to_vec())
    }
}

impl PpoPolicy for CategoricalPolicy {
    type Action = usize;

    fn n_params(&self) -> usize {
        self.net.n_params()
    }

    fn flat(&self) -> Vec<f64> {
        self.net.params.clone()
    }

    fn set_flat(&mut self, flat: &[f64]) {
        self.net.params.copy_from_slice(flat);
    }

    fn logprob_with_grad(
        &self,
        obs: &[f64],
        mask: &[f64],
        action: usize,
        coef: &mut dyn FnMut(f64) -> f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let cache = self.net.forward_cached(obs)?;
        let mc = MaskedCategorical::new(cache.output().to_vec(), mask.to_vec())?;
        let lp = mc.logprob(action);
        let c = coef(lp);
        if c != 0.0 {
            let d: Vec<f64> = mc.logprob_grad_logits(action).iter().map(|g| g * c).collect();
            self.net.backward(&cache, &d, grad);
        }
        Ok(lp)
    }

    fn entropy_with_grad(&self, obs: &[f64], mask: &[f64], coef: f64, grad: &mut [f64]) -> Result<f64> {
        let cache = self.net.forward_cached(obs)?;
        let mc = MaskedCategorical::new(cache.output().to_vec(), mask.to_vec())?;
        if coef != 0.0 {
            let d: Vec<f64> = mc.entropy_grad_logits().iter().map(|g| g * coef).collect();
            self.net.backward(&cache, &d, grad);
        }
        Ok(mc.entropy())
    }
}

/// One training sample for the surrogate. `obs` is already normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoSample<A> {
    pub obs: Vec<f64>,
    pub mask: Vec<f64>,
    pub action: A,
    pub logprob: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Surrogate loss statistics for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurrogateStats {
    pub loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
}

/// Negative clipped surrogate minus the entropy bonus, averaged over `batch`,
/// with its gradient.
pub fn ppo_surrogate_grad<P: PpoPolicy>(
    policy: &P,
    batch: &[&PpoSample<P::Action>],
    clip: f64,
    ent_coef: f64,
) -> Result<(SurrogateStats, Vec<f64>)> {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; policy.n_params()];
    let mut st = SurrogateStats::default();
    for s in batch {
        let adv = s.advantage;
        let old = s.logprob;
        let mut term = 0.0;
        let mut kl = 0.0;
        let mut clipped = false;
        let mut coef = |lp: f64| {
            let ratio = (lp - old).exp();
            kl = (ratio - 1.0) - (lp - old);
            let unclipped = ratio * adv;
            let bounded = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
            if unclipped <= bounded {
                term = unclipped;
                -adv * ratio / n
            } else {
                term = bounded;
                clipped = true;
                0.0
            }
        };
        policy.logprob_with_grad(&s.obs, &s.mask, s.action, &mut coef, &mut grad)?;
        st.loss -= term / n;
        st.approx_kl += kl / n;
        if clipped {
            st.clip_frac += 1.0 / n;
        }
        let h = policy.entropy_with_grad(&s.obs, &s.mask, -ent_coef / n, &mut grad)?;
        st.entropy += h / n;
        st.loss -= ent_coef * h / n;
    }
    Ok((st, grad))
}

/// `0.5 * mean((V(obs) - target)^2)` and its gradient.
pub fn value_loss_grad(net: &Mlp, obs: &[&[f64]], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = obs.len() as f64;
    let mut grad = vec![0.0; net.n_params()];
    let mut loss = 0.0;
    for (x, &t) in obs.iter().zip(targets) {
        let cache = net.forward_cached(x)?;
        let err = cache.output()[0] - t;
        loss += 0.5 * err * err / n;
        net.backward(&cache, &[err / n], &mut grad);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub epochs: usize,
}

/// Normalize advantages in place; a batch with no spread is left alone.
pub fn normalize_advantages<A>(samples: &mut [PpoSample<A>]) {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return;
    }
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return;
    }
    for s in samples.iter_mut() {
        s.advantage = (s.advantage - mean) / std;
    }
}

/// Several epochs of shuffled minibatch updates on the policy and value net.
/// Stops early once the approximate KL of a minibatch exceeds 1.5x the target.
pub fn ppo_update<P: PpoPolicy, R: Rng + ?Sized>(
    policy: &mut P,
    value: &mut Mlp,
    opt_pi: &mut Adam,
    opt_v: &mut Adam,
    samples: &[PpoSample<P::Action>],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    let mut stats = PpoStats::default();
    if samples.is_empty() {
        return Ok(stats);
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mb = cfg.minibatch.max(1);
    let mut n_batches = 0usize;
    'outer: for epoch in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(mb) {
            let batch: Vec<&PpoSample<P::Action>> = chunk.iter().map(|&i| &samples[i]).collect();
            let (st, mut g) = ppo_surrogate_grad(policy, &batch, cfg.clip, cfg.ent_coef)?;
            if st.approx_kl > 1.5 * cfg.target_kl {
                stats.approx_kl = st.approx_kl;
                break 'outer;
            }
            clip_grad_norm(&mut g, cfg.max_grad_norm);
            let mut flat = policy.flat();
            opt_pi.step(&mut flat, &g);
            policy.set_flat(&flat);
            policy.after_step();

            let obs: Vec<&[f64]> = batch.iter().map(|s| s.obs.as_slice()).collect();
            let targets: Vec<f64> = batch.iter().map(|s| s.ret).collect();
            let (vl, mut gv) = value_loss_grad(value, &obs, &targets)?;
            clip_grad_norm(&mut gv, cfg.max_grad_norm);
            opt_v.step(&mut value.params, &gv);

            stats.policy_loss += st.loss;
            stats.value_loss += vl;
            stats.entropy += st.entropy;
            stats.approx_kl = st.approx_kl;
            stats.clip_frac += st.clip_frac;
            n_batches += 1;
        }
        stats.epochs = epoch + 1;
    }
    if n_batches > 0 {
        let k = n_batches as f64;
        stats.policy_loss /= k;
        stats.value_loss /= k;
        stats.entropy /= k;
        stats.clip_frac /= k;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn step(reward: f64, value: f64, next_value: f64, boundary: Boundary) -> GaeStep {
        GaeStep {
            reward,
            value,
            next_value,
            discount: 0.9,
            boundary,
        }
    }

    #[test]
    fn gae_lambda_one_is_discounted_return() {
        let steps = [
            step(1.0, 0.0, 0.0, Boundary::Continue),
            step(1.0, 0.0, 0.0, Boundary::Continue),
            step(1.0, 0.0, 0.0, Boundary::Terminal),
        ];
        let (adv, ret) = gae(&steps, 1.0);
        assert!((ret[0] - 2.71).abs() < 1e-12);
        assert_eq!(adv, ret);
    }

    #[test]
    fn gae_truncation_bootstraps() {
        let steps = [step(0.0, 1.0, 2.0, Boundary::Truncated), step(5.0, 0.0, 0.0, Boundary::Terminal)];
        let (adv, _) = gae(&steps, 0.95);
        assert!((adv[0] - (0.9 * 2.0 - 1.0)).abs() < 1e-12);
        assert_eq!(adv[1], 5.0);
    }

    #[test]
    fn zero_advantage_leaves_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pol = GaussianPolicy::new(3, &[8], 0.0, &mut rng);
        let mut val = Mlp::new(&[3, 8, 1], 1.0, &mut rng);
        let before = pol.flat();
        let samples: Vec<PpoSample<f64>> = (0..32)
            .map(|i| PpoSample {
                obs: vec![i as f64 * 0.1, 0.0, 1.0],
                mask: vec![],
                action: 0.3,
                logprob: pol.head(&[i as f64 * 0.1, 0.0, 1.0]).unwrap().logprob(&[0.3]),
                advantage: 0.0,
                ret: 1.0,
            })
            .collect();
        let cfg = PpoConfig {
            ent_coef: 0.0,
            ..PpoConfig::default()
        };
        let mut o1 = Adam::new(pol.n_params(), cfg.lr);
        let mut o2 = Adam::new(val.n_params(), cfg.value_lr);
        ppo_update(&mut pol, &mut val, &mut o1, &mut o2, &samples, &cfg, &mut rng).unwrap();
        assert_eq!(pol.flat(), before);
    }

    #[test]
    fn advantage_normalization_guard() {
        let mut s: Vec<PpoSample<usize>> = (0..4)
            .map(|_| PpoSample {
                obs: vec![],
                mask: vec![],
                action: 0,
                logprob: 0.0,
                advantage: 0.0,
                ret: 0.0,
            })
            .collect();
        normalize_advantages(&mut s);
        assert!(s.iter().all(|x| x.advantage == 0.0));
    }
}
