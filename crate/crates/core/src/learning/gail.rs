//! Flat adversarial imitation: a Gaussian acceleration policy trained by PPO
//! on the discriminator's reward.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::discriminator::{train_discriminator, DiscConfig, Discriminator, INPUT_CLIP};
use crate::learning::env::{Env, EpisodeEnd};
use crate::learning::ppo::{gae, normalize_advantages, ppo_update, Boundary, GaeStep, PpoConfig, PpoSample};
use crate::learning::{iteration_rng, ExpertSet, IterationMetrics};
use crate::nn::{Adam, GaussianPolicy, Mlp};
use crate::observation::NormStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GailConfig {
    pub iterations: usize,
    pub steps_per_iter: usize,
    pub n_workers: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub seed: u64,
    pub validation_episodes: usize,
    pub ppo: PpoConfig,
    pub disc: DiscConfig,
}

impl Default for GailConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            steps_per_iter: 2048,
            n_workers: 4,
            hidden: vec![64, 64],
            init_log_std: 0.0,
            seed: 0,
            validation_episodes: 0,
            ppo: PpoConfig::default(),
            disc: DiscConfig::default(),
        }
    }
}

impl GailConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_iter == 0 || self.n_workers == 0 || self.n_workers > 0xffff {
            return Err(Error::Config("steps_per_iter and n_workers must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GailState {
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub disc: Discriminator,
    pub opt_pi: Adam,
    pub opt_v: Adam,
    pub opt_d: Adam,
    pub obs_norm: NormStats,
    pub iteration: usize,
}

impl GailState {
    pub fn input(&self, obs: &[f64]) -> Vec<f64> {
        self.obs_norm.normalize_clipped(obs, INPUT_CLIP)
    }
}

pub fn gail_init(expert: &ExpertSet, cfg: &GailConfig) -> Result<GailState> {
    cfg.validate()?;
    if expert.is_empty() {
        return Err(Error::Config("adversarial imitation needs expert transitions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let obs_norm = expert.obs_norm();
    let dim = expert.obs_dim();
    let policy = GaussianPolicy::new(dim, &cfg.hidden, cfg.init_log_std, &mut rng);
    let mut vs = vec![dim];
    vs.extend_from_slice(&cfg.hidden);
    vs.push(1);
    let value = Mlp::new(&vs, 1.0, &mut rng);
    let disc = Discriminator::new(obs_norm.clone(), expert.action_norm(), &cfg.disc, &mut rng);
    Ok(GailState {
        opt_pi: Adam::new(policy.n_params(), cfg.ppo.lr),
        opt_v: Adam::new(value.n_params(), cfg.ppo.value_lr),
        opt_d: Adam::new(disc.net.n_params(), cfg.disc.lr),
        policy,
        value,
        disc,
        obs_norm,
        iteration: 0,
    })
}

#[derive(Debug, Clone)]
struct LowStep {
    obs: Vec<f64>,
    input: Vec<f64>,
    action: f64,
    realized: f64,
    logprob: f64,
    value: f64,
    next_value: f64,
    boundary: Boundary,
}

#[derive(Debug, Default)]
struct WorkerBatch {
    steps: Vec<LowStep>,
    episodes: usize,
    collisions: usize,
}

/// Split `total` as evenly as possible over `n` workers.
pub(crate) fn worker_budget(total: usize, n: usize, w: usize) -> usize {
    total / n + usize::from(w < total % n)
}

fn collect_worker<E: Env>(env: &mut E, st: &GailState, budget: usize, rng: &mut ChaCha8Rng) -> Result<WorkerBatch> {
    let mut out = WorkerBatch::default();
    if budget == 0 {
        return Ok(out);
    }
    env.reset(rng)?;
    for k in 0..budget {
        let obs = env.observe();
        let input = st.input(&obs);
        let head = st.policy.head(&input)?;
        let action = head.sample(rng)[0];
        let logprob = head.logprob(&[action]);
        let value = st.value.forward(&input)?[0];
        let r = env.step(action)?;
        let mut step = LowStep {
            obs,
            input,
            action,
            realized: r.realized_accel,
            logprob,
            value,
            next_value: 0.0,
            boundary: Boundary::Continue,
        };
        let last = k + 1 == budget;
        match r.end {
            Some(end) => {
                out.episodes += 1;
                if end == EpisodeEnd::Collision {
                    out.collisions += 1;
                }
                if end.is_terminal() {
                    step.boundary = Boundary::Terminal;
                } else {
                    step.boundary = Boundary::Truncated;
                    step.next_value = st.value.forward(&st.input(&env.observe()))?[0];
                }
                out.steps.push(step);
                if !last {
                    env.reset(rng)?;
                }
            }
            None => {
                if last {
                    step.boundary = Boundary::Truncated;
                    step.next_value = st.value.forward(&st.input(&env.observe()))?[0];
                }
                out.steps.push(step);
            }
        }
    }
    for i in 0..out.steps.len().saturating_sub(1) {
        if out.steps[i].boundary == Boundary::Continue {
            out.steps[i].next_value = out.steps[i + 1].value;
        }
    }
    Ok(out)
}

/// Fraction of `episodes` mean-action rollouts that end without collision.
pub fn validation_success<E: Env>(env: &mut E, st: &GailState, episodes: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut ok = 0usize;
    for _ in 0..episodes {
        env.reset(rng)?;
        loop {
            let a = st.policy.head(&st.input(&env.observe()))?.mean[0];
            if let Some(end) = env.step(a)?.end {
                if end != EpisodeEnd::Collision {
                    ok += 1;
                }
                break;
            }
        }
    }
    Ok(ok as f64 / episodes as f64)
}

/// One collect / reward / PPO / discriminator cycle.
pub fn gail_iteration<E, F>(st: &mut GailState, factory: &F, expert: &ExpertSet, cfg: &GailConfig) -> Result<IterationMetrics>
where
    E: Env,
    F: Fn(usize) -> E + Sync,
{
    let it = st.iteration;
    let batches: Vec<WorkerBatch> = {
        let snapshot: &GailState = st;
        (0..cfg.n_workers)
            .into_par_iter()
            .map(|w| {
                let mut env = factory(w);
                let mut rng = iteration_rng(cfg.seed, it, w + 1);
                collect_worker(&mut env, snapshot, worker_budget(cfg.steps_per_iter, cfg.n_workers, w), &mut rng)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let episodes: usize = batches.iter().map(|b| b.episodes).sum();
    let collisions: usize = batches.iter().map(|b| b.collisions).sum();
    let steps: Vec<LowStep> = batches.into_iter().flat_map(|b| b.steps).collect();

    let rewards: Vec<f64> = steps.iter().map(|s| st.disc.reward(&s.obs, s.realized)).collect::<Result<_>>()?;
    let gsteps: Vec<GaeStep> = steps
        .iter()
        .zip(&rewards)
        .map(|(s, &r)| GaeStep {
            reward: r,
            value: s.value,
            next_value: s.next_value,
            discount: cfg.ppo.gamma,
            boundary: s.boundary,
        })
        .collect();
    let (adv, ret) = gae(&gsteps, cfg.ppo.lambda);
    let mut samples: Vec<PpoSample<f64>> = steps
        .iter()
        .enumerate()
        .map(|(i, s)| PpoSample {
            obs: s.input.clone(),
            mask: Vec::new(),
            action: s.action,
            logprob: s.logprob,
            advantage: adv[i],
            ret: ret[i],
        })
        .collect();
    normalize_advantages(&mut samples);

    let mut rng = iteration_rng(cfg.seed, it, 0);
    let ppo = ppo_update(
        &mut st.policy,
        &mut st.value,
        &mut st.opt_pi,
        &mut st.opt_v,
        &samples,
        &cfg.ppo,
        &mut rng,
    )?;
    let pairs: Vec<(Vec<f64>, f64)> = steps.iter().map(|s| (s.obs.clone(), s.realized)).collect();
    let (disc_loss, disc_accuracy) = train_discriminator(
        &mut st.disc,
        &mut st.opt_d,
        &expert.observations,
        &expert.actions,
        &pairs,
        &cfg.disc,
        &mut rng,
    )?;
    let validation = if cfg.validation_episodes > 0 {
        let mut env = factory(0);
        let mut vrng = iteration_rng(cfg.seed, it, 0xffff);
        Some(validation_success(&mut env, st, cfg.validation_episodes, &mut vrng)?)
    } else {
        None
    };
    st.iteration += 1;
    Ok(IterationMetrics {
        iteration: it,
        disc_loss,
        disc_accuracy,
        mean_reward: rewards.iter().sum::<f64>() / rewards.len().max(1) as f64,
        mean_r_tilde: None,
        mean_t_o: None,
        episodes,
        train_collision_rate: if episodes > 0 { collisions as f64 / episodes as f64 } else { 0.0 },
        validation_success: validation,
        policy_loss: ppo.policy_loss,
        value_loss: ppo.value_loss,
        entropy: ppo.entropy,
        approx_kl: ppo.approx_kl,
        ppo_epochs: ppo.epochs,
    })
}

/// Run iterations until `cfg.iterations` is reached, starting from `state`
/// (fresh or resumed). `on_iter` sees the state after each iteration.
pub fn gail_continue<E, F, C>(mut state: GailState, factory: &F, expert: &ExpertSet, cfg: &GailConfig, mut on_iter: C) -> Result<GailState>
where
    E: Env,
    F: Fn(usize) -> E + Sync,
    C: FnMut(&GailState, &IterationMetrics) -> Result<()>,
{
    while state.iteration < cfg.iterations {
        let m = gail_iteration(&mut state, factory, expert, cfg)?;
        on_iter(&state, &m)?;
    }
    Ok(state)
}

pub fn gail_train<E, F, C>(factory: &F, expert: &ExpertSet, cfg: &GailConfig, on_iter: C) -> Result<GailState>
where
    E: Env,
    F: Fn(usize) -> E + Sync,
    C: FnMut(&GailState, &IterationMetrics) -> Result<()>,
{
    let state = gail_init(expert, cfg)?;
    gail_continue(state, factory, expert, cfg, on_iter)
}
