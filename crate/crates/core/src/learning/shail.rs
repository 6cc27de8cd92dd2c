//! Hierarchical adversarial imitation over the fixed option set. The
//! high-level selector is trained on option-level rewards accumulated from the
//! low-level discriminator reward; with the safety layer enabled, options
//! predicted to collide are masked out and running options are interrupted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::discriminator::{train_discriminator, DiscConfig, Discriminator, INPUT_CLIP};
use crate::learning::env::{Env, EpisodeEnd};
use crate::learning::gail::worker_budget;
use crate::learning::ppo::{gae, normalize_advantages, ppo_update, Boundary, CategoricalPolicy, GaeStep, PpoConfig, PpoSample};
use crate::learning::{iteration_rng, ExpertSet, IterationMetrics};
use crate::nn::{Adam, Mlp};
use crate::observation::NormStats;
use crate::options::{enumerate_options, initiate, option_step, OptionRuntime, OptionSet, SafetyVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierMode {
    /// Safety mask and early termination.
    Shail,
    /// Same executor with the mask fixed to one and no interruption.
    Hail,
}

impl HierMode {
    pub fn masked(self) -> bool {
        self == HierMode::Shail
    }

    pub fn interrupts(self) -> bool {
        self == HierMode::Shail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShailConfig {
    pub mode: HierMode,
    pub iterations: usize,
    /// Low-level frames collected per iteration.
    pub steps_per_iter: usize,
    pub n_workers: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub validation_episodes: usize,
    pub option_speeds: Vec<f64>,
    pub option_times: Vec<f64>,
    pub ppo: PpoConfig,
    pub disc: DiscConfig,
}

impl Default for ShailConfig {
    fn default() -> Self {
        Self {
            mode: HierMode::Shail,
            iterations: 200,
            steps_per_iter: 2048,
            n_workers: 4,
            hidden: vec![64, 64],
            seed: 0,
            validation_episodes: 0,
            option_speeds: vec![0.0, 2.0, 4.0, 6.0, 8.0],
            option_times: vec![0.5, 1.0, 2.0],
            ppo: PpoConfig {
                minibatch: 32,
                ..PpoConfig::default()
            },
            disc: DiscConfig::default(),
        }
    }
}

impl ShailConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_iter == 0 || self.n_workers == 0 || self.n_workers > 0xffff {
            return Err(Error::Config("steps_per_iter and n_workers must be positive".into()));
        }
        enumerate_options(&self.option_speeds, &self.option_times).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShailState {
    pub mode: HierMode,
    pub policy: CategoricalPolicy,
    pub value: Mlp,
    pub disc: Discriminator,
    pub opt_pi: Adam,
    pub opt_v: Adam,
    pub opt_d: Adam,
    pub obs_norm: NormStats,
    pub options: OptionSet,
    pub iteration: usize,
}

impl ShailState {
    pub fn input(&self, obs: &[f64]) -> Vec<f64> {
        self.obs_norm.normalize_clipped(obs, INPUT_CLIP)
    }
}

pub fn shail_init(expert: &ExpertSet, cfg: &ShailConfig) -> Result<ShailState> {
    cfg.validate()?;
    if expert.is_empty() {
        return Err(Error::Config("adversarial imitation needs expert transitions".into()));
    }
    let options = enumerate_options(&cfg.option_speeds, &cfg.option_times)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let obs_norm = expert.obs_norm();
    let dim = expert.obs_dim();
    let policy = CategoricalPolicy::new(dim, &cfg.hidden, options.len(), &mut rng);
    let mut vs = vec![dim];
    vs.extend_from_slice(&cfg.hidden);
    vs.push(1);
    let value = Mlp::new(&vs, 1.0, &mut rng);
    let disc = Discriminator::new(obs_norm.clone(), expert.action_norm(), &cfg.disc, &mut rng);
    Ok(ShailState {
        mode: cfg.mode,
        opt_pi: Adam::new(policy.net.n_params(), cfg.ppo.lr),
        opt_v: Adam::new(value.n_params(), cfg.ppo.value_lr),
        opt_d: Adam::new(disc.net.n_params(), cfg.disc.lr),
        policy,
        value,
        disc,
        obs_norm,
        options,
        iteration: 0,
    })
}

/// One high-level decision with everything the option-level update needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionSample {
    /// Raw observation at initiation.
    pub h: Vec<f64>,
    pub input: Vec<f64>,
    pub o: usize,
    pub p_safe: Vec<f64>,
    pub r_tilde: f64,
    pub t_o: usize,
    pub steps_total: usize,
    pub interrupted: bool,
    pub logprob: f64,
    pub value: f64,
    pub next_value: f64,
    pub boundary: Boundary,
    /// Index of the option's first low-level pair in the batch's pair list.
    pub low_start: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ShailBatch {
    pub samples: Vec<OptionSample>,
    /// Executed (observation, realized acceleration) pairs, in order.
    pub pairs: Vec<(Vec<f64>, f64)>,
    /// Undiscounted sum of the per-frame rewards.
    pub reward_sum: f64,
    pub episodes: usize,
    pub collisions: usize,
}

/// Pick an option at a decision point. Returns the option runtime and the
/// log probability under the (possibly masked) selector.
pub fn decide<E: Env>(
    env: &E,
    policy: &CategoricalPolicy,
    input: &[f64],
    options: &OptionSet,
    mode: HierMode,
    rng: &mut ChaCha8Rng,
) -> Result<(OptionRuntime, SafetyVector, f64)> {
    let mask = if mode.masked() {
        env.safety(options)
    } else {
        SafetyVector::all_safe(options.len())
    };
    let dist = policy.dist(input, &mask.p)?;
    let o = dist.sample(rng);
    let rt = initiate(o, &options.specs[o], env.speed());
    Ok((rt, mask, dist.logprob(o)))
}

/// Run options until `budget` low-level frames have been executed.
/// `r_tilde` sums `gamma^t` times the discriminator reward over each option's frames.
#[allow(clippy::too_many_arguments)]
pub fn shail_collect<E: Env>(
    env: &mut E,
    policy: &CategoricalPolicy,
    value: &Mlp,
    obs_norm: &NormStats,
    options: &OptionSet,
    disc: &Discriminator,
    mode: HierMode,
    gamma: f64,
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ShailBatch> {
    let mut out = ShailBatch::default();
    if budget == 0 {
        return Ok(out);
    }
    let v_of = |obs: &[f64]| -> Result<f64> { Ok(value.forward(&obs_norm.normalize_clipped(obs, INPUT_CLIP))?[0]) };
    env.reset(rng)?;
    let mut frames = 0usize;
    while frames < budget {
        let h = env.observe();
        let input = obs_norm.normalize_clipped(&h, INPUT_CLIP);
        let (mut rt, mask, logprob) = decide(env, policy, &input, options, mode, rng)?;
        let v = value.forward(&input)?[0];
        let low_start = out.pairs.len();
        let mut r_tilde = 0.0;
        let mut disc_pow = 1.0;
        let mut end = None;
        let mut interrupted = false;
        loop {
            let (a, finished) = option_step(&mut rt)?;
            let obs = env.observe();
            let st = env.step(a)?;
            let r = disc.reward(&obs, st.realized_accel)?;
            out.reward_sum += r;
            r_tilde += disc_pow * r;
            disc_pow *= gamma;
            out.pairs.push((obs, st.realized_accel));
            frames += 1;
            if st.end.is_some() {
                end = st.end;
                break;
            }
            if finished || frames >= budget {
                break;
            }
            if mode.interrupts() && env.interrupt(&rt, options) {
                interrupted = true;
                break;
            }
        }
        let (boundary, next_value) = match end {
            Some(e) if e.is_terminal() => (Boundary::Terminal, 0.0),
            Some(_) => (Boundary::Truncated, v_of(&env.observe())?),
            None if frames >= budget => (Boundary::Truncated, v_of(&env.observe())?),
            None => (Boundary::Continue, 0.0),
        };
        out.samples.push(OptionSample {
            h,
            input,
            o: rt.index,
            p_safe: mask.p,
            r_tilde,
            t_o: rt.steps_done,
            steps_total: rt.steps_total,
            interrupted,
            logprob,
            value: v,
            next_value,
            boundary,
            low_start,
        });
        if let Some(e) = end {
            out.episodes += 1;
            if e == EpisodeEnd::Collision {
                out.collisions += 1;
            }
            if frames < budget {
                env.reset(rng)?;
            }
        }
    }
    for i in 0..out.samples.len().saturating_sub(1) {
        if out.samples[i].boundary == Boundary::Continue {
            out.samples[i].next_value = out.samples[i + 1].value;
        }
    }
    Ok(out)
}

/// Fraction of validation episodes that end without collision.
pub fn hier_validation_success<E: Env>(env: &mut E, st: &ShailState, episodes: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut ok = 0usize;
    for _ in 0..episodes {
        env.reset(rng)?;
        'episode: loop {
            let input = st.input(&env.observe());
            let (mut rt, _, _) = decide(env, &st.policy, &input, &st.options, st.mode, rng)?;
            loop {
                let (a, finished) = option_step(&mut rt)?;
                if let Some(end) = env.step(a)?.end {
                    if end != EpisodeEnd::Collision {
                        ok += 1;
                    }
                    break 'episode;
                }
                if finished || (st.mode.interrupts() && env.interrupt(&rt, &st.options)) {
                    break;
                }
            }
        }
    }
    Ok(ok as f64 / episodes as f64)
}

pub fn shail_iteration<E, F>(st: &mut ShailState, factory: &F, expert: &ExpertSet, cfg: &ShailConfig) -> Result<IterationMetrics>
where
    E: Env,
    F: Fn(usize) -> E + Sync,
{
    let it = st.iteration;
    let batches: Vec<ShailBatch> = {
        let s: &ShailState = st;
        (0..cfg.n_workers)
            .into_par_iter()
            .map(|w| {
                let mut env = factory(w);
                let mut rng = iteration_rng(cfg.seed, it, w + 1);
                shail_collect(
                    &mut env,
                    &s.policy,
                    &s.value,
                    &s.obs_norm,
                    &s.options,
                    &s.disc,
                    s.mode,
                    cfg.ppo.gamma,
                    worker_budget(cfg.steps_per_iter, cfg.n_workers, w),
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?
    };
    let episodes: usize = batches.iter().map(|b| b.episodes).sum();
    let collisions: usize = batches.iter().map(|b| b.collisions).sum();
    let reward_sum: f64 = batches.iter().map(|b| b.reward_sum).sum();
    let mut samples = Vec::new();
    let mut pairs = Vec::new();
    for b in batches {
        samples.extend(b.samples);
        pairs.extend(b.pairs);
    }

    let gsteps: Vec<GaeStep> = samples
        .iter()
        .map(|s| GaeStep {
            reward: s.r_tilde,
            value: s.value,
            next_value: s.next_value,
            discount: cfg.ppo.gamma.powi(s.t_o as i32),
            boundary: s.boundary,
        })
        .collect();
    let (adv, ret) = gae(&gsteps, cfg.ppo.lambda);
    let mut ppo_samples: Vec<PpoSample<usize>> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| PpoSample {
            obs: s.input.clone(),
            mask: s.p_safe.clone(),
            action: s.o,
            logprob: s.logprob,
            advantage: adv[i],
            ret: ret[i],
        })
        .collect();
    normalize_advantages(&mut ppo_samples);

    let mut rng = iteration_rng(cfg.seed, it, 0);
    let ppo = ppo_update(
        &mut st.policy,
        &mut st.value,
        &mut st.opt_pi,
        &mut st.opt_v,
        &ppo_samples,
        &cfg.ppo,
        &mut rng,
    )?;
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
        Some(hier_validation_success(&mut env, st, cfg.validation_episodes, &mut vrng)?)
    } else {
        None
    };
    st.iteration += 1;
    let n = samples.len().max(1) as f64;
    Ok(IterationMetrics {
        iteration: it,
        disc_loss,
        disc_accuracy,
        mean_reward: reward_sum / pairs.len().max(1) as f64,
        mean_r_tilde: Some(samples.iter().map(|s| s.r_tilde).sum::<f64>() / n),
        mean_t_o: Some(samples.iter().map(|s| s.t_o as f64).sum::<f64>() / n),
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

pub fn shail_continue<E, F, C>(
    mut state: ShailState,
    factory: &F,
    expert: &ExpertSet,
    cfg: &ShailConfig,
    mut on_iter: C,
) -> Result<ShailState>
where
    E: Env,
    F: Fn(usize) -> E + Sync,
    C: FnMut(&ShailState, &IterationMetrics) -> Result<()>,
{
    while state.iteration < cfg.iterations {
        let m = shail_iteration(&mut state, factory, expert, cfg)?;
        on_iter(&state, &m)?;
    }
    Ok(state)
}

pub fn shail_train<E, F, C>(factory: &F, expert: &ExpertSet, cfg: &ShailConfig, on_iter: C) -> Result<ShailState>
where
    E: Env,
    F: Fn(usize) -> E + Sync,
    C: FnMut(&ShailState, &IterationMetrics) -> Result<()>,
{
    let state = shail_init(expert, cfg)?;
    shail_continue(state, factory, expert, cfg, on_iter)
}
