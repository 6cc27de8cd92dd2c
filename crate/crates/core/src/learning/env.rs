//! Environments seen by the trainers: the replay simulator and a
//! one-dimensional double integrator used for quick sanity runs.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::encode;
use crate::options::{predict_safety, should_interrupt, OptionRuntime, OptionSet, SafetyVector};
use crate::simulator::{integrate, Done, SimState, Simulator};
use crate::{A_CLIP, FRAME_DT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEnd {
    Collision,
    LeftScene,
    Truncated,
}

impl EpisodeEnd {
    /// True when the episode really ended rather than being cut off.
    pub fn is_terminal(self) -> bool {
        !matches!(self, EpisodeEnd::Truncated)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStep {
    pub realized_accel: f64,
    pub end: Option<EpisodeEnd>,
}

pub trait Env: Send {
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<()>;
    /// Raw (unnormalized) feature vector.
    fn observe(&self) -> Vec<f64>;
    fn speed(&self) -> f64;
    fn step(&mut self, accel: f64) -> Result<EnvStep>;
    fn safety(&self, options: &OptionSet) -> SafetyVector;
    fn interrupt(&self, rt: &OptionRuntime, options: &OptionSet) -> bool;
}

/// Ego episodes in the replay simulator, truncated after `max_steps` frames.
pub struct SimEnv {
    pub sim: Arc<Simulator>,
    pub max_steps: usize,
    state: Option<SimState>,
}

impl SimEnv {
    pub fn new(sim: Arc<Simulator>, max_steps: usize) -> Self {
        Self {
            sim,
            max_steps,
            state: None,
        }
    }

    pub fn state(&self) -> Option<&SimState> {
        self.state.as_ref()
    }

    fn running(&self) -> &SimState {
        self.state.as_ref().expect("environment used before reset")
    }
}

impl Env for SimEnv {
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.state = Some(self.sim.reset(None, rng)?);
        Ok(())
    }

    fn observe(&self) -> Vec<f64> {
        encode(&self.sim, self.running()).to_vec()
    }

    fn speed(&self) -> f64 {
        self.running().ego.v
    }

    fn step(&mut self, accel: f64) -> Result<EnvStep> {
        let state = self.state.as_mut().ok_or(Error::SteppedAfterDone)?;
        let info = self.sim.step(state, accel)?;
        let end = match info.done {
            Done::Collision => Some(EpisodeEnd::Collision),
            Done::LeftScene => Some(EpisodeEnd::LeftScene),
            Done::Running if state.time_step as usize >= self.max_steps => Some(EpisodeEnd::Truncated),
            Done::Running => None,
        };
        Ok(EnvStep {
            realized_accel: info.realized_accel,
            end,
        })
    }

    fn safety(&self, options: &OptionSet) -> SafetyVector {
        predict_safety(&self.sim, self.running(), options)
    }

    fn interrupt(&self, rt: &OptionRuntime, options: &OptionSet) -> bool {
        should_interrupt(&self.sim, self.running(), rt, options)
    }
}

/// Point mass on a line. The observation is the speed alone; nothing can collide.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    pub v: f64,
    pub x: f64,
    pub t: usize,
    pub max_steps: usize,
    pub v_init_max: f64,
}

impl ToyEnv {
    pub fn new(max_steps: usize) -> Self {
        Self {
            v: 0.0,
            x: 0.0,
            t: 0,
            max_steps,
            v_init_max: 10.0,
        }
    }

    /// Proportional controller that settles at `target` m/s.
    pub fn scripted_expert(v: f64, target: f64) -> f64 {
        (2.0 * (target - v)).clamp(-A_CLIP, A_CLIP)
    }

    /// Expert pairs from `episodes` rollouts of the scripted controller.
    pub fn expert_set(episodes: usize, max_steps: usize, target: f64, rng: &mut ChaCha8Rng) -> super::ExpertSet {
        let mut env = ToyEnv::new(max_steps);
        let mut observations = Vec::new();
        let mut actions = Vec::new();
        for _ in 0..episodes {
            env.reset(rng).expect("toy reset");
            loop {
                let a = Self::scripted_expert(env.v, target);
                observations.push(env.observe());
                let st = env.step(a).expect("toy step");
                actions.push(st.realized_accel);
                if st.end.is_some() {
                    break;
                }
            }
        }
        super::ExpertSet { observations, actions }
    }
}

impl Env for ToyEnv {
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.v = rng.random_range(0.0..self.v_init_max);
        self.x = 0.0;
        self.t = 0;
        Ok(())
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.v]
    }

    fn speed(&self) -> f64 {
        self.v
    }

    fn step(&mut self, accel: f64) -> Result<EnvStep> {
        if !accel.is_finite() {
            return Err(Error::Config(format!("non-finite acceleration {accel}")));
        }
        let a = accel.clamp(-A_CLIP, A_CLIP);
        let (d, vn) = integrate(self.v, a, FRAME_DT);
        let realized = (vn - self.v) / FRAME_DT;
        self.x += d;
        self.v = vn;
        self.t += 1;
        Ok(EnvStep {
            realized_accel: realized,
            end: (self.t >= self.max_steps).then_some(EpisodeEnd::Truncated),
        })
    }

    fn safety(&self, options: &OptionSet) -> SafetyVector {
        SafetyVector::all_safe(options.len())
    }

    fn interrupt(&self, _rt: &OptionRuntime, _options: &OptionSet) -> bool {
        false
    }
}
