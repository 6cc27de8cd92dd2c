//! Every driving model behind one interface: expert replay, IDM, the two
//! Gaussian imitation policies and the two option-based policies.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::discriminator::INPUT_CLIP;
use crate::learning::ppo::CategoricalPolicy;
use crate::learning::shail::HierMode;
use crate::nn::GaussianPolicy;
use crate::observation::{encode, NormStats};
use crate::options::{initiate, option_step, predict_safety, should_interrupt, OptionRuntime, OptionSet, SafetyVector};
use crate::simulator::{idm_accel_opt, SimState, Simulator};
use crate::A_CLIP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ExpertReplay,
    Idm,
    Bc,
    Gail,
    Hail,
    Shail,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ExpertReplay => "expert_replay",
            ModelKind::Idm => "idm",
            ModelKind::Bc => "bc",
            ModelKind::Gail => "gail",
            ModelKind::Hail => "hail",
            ModelKind::Shail => "shail",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "expert_replay" | "expert" => ModelKind::ExpertReplay,
            "idm" => ModelKind::Idm,
            "bc" => ModelKind::Bc,
            "gail" => ModelKind::Gail,
            "hail" => ModelKind::Hail,
            "shail" => ModelKind::Shail,
            other => return Err(Error::Config(format!("unknown model kind `{other}`"))),
        })
    }

    pub fn is_trainable(self) -> bool {
        matches!(self, ModelKind::Bc | ModelKind::Gail | ModelKind::Hail | ModelKind::Shail)
    }
}

/// A driving model with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    ExpertReplay,
    Idm,
    Gaussian {
        kind: ModelKind,
        policy: GaussianPolicy,
        obs_norm: NormStats,
    },
    Hierarchical {
        mode: HierMode,
        policy: CategoricalPolicy,
        obs_norm: NormStats,
        options: OptionSet,
    },
}

impl PolicyKind {
    pub fn kind(&self) -> ModelKind {
        match self {
            PolicyKind::ExpertReplay => ModelKind::ExpertReplay,
            PolicyKind::Idm => ModelKind::Idm,
            PolicyKind::Gaussian { kind, .. } => *kind,
            PolicyKind::Hierarchical { mode: HierMode::Shail, .. } => ModelKind::Shail,
            PolicyKind::Hierarchical { mode: HierMode::Hail, .. } => ModelKind::Hail,
        }
    }

    pub fn agent(&self) -> KindAgent<'_> {
        KindAgent { kind: self, runtime: None }
    }
}

/// Per-episode controller. Implementations may keep state across frames.
pub trait Agent {
    fn act(&mut self, sim: &Simulator, state: &SimState, rng: &mut ChaCha8Rng) -> Result<f64>;
}

/// Episode state for a [`PolicyKind`]; only the option executor is stateful.
pub struct KindAgent<'a> {
    kind: &'a PolicyKind,
    runtime: Option<OptionRuntime>,
}

impl KindAgent<'_> {
    pub fn runtime(&self) -> Option<&OptionRuntime> {
        self.runtime.as_ref()
    }
}

impl Agent for KindAgent<'_> {
    fn act(&mut self, sim: &Simulator, state: &SimState, rng: &mut ChaCha8Rng) -> Result<f64> {
        let a = match self.kind {
            PolicyKind::ExpertReplay => sim.expert_accel(state)?,
            PolicyKind::Idm => idm_accel_opt(sim.select_follow_vehicle(state), state.ego.v, &sim.config().idm),
            PolicyKind::Gaussian { policy, obs_norm, .. } => {
                let x = obs_norm.normalize_clipped(&encode(sim, state).to_vec(), INPUT_CLIP);
                policy.head(&x)?.sample(rng)[0]
            }
            PolicyKind::Hierarchical {
                mode,
                policy,
                obs_norm,
                options,
            } => {
                let decide = match &self.runtime {
                    None => true,
                    Some(rt) => rt.remaining() == 0 || (mode.interrupts() && should_interrupt(sim, state, rt, options)),
                };
                if decide {
                    let mask = if mode.masked() {
                        predict_safety(sim, state, options)
                    } else {
                        SafetyVector::all_safe(options.len())
                    };
                    let x = obs_norm.normalize_clipped(&encode(sim, state).to_vec(), INPUT_CLIP);
                    let o = policy.dist(&x, &mask.p)?.sample(rng);
                    self.runtime = Some(initiate(o, &options.specs[o], state.ego.v));
                }
                let rt = self.runtime.as_mut().expect("option runtime");
                option_step(rt)?.0
            }
        };
        Ok(a.clamp(-A_CLIP, A_CLIP))
    }
}

/// Acceleration chosen by `kind` in `state`, starting a fresh option if needed.
pub fn act(kind: &PolicyKind, sim: &Simulator, state: &SimState, rng: &mut ChaCha8Rng) -> Result<f64> {
    kind.agent().act(sim, state, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in [
            ModelKind::ExpertReplay,
            ModelKind::Idm,
            ModelKind::Bc,
            ModelKind::Gail,
            ModelKind::Hail,
            ModelKind::Shail,
        ] {
            assert_eq!(ModelKind::parse(k.name()).unwrap(), k);
        }
        assert!(ModelKind::parse("dqn").is_err());
        assert!(!ModelKind::Idm.is_trainable());
    }
}
