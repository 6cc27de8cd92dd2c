//! Training loops and the tabular occupancy checker.

pub mod bc;
pub mod discriminator;
pub mod env;
pub mod gail;
pub mod occupancy;
pub mod ppo;
pub mod shail;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::observation::NormStats;
use crate::scenario::ExpertTransition;

pub use bc::{bc_nll_grad, bc_train, BcConfig};
pub use discriminator::{discriminator_loss_grad, discriminator_update, imagined_reward, DiscConfig, Discriminator};
pub use env::{Env, EnvStep, EpisodeEnd, SimEnv, ToyEnv};
pub use gail::{gail_init, gail_iteration, gail_train, GailConfig, GailState};
pub use occupancy::{flat_occupancy, hierarchical_occupancy, FlatMdp, TabularOption, TabularOptionsMdp};
pub use ppo::{
    gae, ppo_surrogate_grad, ppo_update, value_loss_grad, CategoricalPolicy, GaeStep, PpoConfig, PpoPolicy, PpoSample, PpoStats,
};
pub use shail::{shail_collect, shail_init, shail_iteration, shail_train, HierMode, OptionSample, ShailConfig, ShailState};

/// Seeded generator for one iteration and worker. Each (iteration, worker)
/// pair gets its own ChaCha stream, so results do not depend on scheduling.
pub fn iteration_rng(seed: u64, iteration: usize, worker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 16) | (worker as u64 & 0xffff));
    rng
}

/// Expert (observation, action) pairs used by every imitation learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSet {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<f64>,
}

impl ExpertSet {
    pub fn from_transitions(ts: &[ExpertTransition]) -> Self {
        Self {
            observations: ts.iter().map(|t| t.observation.clone()).collect(),
            actions: ts.iter().map(|t| t.action).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.first().map_or(0, |o| o.len())
    }

    pub fn obs_norm(&self) -> NormStats {
        NormStats::from_rows(self.observations.iter().map(|o| o.as_slice()), self.obs_dim())
    }

    pub fn action_norm(&self) -> NormStats {
        NormStats::from_rows(self.actions.iter().map(std::slice::from_ref), 1)
    }
}

/// Per-iteration training record written as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub disc_loss: f64,
    pub disc_accuracy: f64,
    pub mean_reward: f64,
    pub mean_r_tilde: Option<f64>,
    pub mean_t_o: Option<f64>,
    pub episodes: usize,
    pub train_collision_rate: f64,
    pub validation_success: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub ppo_epochs: usize,
}
