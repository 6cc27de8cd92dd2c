//! Versioned JSON checkpoints holding everything needed to resume training or
//! rebuild a policy for evaluation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{ModelKind, PolicyKind};
use crate::error::{Error, Result};
use crate::learning::bc::BcResult;
use crate::learning::gail::GailState;
use crate::learning::shail::{HierMode, ShailState};
use crate::observation::FEATURE_NAMES;
use crate::options::OptionSet;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelState {
    Bc(BcResult),
    Gail(GailState),
    Hierarchical(ShailState),
}

/// Seed plus the number of completed iterations. Every iteration draws from
/// its own stream, so this pair fixes the generator state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ModelKind,
    pub feature_layout: Vec<String>,
    pub option_set_hash: Option<String>,
    pub rng: RngState,
    pub model: ModelState,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, seed: u64, model: ModelState) -> Self {
        let (iteration, option_set_hash) = match &model {
            ModelState::Bc(_) => (0, None),
            ModelState::Gail(s) => (s.iteration, None),
            ModelState::Hierarchical(s) => (s.iteration, Some(s.options.hash())),
        };
        Self {
            version: CHECKPOINT_VERSION,
            kind,
            feature_layout: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            option_set_hash,
            rng: RngState { seed, iteration },
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let version = raw.get("version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}, expected {CHECKPOINT_VERSION}",
                version.map_or("missing".to_string(), |v| v.to_string())
            )));
        }
        let ck: Checkpoint = serde_json::from_value(raw)?;
        if ck.feature_layout.len() != FEATURE_NAMES.len() || ck.feature_layout.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b) {
            return Err(Error::Checkpoint("feature layout does not match this build".into()));
        }
        Ok(ck)
    }

    /// Write via a temporary file and rename, so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Policy for evaluation. Hierarchical checkpoints must match `options`
    /// when one is given.
    pub fn policy(&self, options: Option<&OptionSet>) -> Result<PolicyKind> {
        Ok(match &self.model {
            ModelState::Bc(r) => PolicyKind::Gaussian {
                kind: ModelKind::Bc,
                policy: r.policy.clone(),
                obs_norm: r.obs_norm.clone(),
            },
            ModelState::Gail(s) => PolicyKind::Gaussian {
                kind: ModelKind::Gail,
                policy: s.policy.clone(),
                obs_norm: s.obs_norm.clone(),
            },
            ModelState::Hierarchical(s) => {
                if let Some(opts) = options {
                    if opts.hash() != s.options.hash() || self.option_set_hash.as_deref() != Some(opts.hash().as_str()) {
                        return Err(Error::Checkpoint("option set does not match the checkpoint".into()));
                    }
                }
                PolicyKind::Hierarchical {
                    mode: s.mode,
                    policy: s.policy.clone(),
                    obs_norm: s.obs_norm.clone(),
                    options: s.options.clone(),
                }
            }
        })
    }
}

pub fn mode_for(kind: ModelKind) -> Option<HierMode> {
    match kind {
        ModelKind::Shail => Some(HierMode::Shail),
        ModelKind::Hail => Some(HierMode::Hail),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::bc::{bc_init, BcConfig};
    use crate::learning::ExpertSet;
    use crate::observation::OBS_DIM;

    fn sample() -> Checkpoint {
        let e = ExpertSet {
            observations: vec![vec![0.5; OBS_DIM], vec![1.5; OBS_DIM]],
            actions: vec![0.1, -0.3],
        };
        let (policy, obs_norm) = bc_init(&e, &BcConfig::default());
        Checkpoint::new(
            ModelKind::Bc,
            3,
            ModelState::Bc(BcResult {
                policy,
                obs_norm,
                train_loss: vec![],
                val_loss: vec![],
            }),
        )
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_other_versions() {
        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        v["version"] = serde_json::json!(2);
        let err = Checkpoint::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }
}
