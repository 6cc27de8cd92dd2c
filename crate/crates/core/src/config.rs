//! Run configuration read from TOML. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::ModelKind;
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::learning::bc::BcConfig;
use crate::learning::gail::GailConfig;
use crate::learning::shail::{HierMode, ShailConfig};
use crate::scenario::SynthParams;
use crate::simulator::SimConfig;

/// Where episodes come from: a recorded CSV file or the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthParams>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            synthetic: Some(SynthParams::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub kind: ModelKind,
    /// Training episodes are truncated after this many frames.
    pub max_episode_steps: usize,
    pub bc: BcConfig,
    pub gail: GailConfig,
    pub shail: ShailConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Shail,
            max_episode_steps: 300,
            bc: BcConfig::default(),
            gail: GailConfig::default(),
            shail: ShailConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.dataset, &self.data.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Config("set either data.dataset or data.synthetic, not both".into())),
            (None, None) => return Err(Error::Config("no data source configured".into())),
            (None, Some(p)) => p.validate()?,
            (Some(_), None) => {}
        }
        if self.train.max_episode_steps == 0 {
            return Err(Error::Config("train.max_episode_steps must be positive".into()));
        }
        self.train.bc.validate()?;
        self.train.gail.validate()?;
        self.train.shail.validate()
    }

    /// Copy the top-level seed and model kind into the sub-configs so that the
    /// stored config fully describes the run.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.train.bc.seed = c.seed;
        c.train.gail.seed = c.seed;
        c.train.shail.seed = c.seed;
        c.eval.seed = c.seed;
        if let Some(mode) = match c.train.kind {
            ModelKind::Shail => Some(HierMode::Shail),
            ModelKind::Hail => Some(HierMode::Hail),
            _ => None,
        } {
            c.train.shail.mode = mode;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("seed = 1\n[train]\nkind = \"gail\"\nlearning_rate = 3.0\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = RunConfig::from_toml("[train.gail.ppo]\ncliip = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn partial_config_and_round_trip() {
        let cfg = RunConfig::from_toml("seed = 4\n[train]\nkind = \"hail\"\n[train.shail]\niterations = 3\n").unwrap();
        assert_eq!(cfg.train.kind, ModelKind::Hail);
        assert_eq!(cfg.train.shail.iterations, 3);
        let r = cfg.resolved();
        assert_eq!(r.train.shail.mode, HierMode::Hail);
        assert_eq!(r.train.shail.seed, 4);
        let back = RunConfig::from_toml(&r.to_toml().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn bad_kind_rejected() {
        assert!(RunConfig::from_toml("[train]\nkind = \"dqn\"\n").is_err());
    }
}
