use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agents::{DqnConfig, PpoConfig};
use crate::envs::EnvKind;
use crate::projection::ProjectionMethod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dqn,
    Ppo,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Dqn => "dqn",
            Algorithm::Ppo => "ppo",
        })
    }
}

/// One experiment, read from a TOML file. Every key is optional; an empty
/// file gives the CartPole DQN baseline without a bottleneck.
///
/// ```toml
/// env = "cartpole"
/// algorithm = "dqn"
/// hidden = [128]
/// width = 128
/// k = 2
/// projection = "qr"
/// seeds = [0, 1, 2, 3, 4]
///
/// [dqn]
/// lr = 2.5e-4
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub algorithm: Algorithm,
    /// Encoder hidden widths before the final layer.
    pub hidden: Vec<usize>,
    /// Encoder output width `D`.
    pub width: usize,
    /// Hidden widths inside every head; empty means linear heads.
    pub head_hidden: Vec<usize>,
    /// Bottleneck dimension; absent means no projection.
    pub k: Option<usize>,
    pub projection: ProjectionMethod,
    pub trainable_projection: bool,
    pub total_steps: usize,
    pub eval_points: usize,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub rank_delta: f64,
    /// Feature rows per effective-rank measurement (evenly strided).
    pub rank_max_rows: usize,
    pub dqn: DqnConfig,
    pub ppo: PpoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::CartPole,
            algorithm: Algorithm::Dqn,
            hidden: vec![128],
            width: 128,
            head_hidden: Vec::new(),
            k: None,
            projection: ProjectionMethod::Qr,
            trainable_projection: false,
            total_steps: 500_000,
            eval_points: 100,
            eval_episodes: 10,
            seeds: vec![0, 1, 2, 3, 4],
            rank_delta: 0.01,
            rank_max_rows: 256,
            dqn: DqnConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.width == 0 || self.hidden.contains(&0) || self.head_hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if let Some(k) = self.k {
            if k == 0 || k > self.width {
                return bad(format!("k = {k} must lie in 1..={}", self.width));
            }
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.eval_points == 0 || self.eval_episodes == 0 {
            return bad("eval_points and eval_episodes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.rank_delta) || self.rank_max_rows < 2 {
            return bad("rank_delta must lie in [0, 1) and rank_max_rows be at least 2".into());
        }
        match self.algorithm {
            Algorithm::Dqn => self.dqn.validate()?,
            Algorithm::Ppo => self.ppo.validate()?,
        }
        Ok(())
    }

    /// Steps between evaluations; at least one.
    pub fn eval_interval(&self) -> usize {
        (self.total_steps / self.eval_points).max(1)
    }

    /// Width of the representation the heads see.
    pub fn feature_dim(&self) -> usize {
        self.k.unwrap_or(self.width)
    }
}
