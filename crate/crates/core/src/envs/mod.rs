//! Small deterministic episodic environments.
//!
//! Both tasks expose a discrete action space and a fixed-width real
//! observation. Dynamics are fully deterministic; the reset seed only affects
//! the cart-pole initial state.

mod cartpole;
mod gridworld;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cartpole::{CartPole, CartPoleState, CartPoleParams};
pub use gridworld::{bfs_distance, optimal_return, GridConfig, Gridworld};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("action {action} out of range (environment has {num_actions})")]
    InvalidAction { action: usize, num_actions: usize },
    #[error("step called on a finished episode; call reset first")]
    EpisodeFinished,
    #[error("unknown environment {0:?}")]
    UnknownEnv(String),
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Environment: Send {
    fn observation_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Starts a new episode and returns its first observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<StepResult, EnvError>;
    fn observation(&self) -> Vec<f64>;
    /// Steps taken in the current episode.
    fn elapsed(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    #[serde(rename = "cartpole")]
    CartPole,
    Gridworld,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::CartPole => "cartpole",
            EnvKind::Gridworld => "gridworld",
        }
    }

    pub fn make(self) -> AnyEnv {
        match self {
            EnvKind::CartPole => AnyEnv::CartPole(CartPole::default()),
            EnvKind::Gridworld => AnyEnv::Gridworld(Gridworld::default()),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "cartpole" | "cartpolev1" => Ok(EnvKind::CartPole),
            "gridworld" | "grid" => Ok(EnvKind::Gridworld),
            _ => Err(EnvError::UnknownEnv(s.to_string())),
        }
    }
}

/// Static dispatch over the built-in environments.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    CartPole(CartPole),
    Gridworld(Gridworld),
}

macro_rules! dispatch {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            AnyEnv::CartPole($e) => $body,
            AnyEnv::Gridworld($e) => $body,
        }
    };
}

impl Environment for AnyEnv {
    fn observation_dim(&self) -> usize {
        dispatch!(self, e => e.observation_dim())
    }
    fn num_actions(&self) -> usize {
        dispatch!(self, e => e.num_actions())
    }
    fn horizon(&self) -> usize {
        dispatch!(self, e => e.horizon())
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        dispatch!(self, e => e.reset(seed))
    }
    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        dispatch!(self, e => e.step(action))
    }
    fn observation(&self) -> Vec<f64> {
        dispatch!(self, e => e.observation())
    }
    fn elapsed(&self) -> usize {
        dispatch!(self, e => e.elapsed())
    }
}

pub fn make_env(name: &str) -> Result<AnyEnv, EnvError> {
    Ok(name.parse::<EnvKind>()?.make())
}
