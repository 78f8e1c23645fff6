//! Value-based and actor-critic agents built on [`BottleneckedNetwork`].
//!
//! DQN reads action values from the `"q"` head. PPO uses a shared encoder
//! with `"policy"` (logits) and `"value"` heads.

mod dqn;
mod ppo;
mod replay;

use thiserror::Error;

use crate::envs::EnvError;
use crate::linalg::Matrix;
use crate::nn::{BottleneckedNetwork, NnError};
use crate::rng::SeededRng;

pub use dqn::{dqn_loss_and_grads, dqn_td_target, dqn_td_targets, dqn_update, epsilon, DqnConfig};
pub use ppo::{
    gae, log_softmax, ppo_loss_and_grads, ppo_update, PpoConfig, PpoLossParts, PpoStats, Rollout,
};
pub use replay::{DqnBatch, ReplayBuffer, Transition};

pub const Q_HEAD: &str = "q";
pub const POLICY_HEAD: &str = "policy";
pub const VALUE_HEAD: &str = "value";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {what} during update")]
    NonFinite { what: &'static str },
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-wise [`argmax`].
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows()).map(|i| argmax(m.row(i))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActMode {
    /// Argmax of the Q head, or of the policy logits for actor-critic nets.
    Greedy,
    /// Uniform random action with probability `ε`, greedy otherwise.
    Epsilon(f64),
    /// Sample from the softmax of the policy head.
    Stochastic,
}

fn greedy_head(net: &BottleneckedNetwork) -> &'static str {
    if net.has_head(Q_HEAD) {
        Q_HEAD
    } else {
        POLICY_HEAD
    }
}

/// Picks an action for a single observation.
pub fn act(
    net: &BottleneckedNetwork,
    obs: &[f64],
    mode: ActMode,
    rng: &mut SeededRng,
) -> Result<usize, AgentError> {
    match mode {
        ActMode::Greedy => {
            let (out, _) = net.forward(obs, greedy_head(net))?;
            Ok(argmax(&out))
        }
        ActMode::Epsilon(eps) => {
            // The random draw happens first so the rng stream does not
            // depend on network outputs.
            let explore = rng.uniform() < eps;
            let n = net.head(greedy_head(net))?.output_dim();
            if explore {
                Ok(rng.below(n))
            } else {
                act(net, obs, ActMode::Greedy, rng)
            }
        }
        ActMode::Stochastic => {
            let (logits, _) = net.forward(obs, POLICY_HEAD)?;
            Ok(sample_categorical(&logits, rng))
        }
    }
}

/// Draws from `softmax(logits)` by inverting the cumulative distribution.
pub fn sample_categorical(logits: &[f64], rng: &mut SeededRng) -> usize {
    let lp = log_softmax(logits);
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, l) in lp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    logits.len() - 1
}
