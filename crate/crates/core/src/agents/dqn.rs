use serde::{Deserialize, Serialize};

use super::{argmax, AgentError, DqnBatch, Transition, Q_HEAD};
use crate::linalg::Matrix;
use crate::nn::{Adam, BottleneckedNetwork, NetworkGradients};

/// DQN hyperparameters. Defaults follow the Classic-Control setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub lr: f64,
    pub buffer_size: usize,
    pub batch_size: usize,
    /// Environment steps collected before the first update.
    pub learning_starts: usize,
    /// One gradient step every this many environment steps.
    pub train_interval: usize,
    /// Environment steps between target-network syncs.
    pub target_update: usize,
    /// 1.0 is a hard copy.
    pub tau: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_anneal_steps: usize,
    pub adam_eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            lr: 2.5e-4,
            buffer_size: 10_000,
            batch_size: 128,
            learning_starts: 10_000,
            train_interval: 10,
            target_update: 500,
            tau: 1.0,
            gamma: 0.99,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_anneal_steps: 250_000,
            adam_eps: 1e-8,
            max_grad_norm: None,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: &str| Err(AgentError::InvalidConfig(msg.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.lr >= 0.0) || self.batch_size == 0 || self.buffer_size == 0 {
            return bad("lr must be non-negative, batch and buffer sizes positive");
        }
        if self.train_interval == 0 || self.target_update == 0 {
            return bad("train_interval and target_update must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) || !(self.tau > 0.0) {
            return bad("tau must lie in (0, 1]");
        }
        for e in [self.eps_start, self.eps_end] {
            if !(0.0..=1.0).contains(&e) {
                return bad("epsilon endpoints must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Linear anneal from `eps_start` to `eps_end`, flat afterwards.
pub fn epsilon(step: usize, cfg: &DqnConfig) -> f64 {
    if cfg.eps_anneal_steps == 0 {
        return cfg.eps_end;
    }
    if step >= cfg.eps_anneal_steps {
        return cfg.eps_end;
    }
    let frac = step as f64 / cfg.eps_anneal_steps as f64;
    cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)
}

/// `y = r + γ (1 − done) max_a Q_target(s', a)`.
pub fn dqn_td_target(
    t: &Transition,
    target: &BottleneckedNetwork,
    gamma: f64,
) -> Result<f64, AgentError> {
    if t.done || gamma == 0.0 {
        return Ok(t.reward);
    }
    let (q, _) = target.forward(&t.next_obs, Q_HEAD)?;
    Ok(t.reward + gamma * q[argmax(&q)])
}

/// Batched targets.
pub fn dqn_td_targets(
    batch: &DqnBatch,
    target: &BottleneckedNetwork,
    gamma: f64,
) -> Result<Vec<f64>, AgentError> {
    let q_next = target.infer(&batch.next_obs, Q_HEAD)?;
    Ok((0..batch.len())
        .map(|i| {
            let row = q_next.row(i);
            let bootstrap = if batch.dones[i] { 0.0 } else { row[argmax(row)] };
            batch.rewards[i] + gamma * bootstrap
        })
        .collect())
}

/// Mean squared TD error and its gradient. Only the taken action's Q value
/// receives gradient; the targets are constants.
pub fn dqn_loss_and_grads(
    net: &BottleneckedNetwork,
    target: &BottleneckedNetwork,
    batch: &DqnBatch,
    gamma: f64,
) -> Result<(f64, NetworkGradients), AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBuffer);
    }
    let y = dqn_td_targets(batch, target, gamma)?;
    let (outs, cache) = net.forward_batch(&batch.obs, &[Q_HEAD])?;
    let q = &outs[0];
    let n = batch.len() as f64;
    let mut grad = Matrix::zeros(q.rows(), q.cols());
    let mut loss = 0.0;
    for (i, &a) in batch.actions.iter().enumerate() {
        if a >= q.cols() {
            return Err(AgentError::LengthMismatch {
                what: "action index",
                expected: q.cols(),
                got: a,
            });
        }
        let err = q.get(i, a) - y[i];
        loss += err * err;
        grad.set(i, a, 2.0 * err / n);
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(AgentError::NonFinite { what: "TD loss" });
    }
    let grads = net.backward(&cache, &[grad])?;
    Ok((loss, grads))
}

/// One Adam step on the TD loss; returns the pre-update loss.
pub fn dqn_update(
    net: &mut BottleneckedNetwork,
    target: &BottleneckedNetwork,
    batch: &DqnBatch,
    cfg: &DqnConfig,
    opt: &mut Adam,
) -> Result<f64, AgentError> {
    let (loss, mut grads) = dqn_loss_and_grads(net, target, batch, cfg.gamma)?;
    if let Some(max) = cfg.max_grad_norm {
        grads.clip_global_norm(max);
    }
    if !grads.is_finite() {
        return Err(AgentError::NonFinite { what: "gradient" });
    }
    opt.apply(net, &grads, cfg.lr)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::agents::tests::constant_q_net;
    use crate::nn::{Activation, DenseLayer, MlpNetwork};

    fn transition(reward: f64, done: bool) -> Transition {
        Transition {
            obs: vec![0.0; 3],
            action: 0,
            reward,
            next_obs: vec![0.0; 3],
            done,
        }
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = DqnConfig::default();
        assert_eq!(epsilon(0, &cfg), 1.0);
        assert!((epsilon(125_000, &cfg) - 0.525).abs() < 1e-12);
        assert_eq!(epsilon(250_000, &cfg), 0.05);
        assert_eq!(epsilon(10_000_000, &cfg), 0.05);
    }

    #[test]
    fn td_target_cases() {
        let target = constant_q_net(&[1.0, 3.0]);
        assert_eq!(dqn_td_target(&transition(1.0, true), &target, 0.99).unwrap(), 1.0);
        assert_eq!(dqn_td_target(&transition(1.0, false), &target, 0.0).unwrap(), 1.0);
        let y = dqn_td_target(&transition(1.0, false), &target, 0.99).unwrap();
        assert!((y - 3.97).abs() < 1e-12);
        let batch = DqnBatch::from_transitions(&[transition(1.0, false), transition(2.0, true)]).unwrap();
        let ys = dqn_td_targets(&batch, &target, 0.99).unwrap();
        assert!((ys[0] - 3.97).abs() < 1e-12);
        assert_eq!(ys[1], 2.0);
    }

    #[test]
    fn matched_targets_leave_parameters_alone() {
        // Q(s, ·) = (1, 3) everywhere; with γ = 0 and r = Q(s, a) the loss is 0.
        let mut net = constant_q_net(&[1.0, 3.0]);
        let target = net.clone();
        let mut t = transition(1.0, false);
        let mut t2 = transition(3.0, true);
        t2.action = 1;
        t.done = true;
        let batch = DqnBatch::from_transitions(&[t, t2]).unwrap();
        let before = net.clone();
        let mut opt = Adam::default();
        let loss = dqn_update(&mut net, &target, &batch, &DqnConfig { gamma: 0.0, ..Default::default() }, &mut opt)
            .unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net.encoder(), before.encoder());
        assert_eq!(net.heads(), before.heads());
    }

    #[test]
    fn sgd_step_moves_q_toward_target() {
        // q = u·(e·x) + b on one sample. With g = 2(q − y) one SGD step
        // moves e, u and b by −η·g·(u·x, e·x, 1).
        let enc = MlpNetwork::new(vec![DenseLayer::new(Matrix::identity(1), None, Activation::Identity).unwrap()])
            .unwrap();
        let head = MlpNetwork::new(vec![DenseLayer::new(
            Matrix::new(1, 1, vec![0.5]).unwrap(),
            Some(vec![0.1]),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let mut net =
            BottleneckedNetwork::new(enc, None, BTreeMap::from([(Q_HEAD.to_string(), head)]), false).unwrap();
        let target = net.clone();
        let x = 2.0;
        let t = Transition { obs: vec![x], action: 0, reward: 4.0, next_obs: vec![0.0], done: true };
        let batch = DqnBatch::from_transitions(&[t]).unwrap();
        let q0 = net.forward(&[x], Q_HEAD).unwrap().0[0];
        let (_, grads) = dqn_loss_and_grads(&net, &target, &batch, 0.99).unwrap();
        let eta = 0.01;
        crate::nn::apply_sgd(&mut net, &grads, eta).unwrap();
        let q1 = net.forward(&[x], Q_HEAD).unwrap().0[0];
        let (e, u, b) = (1.0, 0.5, 0.1);
        let g = 2.0 * (q0 - 4.0);
        let expected = (u - eta * g * e * x) * (e - eta * g * u * x) * x + (b - eta * g);
        assert!((q1 - expected).abs() < 1e-12);
        assert!((4.0 - q1).abs() < (4.0 - q0).abs());
    }

    #[test]
    fn config_validation() {
        assert!(DqnConfig::default().validate().is_ok());
        assert!(DqnConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(DqnConfig { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(DqnConfig { train_interval: 0, ..Default::default() }.validate().is_err());
    }
}
