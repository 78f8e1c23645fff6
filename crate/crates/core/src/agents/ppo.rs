use serde::{Deserialize, Serialize};

use super::{AgentError, POLICY_HEAD, VALUE_HEAD};
use crate::linalg::Matrix;
use crate::nn::{Adam, BottleneckedNetwork, NetworkGradients};
use crate::rng::SeededRng;

/// PPO hyperparameters for the shared-encoder actor-critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub lr: f64,
    pub anneal_lr: bool,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub minibatches: usize,
    /// Environment steps per rollout.
    pub rollout_len: usize,
    pub normalize_advantages: bool,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            anneal_lr: false,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            epochs: 4,
            minibatches: 4,
            rollout_len: 128,
            normalize_advantages: false,
            adam_eps: 1e-5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: &str| Err(AgentError::InvalidConfig(msg.to_string()));
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma must lie in [0, 1) and lambda in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if self.epochs == 0 || self.minibatches == 0 || self.rollout_len < self.minibatches {
            return bad("epochs and minibatches must be positive, rollout_len >= minibatches");
        }
        if !(self.lr >= 0.0 && self.max_grad_norm > 0.0) {
            return bad("lr must be non-negative and max_grad_norm positive");
        }
        Ok(())
    }
}

/// Generalized advantage estimation. `values` carries one extra bootstrap
/// entry; `dones[t]` cuts the recursion after step `t`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
    let n = rewards.len();
    if values.len() != n + 1 {
        return Err(AgentError::LengthMismatch {
            what: "values (with bootstrap)",
            expected: n + 1,
            got: values.len(),
        });
    }
    if dones.len() != n {
        return Err(AgentError::LengthMismatch {
            what: "dones",
            expected: n,
            got: dones.len(),
        });
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * values[t + 1] - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// One on-policy batch with its behaviour statistics.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub obs: Matrix,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn check(&self) -> Result<(), AgentError> {
        let n = self.obs.rows();
        for (what, len) in [
            ("actions", self.actions.len()),
            ("log_probs", self.log_probs.len()),
            ("values", self.values.len()),
            ("advantages", self.advantages.len()),
            ("returns", self.returns.len()),
        ] {
            if len != n {
                return Err(AgentError::LengthMismatch { what, expected: n, got: len });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PpoLossParts {
    /// `−mean(min(r·A, clip(r)·A))`.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    /// `max |ratio − 1|` over the minibatch.
    pub max_ratio_dev: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate loss and analytic gradients for one minibatch.
pub fn ppo_loss_and_grads(
    net: &BottleneckedNetwork,
    obs: &Matrix,
    actions: &[usize],
    old_log_probs: &[f64],
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
) -> Result<(PpoLossParts, NetworkGradients), AgentError> {
    let (outs, cache) = net.forward_batch(obs, &[POLICY_HEAD, VALUE_HEAD])?;
    let (logits, values) = (&outs[0], &outs[1]);
    let n = obs.rows();
    let nf = n as f64;
    let n_actions = logits.cols();
    let mut g_logits = Matrix::zeros(n, n_actions);
    let mut g_values = Matrix::zeros(n, 1);
    let mut parts = PpoLossParts::default();
    let mut clipped = 0usize;

    for i in 0..n {
        let a = actions[i];
        if a >= n_actions {
            return Err(AgentError::LengthMismatch { what: "action index", expected: n_actions, got: a });
        }
        let lp = log_softmax(logits.row(i));
        let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let ratio = (lp[a] - old_log_probs[i]).exp();
        let adv = advantages[i];
        let lo = 1.0 - cfg.clip;
        let hi = 1.0 + cfg.clip;
        let clip_active = (adv > 0.0 && ratio > hi) || (adv < 0.0 && ratio < lo);
        let surrogate = (ratio * adv).min(ratio.clamp(lo, hi) * adv);
        parts.policy_loss -= surrogate / nf;
        parts.max_ratio_dev = parts.max_ratio_dev.max((ratio - 1.0).abs());
        clipped += clip_active as usize;

        let entropy: f64 = -probs.iter().zip(&lp).map(|(p, l)| p * l).sum::<f64>();
        parts.entropy += entropy / nf;

        // d(−surrogate)/d logp_a = −A·ratio when the unclipped branch is live.
        let g_logp = if clip_active { 0.0 } else { -adv * ratio / nf };
        let row = g_logits.row_mut(i);
        for j in 0..n_actions {
            let dlogp = if j == a { 1.0 - probs[j] } else { -probs[j] };
            // d(−c·H)/dz_j = c·p_j (log p_j + H)
            let dent = cfg.entropy_coef * probs[j] * (lp[j] + entropy) / nf;
            row[j] = g_logp * dlogp + dent;
        }

        let err = values.get(i, 0) - returns[i];
        parts.value_loss += err * err / nf;
        g_values.set(i, 0, cfg.value_coef * 2.0 * err / nf);
    }
    parts.total = parts.policy_loss + cfg.value_coef * parts.value_loss - cfg.entropy_coef * parts.entropy;
    parts.clip_fraction = clipped as f64 / nf;
    if !parts.total.is_finite() {
        return Err(AgentError::NonFinite { what: "PPO loss" });
    }
    let grads = net.backward(&cache, &[g_logits, g_values])?;
    Ok((parts, grads))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Ratio deviation on the very first minibatch; zero up to rounding.
    pub first_ratio_dev: f64,
    pub updates: usize,
}

/// Several epochs of shuffled minibatch Adam steps on one rollout.
pub fn ppo_update(
    net: &mut BottleneckedNetwork,
    rollout: &Rollout,
    cfg: &PpoConfig,
    opt: &mut Adam,
    rng: &mut SeededRng,
) -> Result<PpoStats, AgentError> {
    rollout.check()?;
    if rollout.is_empty() {
        return Err(AgentError::EmptyBuffer);
    }
    let n = rollout.len();
    let mb = n.div_ceil(cfg.minibatches.max(1));
    let mut stats = PpoStats::default();
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut idx);
        for chunk in idx.chunks(mb) {
            let obs = rollout.obs.select_rows(chunk);
            let pick = |v: &[f64]| chunk.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let actions: Vec<usize> = chunk.iter().map(|&i| rollout.actions[i]).collect();
            let mut adv = pick(&rollout.advantages);
            if cfg.normalize_advantages && adv.len() > 1 {
                let mean = adv.iter().sum::<f64>() / adv.len() as f64;
                let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (adv.len() - 1) as f64;
                let sd = var.sqrt() + 1e-8;
                adv.iter_mut().for_each(|a| *a = (*a - mean) / sd);
            }
            let (parts, mut grads) = ppo_loss_and_grads(
                net,
                &obs,
                &actions,
                &pick(&rollout.log_probs),
                &adv,
                &pick(&rollout.returns),
                cfg,
            )?;
            if stats.updates == 0 {
                stats.first_ratio_dev = parts.max_ratio_dev;
            }
            grads.clip_global_norm(cfg.max_grad_norm);
            if !grads.is_finite() {
                return Err(AgentError::NonFinite { what: "gradient" });
            }
            opt.apply(net, &grads, cfg.lr)?;
            stats.policy_loss += parts.policy_loss;
            stats.value_loss += parts.value_loss;
            stats.entropy += parts.entropy;
            stats.clip_fraction += parts.clip_fraction;
            stats.updates += 1;
        }
    }
    let u = stats.updates as f64;
    stats.policy_loss /= u;
    stats.value_loss /= u;
    stats.entropy /= u;
    stats.clip_fraction /= u;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_lambda_zero_is_td_error() {
        let r = [1.0, 0.5, -0.2];
        let v = [0.3, 0.1, 0.7, 0.9];
        let d = [false, true, false];
        let (adv, ret) = gae(&r, &v, &d, 0.9, 0.0).unwrap();
        assert_eq!(adv[0], 1.0 + 0.9 * 0.1 - 0.3);
        assert_eq!(adv[1], 0.5 - 0.1);
        assert_eq!(adv[2], -0.2 + 0.9 * 0.9 - 0.7);
        for t in 0..3 {
            assert_eq!(ret[t], adv[t] + v[t]);
        }
    }

    #[test]
    fn gae_unrolled_by_hand() {
        let (g, l) = (0.9, 0.8);
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, 0.25, 0.125, 1.0];
        let d0 = 1.0 + g * 0.25 - 0.5;
        let d1 = 2.0 + g * 0.125 - 0.25;
        let d2 = 3.0 + g * 1.0 - 0.125;
        let a2 = d2;
        let a1 = d1 + g * l * a2;
        let a0 = d0 + g * l * a1;
        let (adv, _) = gae(&r, &v, &[false; 3], g, l).unwrap();
        for (x, y) in adv.iter().zip([a0, a1, a2]) {
            assert!((x - y).abs() < 1e-14);
        }
        let (zero, _) = gae(&[0.0; 4], &[0.0; 5], &[false; 4], 0.99, 0.95).unwrap();
        assert!(zero.iter().all(|&a| a == 0.0));
        assert!(gae(&r, &v[..3], &[false; 3], g, l).is_err());
        assert!(gae(&r, &v, &[false; 2], g, l).is_err());
    }

    #[test]
    fn log_softmax_is_stable() {
        let lp = log_softmax(&[1000.0, 1000.0]);
        assert!((lp[0] - (0.5f64).ln()).abs() < 1e-12);
        let total: f64 = log_softmax(&[0.3, -2.0, 5.0]).iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        assert!(PpoConfig { clip: 0.0, ..Default::default() }.validate().is_err());
        assert!(PpoConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
    }
}
