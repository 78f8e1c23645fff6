use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{Algorithm, ExperimentConfig, HarnessError};
use crate::agents::{
    act, argmax, dqn_update, epsilon, gae, log_softmax, ppo_update, sample_categorical, ActMode,
    AgentError, ReplayBuffer, Rollout, Transition, POLICY_HEAD, Q_HEAD, VALUE_HEAD,
};
use crate::diagnostics::{effective_rank, feature_norm_stats};
use crate::envs::{AnyEnv, Environment};
use crate::linalg::Matrix;
use crate::nn::{save_checkpoint, Activation, Adam, BottleneckedNetwork, MlpNetwork};
use crate::projection::make_basis;
use crate::rng::{mix, SeededRng};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

const INIT_STREAM: u64 = 1;
const BASIS_STREAM: u64 = 2;
const ENV_STREAM: u64 = 3;
const ACT_STREAM: u64 = 4;
const SAMPLE_STREAM: u64 = 5;
const EVAL_STREAM: u64 = 6;

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub eval_return_mean: f64,
    pub feature_norm_mean: f64,
    pub k_eff: usize,
    pub k_eff_normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub curve: Vec<EvalPoint>,
    /// Mean eval return over the last few eval points.
    pub final_return: Option<f64>,
    /// Same window over the mean feature norm.
    pub final_feature_norm: Option<f64>,
    pub failure: Option<RunFailure>,
    /// False if a fixed basis was ever found modified.
    pub basis_intact: bool,
    pub network: BottleneckedNetwork,
    pub metric_log: Vec<u8>,
    pub run_dir: Option<PathBuf>,
}

impl RunResult {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Encoder `obs → hidden… → D` (ReLU, orthogonal init with gain √2), an
/// optional projection, and heads (linear unless `head_hidden` is set).
pub fn build_network(
    cfg: &ExperimentConfig,
    obs_dim: usize,
    n_actions: usize,
    seed: u64,
) -> Result<BottleneckedNetwork, HarnessError> {
    let mut rng = SeededRng::derived(seed, INIT_STREAM);
    let mut dims = vec![obs_dim];
    dims.extend(&cfg.hidden);
    dims.push(cfg.width);
    let encoder = MlpNetwork::orthogonal(
        &dims,
        Activation::Relu,
        Activation::Relu,
        std::f64::consts::SQRT_2,
        true,
        &mut rng,
    )?;
    let basis = cfg
        .k
        .map(|k| make_basis(cfg.width, k, cfg.projection, mix(seed, BASIS_STREAM)))
        .transpose()?;
    let head_dims = |out: usize| {
        let mut d = vec![cfg.feature_dim()];
        d.extend(&cfg.head_hidden);
        d.push(out);
        d
    };
    let (relu, linear) = (Activation::Relu, Activation::Identity);
    let heads = match cfg.algorithm {
        Algorithm::Dqn => BTreeMap::from([(
            Q_HEAD.to_string(),
            MlpNetwork::uniform_fan_in(&head_dims(n_actions), relu, linear, true, &mut rng)?,
        )]),
        Algorithm::Ppo => BTreeMap::from([
            (
                POLICY_HEAD.to_string(),
                MlpNetwork::orthogonal(&head_dims(n_actions), relu, linear, 0.01, true, &mut rng)?,
            ),
            (
                VALUE_HEAD.to_string(),
                MlpNetwork::orthogonal(&head_dims(1), relu, linear, 1.0, true, &mut rng)?,
            ),
        ]),
    };
    Ok(BottleneckedNetwork::new(encoder, basis, heads, cfg.trainable_projection)?)
}

/// Greedy evaluation outcome: per-episode returns and every visited head
/// input, in visit order.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub returns: Vec<f64>,
    pub features: Matrix,
}

/// Runs `episodes` greedy episodes in lockstep (one batched forward per
/// step). Episode `e` is reset with seed `mix(seed, e)`.
pub fn evaluate(
    net: &BottleneckedNetwork,
    template: &AnyEnv,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary, HarnessError> {
    let head = if net.has_head(Q_HEAD) { Q_HEAD } else { POLICY_HEAD };
    let mut envs: Vec<AnyEnv> = (0..episodes).map(|_| template.clone()).collect();
    let mut obs: Vec<Vec<f64>> = envs
        .iter_mut()
        .enumerate()
        .map(|(e, env)| env.reset(mix(seed, e as u64)))
        .collect();
    let mut returns = vec![0.0; episodes];
    let mut active: Vec<usize> = (0..episodes).collect();
    let mut features = Vec::new();
    let mut rows = 0;
    while !active.is_empty() {
        let dim = obs[active[0]].len();
        let flat: Vec<f64> = active.iter().flat_map(|&e| obs[e].iter().copied()).collect();
        let x = Matrix::new(active.len(), dim, flat).map_err(|e| HarnessError::Config(e.to_string()))?;
        let (outs, cache) = net.forward_batch(&x, &[head])?;
        features.extend_from_slice(cache.h.as_slice());
        rows += active.len();
        let mut still = Vec::with_capacity(active.len());
        for (i, &e) in active.iter().enumerate() {
            let step = envs[e].step(argmax(outs[0].row(i)))?;
            returns[e] += step.reward;
            if !step.done() {
                obs[e] = step.observation;
                still.push(e);
            }
        }
        active = still;
    }
    let features = Matrix::new(rows, net.feature_dim(), features).unwrap_or_else(|_| {
        // Non-finite features: keep the shape so the caller can flag the run.
        Matrix::from_fn(rows.max(1), net.feature_dim(), |_, _| f64::INFINITY)
    });
    Ok(EvalSummary { returns, features })
}

fn strided_rows(x: &Matrix, max_rows: usize) -> Matrix {
    let n = x.rows();
    if n <= max_rows {
        return x.clone();
    }
    let idx: Vec<usize> = (0..max_rows).map(|i| i * n / max_rows).collect();
    x.select_rows(&idx)
}

fn eval_point(
    net: &BottleneckedNetwork,
    cfg: &ExperimentConfig,
    template: &AnyEnv,
    seed: u64,
    step: usize,
) -> Result<EvalPoint, HarnessError> {
    let summary = evaluate(net, template, cfg.eval_episodes, mix(mix(seed, EVAL_STREAM), step as u64))?;
    let ret = summary.returns.iter().sum::<f64>() / summary.returns.len() as f64;
    let norms = feature_norm_stats(&summary.features)?;
    let (k_eff, k_norm) = if summary.features.is_finite() && summary.features.rows() >= 2 {
        let rep = effective_rank(&strided_rows(&summary.features, cfg.rank_max_rows), cfg.rank_delta)?;
        (rep.k_eff, rep.k_norm)
    } else {
        (0, 0.0)
    };
    Ok(EvalPoint {
        step,
        eval_return_mean: ret,
        feature_norm_mean: norms.mean_l2,
        k_eff,
        k_eff_normalized: k_norm,
    })
}

/// Line-delimited JSON, one [`EvalPoint`] per line.
pub fn metric_log_bytes(curve: &[EvalPoint]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in curve {
        out.extend(serde_json::to_vec(p).expect("plain struct"));
        out.push(b'\n');
    }
    out
}

fn bases_identical(a: Option<&crate::projection::ProjectionBasis>, b: Option<&crate::projection::ProjectionBasis>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a
            .matrix()
            .as_slice()
            .iter()
            .zip(b.matrix().as_slice())
            .all(|(x, y)| x.to_bits() == y.to_bits()),
        (None, None) => true,
        _ => false,
    }
}

struct Tracker<'a> {
    cfg: &'a ExperimentConfig,
    template: AnyEnv,
    seed: u64,
    curve: Vec<EvalPoint>,
    initial_basis: Option<crate::projection::ProjectionBasis>,
    basis_intact: bool,
}

impl Tracker<'_> {
    fn due(&self, step: usize) -> bool {
        step.is_multiple_of(self.cfg.eval_interval()) && self.curve.len() < self.cfg.eval_points
    }

    /// Records an eval point; returns a failure if the network went bad.
    fn record(&mut self, net: &BottleneckedNetwork, step: usize) -> Result<Option<RunFailure>, HarnessError> {
        if !self.cfg.trainable_projection && !bases_identical(net.basis(), self.initial_basis.as_ref()) {
            self.basis_intact = false;
        }
        if !net.is_finite() {
            return Ok(Some(RunFailure { step, reason: "non-finite parameters".into() }));
        }
        let point = eval_point(net, self.cfg, &self.template, self.seed, step)?;
        let finite = point.feature_norm_mean.is_finite() && point.eval_return_mean.is_finite();
        debug!("seed {} step {step}: return {:.2}", self.seed, point.eval_return_mean);
        self.curve.push(point);
        Ok((!finite).then(|| RunFailure { step, reason: "non-finite features".into() }))
    }
}

fn nan_failure(step: usize, err: AgentError) -> Result<RunFailure, HarnessError> {
    match err {
        AgentError::NonFinite { what } => Ok(RunFailure { step, reason: format!("non-finite {what}") }),
        other => Err(other.into()),
    }
}

fn train_dqn(
    cfg: &ExperimentConfig,
    seed: u64,
    net: &mut BottleneckedNetwork,
    tracker: &mut Tracker,
) -> Result<Option<RunFailure>, HarnessError> {
    let d = &cfg.dqn;
    let mut env = cfg.env.make();
    let mut target = net.clone();
    let mut opt = Adam::new(0.9, 0.999, d.adam_eps);
    let mut buffer = ReplayBuffer::new(d.buffer_size, env.observation_dim());
    let mut act_rng = SeededRng::derived(seed, ACT_STREAM);
    let mut sample_rng = SeededRng::derived(seed, SAMPLE_STREAM);
    let env_seed = mix(seed, ENV_STREAM);
    let mut episode = 0u64;
    let mut obs = env.reset(mix(env_seed, episode));

    for step in 1..=cfg.total_steps {
        let action = act(net, &obs, ActMode::Epsilon(epsilon(step - 1, d)), &mut act_rng)?;
        let r = env.step(action)?;
        let done = r.done();
        let next = r.observation;
        buffer.push(&Transition {
            obs,
            action,
            reward: r.reward,
            next_obs: next.clone(),
            done: r.terminated,
        })?;
        obs = if done {
            episode += 1;
            env.reset(mix(env_seed, episode))
        } else {
            next
        };

        if step > d.learning_starts && step % d.train_interval == 0 {
            let batch = buffer.sample(d.batch_size, &mut sample_rng)?;
            if let Err(e) = dqn_update(net, &target, &batch, d, &mut opt) {
                return nan_failure(step, e).map(Some);
            }
        }
        if step % d.target_update == 0 {
            target.soft_update_from(net, d.tau)?;
        }
        if tracker.due(step) {
            if let Some(f) = tracker.record(net, step)? {
                return Ok(Some(f));
            }
        }
    }
    Ok(None)
}

fn train_ppo(
    cfg: &ExperimentConfig,
    seed: u64,
    net: &mut BottleneckedNetwork,
    tracker: &mut Tracker,
) -> Result<Option<RunFailure>, HarnessError> {
    let p = &cfg.ppo;
    let mut env = cfg.env.make();
    let obs_dim = env.observation_dim();
    let mut opt = Adam::new(0.9, 0.999, p.adam_eps);
    let mut act_rng = SeededRng::derived(seed, ACT_STREAM);
    let mut shuffle_rng = SeededRng::derived(seed, SAMPLE_STREAM);
    let env_seed = mix(seed, ENV_STREAM);
    let mut episode = 0u64;
    let mut obs = env.reset(mix(env_seed, episode));
    let num_updates = cfg.total_steps.div_ceil(p.rollout_len).max(1);
    let mut step = 0;
    let mut update = 0;

    while step < cfg.total_steps {
        let len = p.rollout_len.min(cfg.total_steps - step);
        let mut flat_obs = Vec::with_capacity(len * obs_dim);
        let (mut actions, mut logps, mut values, mut rewards, mut dones) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for _ in 0..len {
            let x = Matrix::new(1, obs_dim, obs.clone()).map_err(|e| HarnessError::Config(e.to_string()))?;
            let (outs, _) = net.forward_batch(&x, &[POLICY_HEAD, VALUE_HEAD])?;
            let logits = outs[0].row(0);
            let action = sample_categorical(logits, &mut act_rng);
            flat_obs.extend_from_slice(&obs);
            actions.push(action);
            logps.push(log_softmax(logits)[action]);
            values.push(outs[1].get(0, 0));
            let r = env.step(action)?;
            step += 1;
            rewards.push(r.reward);
            dones.push(r.done());
            obs = if r.done() {
                episode += 1;
                env.reset(mix(env_seed, episode))
            } else {
                r.observation
            };
            if tracker.due(step) {
                if let Some(f) = tracker.record(net, step)? {
                    return Ok(Some(f));
                }
            }
        }
        let x = Matrix::new(1, obs_dim, obs.clone()).map_err(|e| HarnessError::Config(e.to_string()))?;
        values.push(net.infer(&x, VALUE_HEAD)?.get(0, 0));
        let (advantages, returns) = gae(&rewards, &values, &dones, p.gamma, p.lambda)?;
        values.pop();
        let rollout = Rollout {
            obs: Matrix::new(len, obs_dim, flat_obs).map_err(|e| HarnessError::Config(e.to_string()))?,
            actions,
            log_probs: logps,
            values,
            advantages,
            returns,
        };
        let mut local = p.clone();
        if p.anneal_lr {
            local.lr = p.lr * (1.0 - update as f64 / num_updates as f64);
        }
        // Tiny trailing rollouts cannot be split into minibatches.
        local.minibatches = local.minibatches.min(len);
        if let Err(e) = ppo_update(net, &rollout, &local, &mut opt, &mut shuffle_rng) {
            return nan_failure(step, e).map(Some);
        }
        update += 1;
    }
    Ok(None)
}

/// Trains one seed. With `out_dir` set, writes `metrics.jsonl` and
/// `checkpoint.bin` into `out_dir/seed_<seed>/`.
pub fn run_training(
    cfg: &ExperimentConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<RunResult, HarnessError> {
    cfg.validate()?;
    let template = cfg.env.make();
    let mut net = build_network(cfg, template.observation_dim(), template.num_actions(), seed)?;
    let mut tracker = Tracker {
        cfg,
        template,
        seed,
        curve: Vec::new(),
        initial_basis: net.basis().cloned(),
        basis_intact: true,
    };
    let failure = match cfg.algorithm {
        Algorithm::Dqn => train_dqn(cfg, seed, &mut net, &mut tracker)?,
        Algorithm::Ppo => train_ppo(cfg, seed, &mut net, &mut tracker)?,
    };
    if let Some(f) = &failure {
        warn!("seed {seed} failed at step {}: {}", f.step, f.reason);
    }
    let returns: Vec<f64> = tracker.curve.iter().map(|p| p.eval_return_mean).collect();
    let norms: Vec<f64> = tracker.curve.iter().map(|p| p.feature_norm_mean).collect();
    let metric_log = metric_log_bytes(&tracker.curve);
    let run_dir = match out_dir {
        Some(dir) => {
            let run_dir = dir.join(format!("seed_{seed}"));
            fs::create_dir_all(&run_dir)?;
            fs::write(run_dir.join(METRICS_FILE), &metric_log)?;
            save_checkpoint(&net, &run_dir.join(CHECKPOINT_FILE))?;
            Some(run_dir)
        }
        None => None,
    };
    Ok(RunResult {
        seed,
        final_return: super::final_window_mean(&returns),
        final_feature_norm: super::final_window_mean(&norms),
        curve: tracker.curve,
        failure,
        basis_intact: tracker.basis_intact,
        network: net,
        metric_log,
        run_dir,
    })
}
