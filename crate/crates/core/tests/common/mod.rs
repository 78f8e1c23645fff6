//! Oracles and case generators shared by the integration tests and the
//! acceptance runner.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ortho_bottleneck::agents::{
    dqn_loss_and_grads, log_softmax, ppo_loss_and_grads, DqnBatch, PpoConfig, POLICY_HEAD, Q_HEAD,
    VALUE_HEAD,
};
use ortho_bottleneck::nn::{Activation, BottleneckedNetwork, MlpNetwork};
use ortho_bottleneck::rng::{standard_normal_matrix, SeededRng};
use ortho_bottleneck::{make_basis, Matrix, ProjectionMethod};

/// Singular values of the centered batch through the eigenvalues of the
/// smaller Gram matrix, then the same cumulative-mass cutoff.
pub fn gram_oracle_rank(x: &Matrix, delta: f64) -> usize {
    let (n, d) = x.shape();
    let mut c = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
        for i in 0..n {
            c[i][j] = x.get(i, j) - mean;
        }
    }
    let gram: Vec<Vec<f64>> = if n <= d {
        (0..n)
            .map(|a| (0..n).map(|b| (0..d).map(|j| c[a][j] * c[b][j]).sum()).collect())
            .collect()
    } else {
        (0..d)
            .map(|a| (0..d).map(|b| (0..n).map(|i| c[i][a] * c[i][b]).sum()).collect())
            .collect()
    };
    let mut eig = jacobi_eigenvalues(gram);
    eig.sort_by(|a, b| b.total_cmp(a));
    let top = eig.first().copied().unwrap_or(0.0);
    let sigma: Vec<f64> = eig
        .iter()
        .map(|&l| if l > 1e-24 * top.max(1e-300) && l > 0.0 { l.sqrt() } else { 0.0 })
        .collect();
    let total: f64 = sigma.iter().sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        acc += s / total;
        if acc >= 1.0 - delta {
            return i + 1;
        }
    }
    sigma.len()
}

/// Plain cyclic Jacobi on a dense symmetric matrix; eigenvalues only.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..200 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-32 * diag || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = cs * akp - sn * akq;
                    a[k][q] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = cs * apk - sn * aqk;
                    a[q][k] = sn * apk + cs * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Random batch with a controllable spectrum: a low-rank part, per-column
/// scales and optional rectification.
pub fn random_feature_batch(rng: &mut SeededRng) -> Matrix {
    let n = 2 + rng.below(127);
    let d = 1 + rng.below(64);
    let r = 1 + rng.below(d);
    let x = standard_normal_matrix(n, r, rng)
        .matmul(&standard_normal_matrix(r, d, rng))
        .unwrap();
    let decay = rng.uniform_range(0.0, 0.5);
    let relu = rng.below(3) == 0;
    Matrix::from_fn(n, d, |i, j| {
        let v = x.get(i, j) * (-decay * j as f64).exp();
        if relu {
            v.max(0.0)
        } else {
            v
        }
    })
}

#[derive(Debug, Clone)]
pub struct GradCase {
    pub label: String,
    pub rel_err: f64,
}

fn random_network(rng: &mut SeededRng, ppo: bool, n_actions: usize) -> BottleneckedNetwork {
    let obs_dim = 2 + rng.below(5);
    let depth = rng.below(3);
    let mut dims = vec![obs_dim];
    dims.extend((0..depth).map(|_| 3 + rng.below(8)));
    let d = 3 + rng.below(10);
    dims.push(d);
    let act = if rng.below(2) == 0 { Activation::Tanh } else { Activation::Relu };
    let enc = MlpNetwork::orthogonal(&dims, act, act, 1.0, true, rng).unwrap();
    let with_basis = rng.below(3) != 0;
    let (basis, feat) = if with_basis {
        let k = 1 + rng.below(d);
        let method = [
            ProjectionMethod::Qr,
            ProjectionMethod::Svd,
            ProjectionMethod::Polar,
            ProjectionMethod::GaussianControl,
        ][rng.below(4)];
        (Some(make_basis(d, k, method, rng.next_seed()).unwrap()), k)
    } else {
        (None, d)
    };
    let trainable = with_basis && rng.below(2) == 0;
    let head_hidden = rng.below(2) == 1;
    let head_dims = |out: usize, rng: &mut SeededRng| {
        let mut v = vec![feat];
        if head_hidden {
            v.push(4);
        }
        v.push(out);
        MlpNetwork::orthogonal(&v, Activation::Tanh, Activation::Identity, 1.0, true, rng).unwrap()
    };
    let mut heads = BTreeMap::new();
    if ppo {
        heads.insert(POLICY_HEAD.to_string(), head_dims(n_actions, rng));
        heads.insert(VALUE_HEAD.to_string(), head_dims(1, rng));
    } else {
        heads.insert(Q_HEAD.to_string(), head_dims(n_actions, rng));
    }
    let mut net = BottleneckedNetwork::new(enc, basis, heads, trainable).unwrap();
    // Zero biases put dead ReLU inputs exactly on a kink, where central
    // differences are meaningless; a small jitter moves every parameter off it.
    let jittered: Vec<f64> = net
        .parameters_flat()
        .iter()
        .map(|p| p + 0.1 * rng.normal_pair().0)
        .collect();
    net.set_parameters_flat(&jittered).unwrap();
    net
}

/// Relative error between an analytic gradient and central differences of
/// an independently written loss, over up to 40 sampled coordinates.
fn compare(
    net: &BottleneckedNetwork,
    analytic: &[f64],
    loss: impl Fn(&BottleneckedNetwork) -> f64,
    rng: &mut SeededRng,
) -> f64 {
    let theta = net.parameters_flat();
    assert_eq!(theta.len(), analytic.len());
    let coords: Vec<usize> = if theta.len() <= 40 {
        (0..theta.len()).collect()
    } else {
        (0..40).map(|_| rng.below(theta.len())).collect()
    };
    let h = 1e-6;
    let mut probe = net.clone();
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for &c in &coords {
        let mut p = theta.clone();
        p[c] = theta[c] + h;
        probe.set_parameters_flat(&p).unwrap();
        let up = loss(&probe);
        p[c] = theta[c] - h;
        probe.set_parameters_flat(&p).unwrap();
        let down = loss(&probe);
        let fd = (up - down) / (2.0 * h);
        diff += (fd - analytic[c]).powi(2);
        scale += fd.powi(2).max(analytic[c].powi(2));
    }
    diff.sqrt() / scale.sqrt().max(1e-6)
}

pub fn dqn_gradient_case(seed: u64) -> GradCase {
    let mut rng = SeededRng::new(seed);
    let n_actions = 2 + rng.below(3);
    let net = random_network(&mut rng, false, n_actions);
    let target = random_network(&mut rng, false, n_actions);
    let target = if target.input_dim() == net.input_dim() && target.feature_dim() == net.feature_dim() {
        target
    } else {
        net.clone()
    };
    let n = 1 + rng.below(16);
    let obs = standard_normal_matrix(n, net.input_dim(), &mut rng);
    let batch = DqnBatch {
        obs: obs.clone(),
        actions: (0..n).map(|_| rng.below(n_actions)).collect(),
        rewards: (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        next_obs: standard_normal_matrix(n, net.input_dim(), &mut rng),
        dones: (0..n).map(|_| rng.below(4) == 0).collect(),
    };
    let gamma = 0.99;
    let (_, grads) = dqn_loss_and_grads(&net, &target, &batch, gamma).unwrap();
    let q_next = target.infer(&batch.next_obs, Q_HEAD).unwrap();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let best = q_next.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            batch.rewards[i] + if batch.dones[i] { 0.0 } else { gamma * best }
        })
        .collect();
    let loss = |m: &BottleneckedNetwork| {
        let q = m.infer(&obs, Q_HEAD).unwrap();
        (0..n).map(|i| (q.get(i, batch.actions[i]) - y[i]).powi(2)).sum::<f64>() / n as f64
    };
    let rel_err = compare(&net, &grads.to_flat(), loss, &mut rng);
    GradCase { label: format!("dqn seed {seed}"), rel_err }
}

/// Half the rows get a stale log-probability shifted far enough that the
/// clipped branch is active, so both branches are exercised.
pub fn ppo_gradient_case(seed: u64) -> GradCase {
    let mut rng = SeededRng::new(seed);
    let n_actions = 2 + rng.below(3);
    let net = random_network(&mut rng, true, n_actions);
    let n = 2 + rng.below(15);
    let obs = standard_normal_matrix(n, net.input_dim(), &mut rng);
    let actions: Vec<usize> = (0..n).map(|_| rng.below(n_actions)).collect();
    let logits = net.infer(&obs, POLICY_HEAD).unwrap();
    let advantages: Vec<f64> = (0..n)
        .map(|_| {
            let a = rng.uniform_range(0.2, 2.0);
            if rng.below(2) == 0 {
                a
            } else {
                -a
            }
        })
        .collect();
    let old_log_probs: Vec<f64> = (0..n)
        .map(|i| {
            let lp = log_softmax(logits.row(i))[actions[i]];
            match i % 3 {
                0 => lp,
                // ratio = e^0.6 ≈ 1.8 or e^-0.6 ≈ 0.55
                1 => lp - 0.6,
                _ => lp + 0.6,
            }
        })
        .collect();
    let returns: Vec<f64> = (0..n).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
    let cfg = PpoConfig {
        entropy_coef: rng.uniform_range(0.0, 0.05),
        value_coef: rng.uniform_range(0.25, 1.0),
        ..PpoConfig::default()
    };
    let (_, grads) =
        ppo_loss_and_grads(&net, &obs, &actions, &old_log_probs, &advantages, &returns, &cfg).unwrap();
    let loss = |m: &BottleneckedNetwork| {
        let lg = m.infer(&obs, POLICY_HEAD).unwrap();
        let v = m.infer(&obs, VALUE_HEAD).unwrap();
        let (mut pl, mut vl, mut ent) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let row = lg.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|l| (l - max).exp()).sum();
            let logp: Vec<f64> = row.iter().map(|l| l - max - z.ln()).collect();
            let r = (logp[actions[i]] - old_log_probs[i]).exp();
            let a = advantages[i];
            pl -= (r * a).min(r.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a);
            vl += (v.get(i, 0) - returns[i]).powi(2);
            ent -= logp.iter().map(|l| l.exp() * l).sum::<f64>();
        }
        let nf = n as f64;
        pl / nf + cfg.value_coef * vl / nf - cfg.entropy_coef * ent / nf
    };
    let rel_err = compare(&net, &grads.to_flat(), loss, &mut rng);
    GradCase { label: format!("ppo seed {seed}"), rel_err }
}

/// Alternates DQN and PPO cases.
pub fn gradient_case(i: u64) -> GradCase {
    if i % 2 == 0 {
        dqn_gradient_case(1000 + i)
    } else {
        ppo_gradient_case(1000 + i)
    }
}
