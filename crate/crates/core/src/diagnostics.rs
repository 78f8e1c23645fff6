//! Representation-geometry measurements.
//!
//! [`effective_rank`] counts how many leading singular directions of a
//! centered feature batch carry `1 − δ` of the singular-value mass.
//! [`feature_norm_stats`] tracks per-row L2 norms, and [`export_manifold`]
//! records bottleneck coordinates along greedy evaluation episodes.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{argmax, Q_HEAD, VALUE_HEAD};
use crate::envs::{EnvError, Environment};
use crate::linalg::{jacobi_svd, LinalgError, Matrix};
use crate::nn::{BottleneckedNetwork, NnError};

pub const DEFAULT_DELTA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("{op} needs at least {needed} rows, got {got}")]
    TooFewRows {
        op: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("delta must lie in [0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("feature file: {0}")]
    Parse(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub k_eff: usize,
    /// `k_eff / d` where `d` is the measured layer's width.
    pub k_norm: f64,
    pub delta: f64,
    /// `p_i = σ_i / Σ σ_j`, descending. All zero for a degenerate batch.
    pub singular_masses: Vec<f64>,
    /// Set when the centered batch is identically zero; `k_eff` is then 1.
    pub degenerate: bool,
}

/// Subtracts the column means.
pub fn center_rows(x: &Matrix) -> Matrix {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    Matrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j])
}

/// Smallest `k` whose leading masses sum to at least `1 − δ`.
pub fn cumulative_cutoff(masses: &[f64], delta: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in masses.iter().enumerate() {
        acc += p;
        if acc >= 1.0 - delta {
            return i + 1;
        }
    }
    // Rounding can leave the total a hair under 1 − δ when δ is tiny.
    masses.len().max(1)
}

pub fn effective_rank(x: &Matrix, delta: f64) -> Result<RankReport, DiagnosticsError> {
    if !(0.0..1.0).contains(&delta) {
        return Err(DiagnosticsError::InvalidDelta(delta));
    }
    if x.rows() < 2 {
        return Err(DiagnosticsError::TooFewRows {
            op: "effective_rank",
            needed: 2,
            got: x.rows(),
        });
    }
    let d = x.cols();
    let centered = center_rows(x);
    let sigma = jacobi_svd(&centered)?.sigma;
    let total: f64 = sigma.iter().sum();
    if total <= 0.0 {
        return Ok(RankReport {
            k_eff: 1,
            k_norm: 1.0 / d as f64,
            delta,
            singular_masses: vec![0.0; sigma.len()],
            degenerate: true,
        });
    }
    let masses: Vec<f64> = sigma.iter().map(|s| s / total).collect();
    let k_eff = cumulative_cutoff(&masses, delta);
    Ok(RankReport {
        k_eff,
        k_norm: k_eff as f64 / d as f64,
        delta,
        singular_masses: masses,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean_l2: f64,
    pub max_l2: f64,
}

pub fn row_norms(x: &Matrix) -> Vec<f64> {
    (0..x.rows()).map(|i| crate::linalg::norm2(x.row(i))).collect()
}

pub fn feature_norm_stats(x: &Matrix) -> Result<NormStats, DiagnosticsError> {
    if x.rows() == 0 {
        return Err(DiagnosticsError::TooFewRows {
            op: "feature_norm_stats",
            needed: 1,
            got: 0,
        });
    }
    let norms = row_norms(x);
    Ok(NormStats {
        mean_l2: norms.iter().sum::<f64>() / norms.len() as f64,
        max_l2: norms.iter().cloned().fold(0.0, f64::max),
    })
}

/// Reads a headerless or `#`-commented CSV of numeric feature rows.
pub fn read_feature_csv<R: Read>(reader: R) -> Result<Matrix, DiagnosticsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            // A single textual header row is allowed.
            Err(_) if line == 0 => continue,
            Err(e) => return Err(DiagnosticsError::Parse(format!("row {}: {e}", line + 1))),
        };
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(DiagnosticsError::Parse(format!(
                    "row {} has {} columns, expected {c}",
                    line + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        data.extend(values);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| DiagnosticsError::Parse("no numeric rows".into()))?;
    Matrix::new(rows, cols, data).map_err(|e| DiagnosticsError::Parse(e.to_string()))
}

/// One visited state on a greedy evaluation trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldRecord {
    pub episode: usize,
    pub timestep: usize,
    pub action: usize,
    pub value: f64,
    pub h: Vec<f64>,
}

/// Runs `episodes` greedy episodes (reset seeds `seed, seed + 1, ...`) and
/// records the head input and value estimate at every step. The value is
/// max-Q for DQN networks and the critic output otherwise.
pub fn export_manifold<E: Environment + ?Sized>(
    net: &BottleneckedNetwork,
    env: &mut E,
    episodes: usize,
    seed: u64,
) -> Result<Vec<ManifoldRecord>, DiagnosticsError> {
    let q_net = net.has_head(Q_HEAD);
    let policy = if q_net { Q_HEAD } else { crate::agents::POLICY_HEAD };
    let mut records = Vec::new();
    for episode in 0..episodes {
        let mut obs = env.reset(seed.wrapping_add(episode as u64));
        for timestep in 0.. {
            let x = Matrix::new(1, obs.len(), obs.clone())?;
            let (outs, cache) = net.forward_batch(&x, &[policy])?;
            let scores = outs[0].row(0);
            let action = argmax(scores);
            let value = if q_net {
                scores[action]
            } else {
                net.infer(&x, VALUE_HEAD)?.get(0, 0)
            };
            records.push(ManifoldRecord {
                episode,
                timestep,
                action,
                value,
                h: cache.h.row(0).to_vec(),
            });
            let step = env.step(action)?;
            if step.done() {
                break;
            }
            obs = step.observation;
        }
    }
    Ok(records)
}

pub fn manifold_header(k: usize) -> Vec<String> {
    let mut header: Vec<String> = ["episode", "timestep", "action", "value"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..k).map(|i| format!("h{i}")));
    header
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_manifold_csv<W: Write>(
    records: &[ManifoldRecord],
    k: usize,
    writer: W,
) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(manifold_header(k))?;
    for r in records {
        if r.h.len() != k {
            return Err(DiagnosticsError::Parse(format!(
                "record has {} coordinates, expected {k}",
                r.h.len()
            )));
        }
        let mut row = vec![
            r.episode.to_string(),
            r.timestep.to_string(),
            r.action.to_string(),
            format_f64(r.value),
        ];
        row.extend(r.h.iter().map(|&v| format_f64(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a manifold CSV, checking the header against the schema.
pub fn read_manifold_csv<R: Read>(reader: R) -> Result<Vec<ManifoldRecord>, DiagnosticsError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let k = header.len().checked_sub(4).ok_or_else(|| DiagnosticsError::Parse("short header".into()))?;
    if header != manifold_header(k) {
        return Err(DiagnosticsError::Parse(format!("unexpected header {header:?}")));
    }
    let parse_err = |e: &dyn std::fmt::Display| DiagnosticsError::Parse(e.to_string());
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        out.push(ManifoldRecord {
            episode: field(0).parse().map_err(|e| parse_err(&e))?,
            timestep: field(1).parse().map_err(|e| parse_err(&e))?,
            action: field(2).parse().map_err(|e| parse_err(&e))?,
            value: field(3).parse().map_err(|e| parse_err(&e))?,
            h: (0..k)
                .map(|i| field(4 + i).parse().map_err(|e| parse_err(&e)))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok(out)
}
