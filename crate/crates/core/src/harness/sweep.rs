use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::{bootstrap_ci, iqm, run_training, ExperimentConfig, HarnessError, RunResult, FINAL_WINDOW};
use crate::rng::SeededRng;

const BOOTSTRAP_REPS: usize = 2000;
const CI_LEVEL: f64 = 0.95;
const BOOTSTRAP_SEED: u64 = 0xB007;

/// The swept quantity: bottleneck dimension (`None` is the unprojected
/// baseline) or encoder output width.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    K(Vec<Option<usize>>),
    Width(Vec<usize>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::K(_) => "k",
            SweepAxis::Width(_) => "width",
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            SweepAxis::K(ks) => ks
                .iter()
                .map(|k| k.map_or_else(|| "none".to_string(), |k| k.to_string()))
                .collect(),
            SweepAxis::Width(ws) => ws.iter().map(usize::to_string).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::K(v) => v.len(),
            SweepAxis::Width(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Config for the `i`-th axis value.
    pub fn apply(&self, i: usize, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        match self {
            SweepAxis::K(ks) => cfg.k = ks[i],
            SweepAxis::Width(ws) => cfg.width = ws[i],
        }
        cfg
    }
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    /// `k=none,1,2,4` or `width=64,128,256`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, values) = s
            .split_once('=')
            .ok_or_else(|| HarnessError::Axis(format!("expected name=values, got {s:?}")))?;
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if items.is_empty() {
            return Err(HarnessError::Axis("no axis values".into()));
        }
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| HarnessError::Axis(format!("not a positive integer: {v:?}")))
        };
        match name.trim() {
            "k" => items
                .iter()
                .map(|v| if *v == "none" { Ok(None) } else { num(v).map(Some) })
                .collect::<Result<_, _>>()
                .map(SweepAxis::K),
            "width" | "D" | "d" => items.iter().map(|v| num(v)).collect::<Result<_, _>>().map(SweepAxis::Width),
            other => Err(HarnessError::Axis(format!("unknown axis {other:?}"))),
        }
    }
}

/// What aggregation needs from one (axis value, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// `None` for failed runs.
    pub final_return: Option<f64>,
    pub final_feature_norm: Option<f64>,
    pub k_eff_trace: Vec<usize>,
    pub failure: Option<String>,
}

impl SeedOutcome {
    pub fn from_run(run: &RunResult) -> Self {
        Self {
            seed: run.seed,
            final_return: run.final_return.filter(|_| run.succeeded()),
            final_feature_norm: run.final_feature_norm,
            k_eff_trace: run.curve.iter().map(|p| p.k_eff).collect(),
            failure: run
                .failure
                .as_ref()
                .map(|f| format!("step {}: {}", f.step, f.reason))
                .or_else(|| run.final_return.is_none().then(|| "no evaluations".to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis_value: String,
    pub iqm: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Seeds that entered the aggregate.
    pub n_seeds: usize,
    pub per_seed_final: Vec<f64>,
    pub per_seed_k_eff: Vec<Vec<usize>>,
    pub failed_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMetadata {
    pub axis: String,
    /// Per-seed final return is the mean of this many trailing eval points.
    pub final_window: usize,
    pub bootstrap_reps: usize,
    pub ci_level: f64,
    pub iqm_trim: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub metadata: SweepMetadata,
    pub rows: Vec<SweepRow>,
}

/// Pure aggregation over per-seed outcomes; failed seeds are listed but
/// excluded.
pub fn aggregate_sweep(
    axis: &str,
    cells: Vec<(String, Vec<SeedOutcome>)>,
) -> Result<SweepResult, HarnessError> {
    let mut rows = Vec::with_capacity(cells.len());
    for (i, (label, outcomes)) in cells.into_iter().enumerate() {
        let mut finals = Vec::new();
        let mut traces = Vec::new();
        let mut failed = Vec::new();
        for o in outcomes {
            match (o.final_return, &o.failure) {
                (Some(r), None) => {
                    finals.push(r);
                    traces.push(o.k_eff_trace);
                }
                _ => {
                    warn!("{axis}={label}: seed {} excluded ({})", o.seed, o.failure.as_deref().unwrap_or("failed"));
                    failed.push(o.seed);
                }
            }
        }
        let (point, low, high) = match finals.len() {
            0 => (f64::NAN, f64::NAN, f64::NAN),
            1 => (finals[0], finals[0], finals[0]),
            _ => {
                let mut rng = SeededRng::derived(BOOTSTRAP_SEED, i as u64);
                let (lo, hi) = bootstrap_ci(&finals, BOOTSTRAP_REPS, CI_LEVEL, &mut rng)?;
                (iqm(&finals)?, lo, hi)
            }
        };
        rows.push(SweepRow {
            axis_value: label,
            iqm: point,
            ci_low: low,
            ci_high: high,
            n_seeds: finals.len(),
            per_seed_final: finals,
            per_seed_k_eff: traces,
            failed_seeds: failed,
        });
    }
    Ok(SweepResult {
        metadata: SweepMetadata {
            axis: axis.to_string(),
            final_window: FINAL_WINDOW,
            bootstrap_reps: BOOTSTRAP_REPS,
            ci_level: CI_LEVEL,
            iqm_trim: "floor(n/4) per side".to_string(),
        },
        rows,
    })
}

/// `axis_value,iqm,ci_low,ci_high,n_seeds`.
pub fn write_summary_csv<W: Write>(result: &SweepResult, writer: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["axis_value", "iqm", "ci_low", "ci_high", "n_seeds"])?;
    for r in &result.rows {
        w.write_record([
            r.axis_value.clone(),
            r.iqm.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.n_seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every (axis value, seed) cell on a pool of `workers` threads, then
/// aggregates. With `out_dir`, each axis value gets its own run directory
/// and `summary.csv` / `summary.json` are written at the top.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: &SweepAxis,
    out_dir: Option<&Path>,
    workers: usize,
) -> Result<(SweepResult, Vec<Vec<RunResult>>), HarnessError> {
    if axis.is_empty() {
        return Err(HarnessError::Axis("empty axis".into()));
    }
    if base.seeds.len() < 2 {
        return Err(HarnessError::Config("a sweep needs at least two seeds".into()));
    }
    let configs: Vec<ExperimentConfig> = (0..axis.len()).map(|i| axis.apply(i, base)).collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    let labels = axis.labels();
    let cells: Vec<(usize, u64)> = (0..axis.len())
        .flat_map(|i| base.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let runs: Vec<Result<RunResult, HarnessError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, seed)| {
                let dir = out_dir.map(|d| d.join(format!("{}_{}", axis.name(), labels[i])));
                run_training(&configs[i], seed, dir.as_deref())
            })
            .collect()
    });

    let mut grouped: Vec<Vec<RunResult>> = (0..axis.len()).map(|_| Vec::new()).collect();
    let mut outcomes: Vec<Vec<SeedOutcome>> = (0..axis.len()).map(|_| Vec::new()).collect();
    for (&(i, seed), run) in cells.iter().zip(runs) {
        match run {
            Ok(run) => {
                outcomes[i].push(SeedOutcome::from_run(&run));
                grouped[i].push(run);
            }
            Err(e) => {
                warn!("{}={} seed {seed}: {e}", axis.name(), labels[i]);
                outcomes[i].push(SeedOutcome {
                    seed,
                    final_return: None,
                    final_feature_norm: None,
                    k_eff_trace: Vec::new(),
                    failure: Some(e.to_string()),
                });
            }
        }
    }
    let result = aggregate_sweep(axis.name(), labels.into_iter().zip(outcomes).collect())?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        write_summary_csv(&result, fs::File::create(dir.join("summary.csv"))?)?;
        let mut json = serde_json::to_vec_pretty(&result)?;
        json.push(b'\n');
        fs::write(dir.join("summary.json"), json)?;
    }
    Ok((result, grouped))
}
