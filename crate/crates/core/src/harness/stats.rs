use super::HarnessError;
use crate::rng::SeededRng;

/// Eval points averaged into a run's final return.
pub const FINAL_WINDOW: usize = 5;

/// Interquartile mean: drop `floor(n/4)` values from each end of the sorted
/// sample and average the rest.
pub fn iqm(values: &[f64]) -> Result<f64, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::TooFewValues("iqm", 1));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let cut = v.len() / 4;
    let kept = &v[cut..v.len() - cut];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Linearly interpolated percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for the IQM over seeds. The interval is
/// widened, if needed, to contain the point estimate.
pub fn bootstrap_ci(
    values: &[f64],
    reps: usize,
    level: f64,
    rng: &mut SeededRng,
) -> Result<(f64, f64), HarnessError> {
    if values.len() < 2 {
        return Err(HarnessError::TooFewValues("bootstrap_ci", 2));
    }
    if reps == 0 || !(0.0..1.0).contains(&level) {
        return Err(HarnessError::Config("bootstrap needs reps > 0 and level in [0, 1)".into()));
    }
    let n = values.len();
    let mut stats = Vec::with_capacity(reps);
    let mut sample = vec![0.0; n];
    for _ in 0..reps {
        for s in sample.iter_mut() {
            *s = values[rng.below(n)];
        }
        stats.push(iqm(&sample)?);
    }
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let point = iqm(values)?;
    let low = percentile(&stats, alpha).min(point);
    let high = percentile(&stats, 1.0 - alpha).max(point);
    Ok((low, high))
}

/// Mean of the last [`FINAL_WINDOW`] entries (or all, if fewer).
pub fn final_window_mean(curve: &[f64]) -> Option<f64> {
    if curve.is_empty() {
        return None;
    }
    let tail = &curve[curve.len().saturating_sub(FINAL_WINDOW)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}
