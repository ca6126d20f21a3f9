use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

fn sorted(xs: &[f64]) -> Result<Vec<f64>, EvalError> {
    if xs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn iqm_sorted(v: &[f64]) -> f64 {
    // Element i covers [i, i+1) of [0, n); keep the part inside [n/4, 3n/4].
    if v[0] == v[v.len() - 1] {
        return v[0];
    }
    let n = v.len() as f64;
    let (lo, hi) = (n / 4.0, 3.0 * n / 4.0);
    let mut acc = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let w = ((i + 1) as f64).min(hi) - (i as f64).max(lo);
        if w > 0.0 {
            acc += w * x;
        }
    }
    acc / (hi - lo)
}

/// Interquartile mean with fractional trimming at the quartile boundaries.
pub fn iqm(xs: &[f64]) -> Result<f64, EvalError> {
    Ok(iqm_sorted(&sorted(xs)?))
}

fn percentile_sorted(v: &[f64], p: f64) -> f64 {
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

/// Linear-interpolation percentile, `p` in [0, 100].
pub fn percentile(xs: &[f64], p: f64) -> Result<f64, EvalError> {
    Ok(percentile_sorted(&sorted(xs)?, p))
}

pub fn median(xs: &[f64]) -> Result<f64, EvalError> {
    percentile(xs, 50.0)
}

pub fn mean(xs: &[f64]) -> Result<f64, EvalError> {
    if xs.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Percentile bootstrap interval of the IQM. The bounds are widened to include
/// the point estimate if resampling noise leaves it outside.
pub fn bootstrap_ci(xs: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64), EvalError> {
    let point = iqm(xs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = xs.len();
    let mut stats = Vec::with_capacity(resamples);
    let mut buf = vec![0.0; n];
    for _ in 0..resamples.max(1) {
        for b in buf.iter_mut() {
            *b = xs[rng.random_range(0..n)];
        }
        buf.sort_by(f64::total_cmp);
        stats.push(iqm_sorted(&buf));
    }
    stats.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0 * 100.0;
    let lo = percentile_sorted(&stats, a).min(point);
    let hi = percentile_sorted(&stats, 100.0 - a).max(point);
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    /// mean - 16th percentile
    pub lower: f64,
    /// 84th percentile - mean
    pub upper: f64,
}

pub fn spread_stats(xs: &[f64]) -> Result<Spread, EvalError> {
    let v = sorted(xs)?;
    let m = v.iter().sum::<f64>() / v.len() as f64;
    Ok(Spread {
        mean: m,
        lower: m - percentile_sorted(&v, 16.0),
        upper: percentile_sorted(&v, 84.0) - m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub c: f64,
    pub alpha: f64,
    pub r2: f64,
}

/// Least-squares fit of `ln T = ln c + α ln n`.
pub fn fit_power_law(sizes: &[f64], times: &[f64]) -> Result<PowerLaw, EvalError> {
    if sizes.len() != times.len() {
        return Err(EvalError::Invalid(format!("{} sizes for {} times", sizes.len(), times.len())));
    }
    if sizes.iter().chain(times).any(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(EvalError::Invalid("sizes and times must be positive".into()));
    }
    let mut distinct = sizes.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(EvalError::Invalid("need at least 3 distinct sizes".into()));
    }
    let x: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = times.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let alpha = sxy / sxx;
    let b = my - alpha * mx;
    let ss_res: f64 = x.iter().zip(&y).map(|(a, v)| (v - (b + alpha * a)).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(PowerLaw { c: b.exp(), alpha, r2 })
}
