//! Error statistics over Monte-Carlo estimates.

use crate::error::{Error, Result};

/// Signed relative error in percent.
pub fn estimation_error(est: f64, truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::UndefinedRelativeError);
    }
    Ok((est - truth) / truth * 100.0)
}

pub fn absolute_error(est: f64, truth: f64) -> Result<f64> {
    estimation_error(est, truth).map(f64::abs)
}

fn check_shape(estimates: &[Vec<f64>], n_c: usize) -> Result<()> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput("no instances"));
    }
    if n_c == 0 {
        return Err(Error::EmptyInput("no components"));
    }
    if estimates.iter().any(|r| r.len() != n_c) {
        return Err(Error::InvalidParameter(
            "every instance needs one estimate per component".into(),
        ));
    }
    Ok(())
}

/// RMSE over all instances and components, divided by the grand mean estimate.
/// `estimates[n][c]` is instance `n`, component `c`.
pub fn nrmse(estimates: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    check_shape(estimates, truth.len())?;
    let count = (estimates.len() * truth.len()) as f64;
    let mut sq = 0.0;
    let mut sum = 0.0;
    for row in estimates {
        for (e, t) in row.iter().zip(truth) {
            sq += (e - t) * (e - t);
            sum += e;
        }
    }
    let mean = sum / count;
    if mean == 0.0 {
        return Err(Error::ZeroMeanEstimate);
    }
    Ok((sq / count).sqrt() / mean)
}

/// Population variance of each component across instances, averaged over components.
pub fn variance_avg(estimates: &[Vec<f64>]) -> Result<f64> {
    let n_c = estimates.first().map(Vec::len).unwrap_or(0);
    check_shape(estimates, n_c)?;
    let n_s = estimates.len() as f64;
    let mut total = 0.0;
    for c in 0..n_c {
        let mean = estimates.iter().map(|r| r[c]).sum::<f64>() / n_s;
        total += estimates.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n_s;
    }
    Ok(total / n_c as f64)
}

/// Median and interquartile range (linear interpolation between order statistics).
pub fn median_iqr(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (v.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Ok((q(0.5), q(0.75) - q(0.25)))
}
