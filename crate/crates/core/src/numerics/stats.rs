use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_err: f64,
}

impl McEstimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_err: 0.0 }
    }

    /// Mean of i.i.d. terms and the standard error of that mean.
    pub fn from_terms(terms: &[f64]) -> Self {
        Self {
            value: mean(terms),
            std_err: mean_stderr(terms),
        }
    }

    /// `|value - other| / sqrt(se² + se_other²)`; infinite when both errors vanish and values differ.
    pub fn z_score(&self, other: f64, other_std_err: f64) -> f64 {
        let diff = (self.value - other).abs();
        let se = self.std_err.hypot(other_std_err);
        if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// `ln Σ exp(v_i)` with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return invalid("log_sum_exp of an empty slice");
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return Ok(max);
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + s.ln())
}

/// `ln((1/n) Σ exp(v_i))`.
pub fn log_mean_exp(values: &[f64]) -> Result<f64> {
    Ok(log_sum_exp(values)? - (values.len() as f64).ln())
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased (n-1) sample variance.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub fn mean_stderr(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    (sample_variance(values) / values.len() as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Leave-one-out jackknife standard error of `statistic`.
pub fn jackknife_stderr<F>(values: &[f64], statistic: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let n = values.len();
    if n < 10 {
        return invalid(format!("jackknife needs at least 10 values, got {n}"));
    }
    let mut scratch = Vec::with_capacity(n - 1);
    let mut loo = Vec::with_capacity(n);
    for i in 0..n {
        scratch.clear();
        scratch.extend_from_slice(&values[..i]);
        scratch.extend_from_slice(&values[i + 1..]);
        loo.push(statistic(&scratch));
    }
    let m = mean(&loo);
    let ss: f64 = loo.iter().map(|t| (t - m).powi(2)).sum();
    Ok(((n - 1) as f64 / n as f64 * ss).sqrt())
}
