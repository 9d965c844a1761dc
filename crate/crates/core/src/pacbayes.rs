//! Empirical PAC-Bayes diagnostics: cumulant-generating functions of the
//! generalization gap, the R function, the in-expectation bound, optimal
//! temperatures and the tilted-variance comparison.
//!
//! Exponential moments are always reduced in the log domain.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{sample_input, DataGenSpec, Dataset};
use crate::error::{check_dim, invalid, Error, Result};
use crate::gaussian::{kl_divergence, quadratic_form_moments, Gaussian};
use crate::losses::{expected_loss_form, loss_variance};
use crate::numerics::{
    log_mean_exp, log_sum_exp, mean, mean_stderr, sample_variance, McEstimate, QuadratureRule, RandomStream,
};
use crate::tempering::ModelSpec;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const TILT_BATCHES: usize = 20;

/// An estimated cumulant-generating curve over a temperature grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgfEstimate {
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errs: Vec<f64>,
    /// The model evaluated, or `None` when the curve averages over prior draws.
    pub theta: Option<Vec<f64>>,
    pub prior_samples: usize,
    pub resamples: usize,
    pub n: usize,
    /// First grid value at which an exponent stopped being finite; later points are dropped.
    pub truncated_at: Option<f64>,
}

impl CgfEstimate {
    /// Smallest `(v[i+1]−v[i])/(λ[i+1]−λ[i]) − (v[i]−v[i−1])/(λ[i]−λ[i−1])`; nonnegative for convex curves.
    pub fn min_slope_increment(&self) -> f64 {
        let slopes: Vec<f64> = self
            .lambdas
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(l, v)| (v[1] - v[0]) / (l[1] - l[0]))
            .collect();
        slopes.windows(2).map(|s| s[1] - s[0]).fold(f64::INFINITY, f64::min)
    }
}

/// The R function with the averaged per-model loss variance used by its variance bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RFunction {
    pub curve: CgfEstimate,
    /// `E_π[V_ν(ℓ)]` over the same prior draws.
    pub mean_loss_variance: McEstimate,
}

impl RFunction {
    /// `(nλ²/2)·E_π[V_ν(ℓ)]` at every grid point.
    pub fn variance_bound(&self) -> Vec<f64> {
        let n = self.curve.n as f64;
        self.curve
            .lambdas
            .iter()
            .map(|l| 0.5 * n * l * l * self.mean_loss_variance.value)
            .collect()
    }
}

/// Terms of the in-expectation bound at one temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lambda: f64,
    pub lhs: f64,
    pub train_term: f64,
    pub kl_term: f64,
    pub r_term: f64,
    pub rhs: f64,
    pub combined_std_err: f64,
    pub mc_slack: f64,
    pub holds: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntersectionMethod {
    Bisection,
    GridArgmin,
}

/// Minimizer of `(KL + R(λ)) / (λn)` over an interpolated R curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionResult {
    pub lambda: f64,
    pub objective: f64,
    pub method: IntersectionMethod,
    /// The minimizer sits on the first or last grid point.
    pub at_boundary: bool,
}

/// Loss variance under the tilted law `q_λ ∝ ν·e^{−λℓ}` against the plain variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltedVariance {
    pub lambda: f64,
    pub v_tilted: McEstimate,
    pub v_plain: McEstimate,
    pub effective_sample_size: f64,
    /// Effective sample size of at least 50.
    pub reliable: bool,
    /// Fourth cumulant of the loss under `q_λ`.
    pub fourth_cumulant: f64,
}

/// Average over prior draws of `V_D(ln p(D|θ))`, by resampling and in closed form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorPredictiveVariance {
    pub resampled: McEstimate,
    pub closed_form: McEstimate,
}

fn check_grid(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return invalid("temperature grid is empty");
    }
    if lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return invalid("temperatures must be positive and finite");
    }
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("temperature grid must be strictly increasing");
    }
    Ok(())
}

/// Jackknife standard error of `ln mean exp(values)` using running sums.
fn jackknife_log_mean_exp(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 10 {
        return invalid(format!("jackknife needs at least 10 values, got {n}"));
    }
    let shift = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = values.iter().map(|v| (v - shift).exp()).collect();
    let total: f64 = w.iter().sum();
    let ln_rest = (n as f64 - 1.0).ln();
    let loo: Vec<f64> = w
        .iter()
        .enumerate()
        .map(|(i, wi)| {
            let rest = total - wi;
            if rest > 1e-8 * total {
                shift + rest.ln() - ln_rest
            } else {
                // the dropped term dominates; recompute without cancellation
                let others: Vec<f64> = values
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, v)| *v)
                    .collect();
                log_mean_exp(&others).unwrap_or(f64::NAN)
            }
        })
        .collect();
    let m = mean(&loo);
    let ss: f64 = loo.iter().map(|t| (t - m).powi(2)).sum();
    Ok(((n - 1) as f64 / n as f64 * ss).sqrt())
}

/// `L(θ) − L̂(θ, D)` for one fresh dataset of size `n`.
fn sample_gap(
    model: &ModelSpec,
    spec: &DataGenSpec,
    theta: &DVector<f64>,
    l_theta: f64,
    n: usize,
    rng: &mut RandomStream,
) -> f64 {
    let s2 = model.noise_var_model;
    let sd = spec.noise_var_true.sqrt();
    let mut total = 0.0;
    for _ in 0..n {
        let x = sample_input(spec, rng);
        let y = spec.mean_at(x) + sd * rng.standard_normal();
        let r = y - model.features(x).dot(theta);
        total += 0.5 * (LN_2PI + s2.ln()) + r * r / (2.0 * s2);
    }
    l_theta - total / n as f64
}

#[derive(Default)]
struct GridCurve {
    lambdas: Vec<f64>,
    values: Vec<f64>,
    std_errs: Vec<f64>,
    truncated_at: Option<f64>,
}

/// Evaluates a curve point per λ, truncating at the first non-finite value.
fn cgf_over_grid(lambdas: &[f64], mut per_lambda: impl FnMut(f64) -> Result<(f64, f64)>) -> Result<GridCurve> {
    let mut c = GridCurve::default();
    for &l in lambdas {
        let (v, se) = per_lambda(l)?;
        if !v.is_finite() || !se.is_finite() {
            c.truncated_at = Some(l);
            break;
        }
        c.lambdas.push(l);
        c.values.push(v);
        c.std_errs.push(se);
    }
    Ok(c)
}

/// `J_θ(λ) = (1/n) ln E_D[exp(λn(L(θ) − L̂(θ, D)))]` from `m` resampled datasets.
#[allow(clippy::too_many_arguments)]
pub fn empirical_cgf(
    model: &ModelSpec,
    spec: &DataGenSpec,
    theta: &DVector<f64>,
    lambdas: &[f64],
    m: usize,
    n: usize,
    rng: &mut RandomStream,
    quad: &QuadratureRule,
) -> Result<CgfEstimate> {
    check_dim(model.basis_order_model, theta.len())?;
    check_grid(lambdas)?;
    if m < 100 || n == 0 {
        return invalid("need at least 100 resampled datasets of positive size");
    }
    let l_theta = expected_loss_form(model, spec, quad)?.eval(theta);
    let gaps: Vec<f64> = (0..m)
        .map(|_| sample_gap(model, spec, theta, l_theta, n, rng))
        .collect();
    let nf = n as f64;
    let curve = cgf_over_grid(lambdas, |l| {
        let e: Vec<f64> = gaps.iter().map(|g| l * nf * g).collect();
        if e.iter().any(|v| !v.is_finite()) {
            return Ok((f64::NAN, f64::NAN));
        }
        let v = log_mean_exp(&e)? / nf;
        let se = jackknife_log_mean_exp(&e)? / nf;
        Ok((v, se))
    })?;
    Ok(CgfEstimate {
        lambdas: curve.lambdas,
        values: curve.values,
        std_errs: curve.std_errs,
        theta: Some(theta.iter().copied().collect()),
        prior_samples: 0,
        resamples: m,
        n,
        truncated_at: curve.truncated_at,
    })
}

/// `J` of a model whose prediction equals a constant true mean: `λs/2 − ½ ln(1 + λs)` with `s = σ_ν²/σ_m²`.
pub fn constant_model_cgf(lambda: f64, noise_var_true: f64, noise_var_model: f64) -> f64 {
    let s = noise_var_true / noise_var_model;
    0.5 * lambda * s - 0.5 * (lambda * s).ln_1p()
}

/// `R(λ) = ln E_π E_D[exp(λn(L(θ) − L̂(θ, D)))]` with `prior_samples` draws and `m` datasets per draw.
#[allow(clippy::too_many_arguments)]
pub fn empirical_r(
    model: &ModelSpec,
    spec: &DataGenSpec,
    prior_samples: usize,
    lambdas: &[f64],
    m: usize,
    n: usize,
    rng: &mut RandomStream,
    quad: &QuadratureRule,
) -> Result<RFunction> {
    check_grid(lambdas)?;
    if prior_samples < 100 || m < 1 || n == 0 {
        return invalid("need at least 100 prior draws and nonempty resampling");
    }
    let l_form = expected_loss_form(model, spec, quad)?;
    let thetas = model.prior.sample(rng, prior_samples)?;
    let mut gaps = Vec::with_capacity(prior_samples);
    let mut variances = Vec::with_capacity(prior_samples);
    for row in thetas.row_iter() {
        let theta = row.transpose();
        let l_theta = l_form.eval(&theta);
        gaps.push(
            (0..m)
                .map(|_| sample_gap(model, spec, &theta, l_theta, n, rng))
                .collect::<Vec<f64>>(),
        );
        variances.push(loss_variance(model, spec, &theta, quad)?);
    }
    let nf = n as f64;
    let curve = cgf_over_grid(lambdas, |l| {
        let per_theta: Vec<f64> = gaps
            .iter()
            .map(|g| {
                let e: Vec<f64> = g.iter().map(|v| l * nf * v).collect();
                log_mean_exp(&e).unwrap_or(f64::NAN)
            })
            .collect();
        if per_theta.iter().any(|v| !v.is_finite()) {
            return Ok((f64::NAN, f64::NAN));
        }
        let v = log_mean_exp(&per_theta)?;
        let se = jackknife_log_mean_exp(&per_theta)?;
        Ok((v, se))
    })?;
    Ok(RFunction {
        curve: CgfEstimate {
            lambdas: curve.lambdas,
            values: curve.values,
            std_errs: curve.std_errs,
            theta: None,
            prior_samples,
            resamples: m,
            n,
            truncated_at: curve.truncated_at,
        },
        mean_loss_variance: McEstimate::from_terms(&variances),
    })
}

/// Checks `E_D E_ρ[L] ≤ E_D E_ρ[L̂] + E_D KL(ρ‖π)/(λn) + R(λ)/(λn)` with `ρ = rho_builder(D)`.
#[allow(clippy::too_many_arguments)]
pub fn alquier_expectation_bound<F>(
    model: &ModelSpec,
    spec: &DataGenSpec,
    lambda: f64,
    rho_builder: F,
    m: usize,
    n: usize,
    prior_samples: usize,
    rng: &mut RandomStream,
    quad: &QuadratureRule,
) -> Result<BoundReport>
where
    F: Fn(&Dataset) -> Result<Gaussian>,
{
    if !(lambda > 0.0) || !lambda.is_finite() {
        return invalid(format!("temperature must be positive, got {lambda}"));
    }
    if m < 2 || n == 0 {
        return invalid("need at least two resampled datasets of positive size");
    }
    let l_form = expected_loss_form(model, spec, quad)?;
    let ln = lambda * n as f64;
    let (mut lhs, mut train, mut kl, mut diff) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..m {
        let data = crate::data::sample_dataset(spec, n, rng)?;
        let rho = rho_builder(&data)?;
        let test = quadratic_form_moments(&rho, &l_form)?.mean;
        let tr = quadratic_form_moments(&rho, &model.train_nll(&data)?)?.mean / n as f64;
        let k = kl_divergence(&rho, &model.prior)? / ln;
        lhs.push(test);
        train.push(tr);
        kl.push(k);
        diff.push(test - tr - k);
    }
    let r = empirical_r(model, spec, prior_samples, &[lambda], m, n, rng, quad)?;
    let (r_value, r_se) = match (r.curve.values.first(), r.curve.std_errs.first()) {
        (Some(v), Some(s)) => (*v, *s),
        _ => {
            return Err(Error::NumericUnderflow(format!(
                "R is not finite at λ = {lambda}; the exponent overflowed"
            )))
        }
    };
    let r_term = r_value / ln;
    let (lhs_v, train_v, kl_v) = (mean(&lhs), mean(&train), mean(&kl));
    let combined = mean_stderr(&diff).hypot(r_se / ln);
    let rhs = train_v + kl_v + r_term;
    let slack = 3.0 * combined;
    Ok(BoundReport {
        lambda,
        lhs: lhs_v,
        train_term: train_v,
        kl_term: kl_v,
        r_term,
        rhs,
        combined_std_err: combined,
        mc_slack: slack,
        holds: lhs_v <= rhs + slack,
    })
}

/// `λ* = sqrt(2 KL / (n V))`, the minimizer of `KL/(λn) + λV/2`.
pub fn optimal_lambda_variance(kl_expected: f64, n: usize, avg_loss_variance: f64) -> Result<f64> {
    if !(kl_expected > 0.0) || n == 0 || !(avg_loss_variance > 0.0) {
        return invalid("KL, n and the loss variance must all be positive");
    }
    Ok((2.0 * kl_expected / (n as f64 * avg_loss_variance)).sqrt())
}

/// Natural cubic spline through `(xs, ys)`.
struct NaturalSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalSpline {
    fn new(xs: &[f64], ys: &[f64]) -> Self {
        let n = xs.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives (Thomas algorithm)
            let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let mut sup = vec![0.0; k];
            for i in 0..k {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                sup[i] = h[i + 1];
                rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
            }
            for i in 1..k {
                let w = h[i] / diag[i - 1];
                diag[i] -= w * sup[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - sup[i] * m[i + 2]) / diag[i];
            }
        }
        Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        }
    }

    fn segment(&self, x: f64) -> usize {
        match self.xs.partition_point(|v| *v <= x) {
            0 => 0,
            i => (i - 1).min(self.xs.len() - 2),
        }
    }

    fn eval(&self, x: f64) -> (f64, f64) {
        let i = self.segment(x);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let (a, b) = ((x1 - x) / h, (x - x0) / h);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let v = a * self.ys[i] + b * self.ys[i + 1] + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d =
            (self.ys[i + 1] - self.ys[i]) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0 + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        (v, d)
    }
}

/// Finds `λ` with `R(λ) − λR'(λ) + KL = 0` by bisection on a spline of `R`, keeping the best of all
/// roots and grid points for `(KL + R(λ))/(λn)`.
pub fn lambda_intersection_search(
    lambdas: &[f64],
    r_values: &[f64],
    kl_expected: f64,
    n: usize,
) -> Result<IntersectionResult> {
    check_grid(lambdas)?;
    if lambdas.len() < 20 || r_values.len() != lambdas.len() {
        return invalid("need an R curve with at least 20 grid points");
    }
    if n == 0 || !(kl_expected >= 0.0) {
        return invalid("n must be positive and KL nonnegative");
    }
    let spline = NaturalSpline::new(lambdas, r_values);
    let nf = n as f64;
    let objective = |l: f64| (kl_expected + spline.eval(l).0) / (l * nf);
    let h = |l: f64| {
        let (v, d) = spline.eval(l);
        v - l * d + kl_expected
    };

    let (mut best_l, mut best_v) = (lambdas[0], f64::INFINITY);
    let mut best_idx = Some(0);
    for (i, (&l, &r)) in lambdas.iter().zip(r_values).enumerate() {
        let v = (kl_expected + r) / (l * nf);
        if v < best_v {
            best_l = l;
            best_v = v;
            best_idx = Some(i);
        }
    }
    let mut method = IntersectionMethod::GridArgmin;
    for w in lambdas.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (hl, hh) = (h(lo), h(hi));
        if !(hl > 0.0 && hh < 0.0 || hl < 0.0 && hh > 0.0) {
            continue;
        }
        let rising = hl < 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if (h(mid) < 0.0) == rising {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        let v = objective(root);
        if v <= best_v {
            best_l = root;
            best_v = v;
            best_idx = None;
            method = IntersectionMethod::Bisection;
        }
    }
    Ok(IntersectionResult {
        lambda: best_l,
        objective: best_v,
        method,
        at_boundary: matches!(best_idx, Some(i) if i == 0 || i == lambdas.len() - 1),
    })
}

/// Tilted and plain variances of a sample of losses.
pub fn tilted_variance_from_losses(losses: &[f64], lambda: f64) -> Result<TiltedVariance> {
    if losses.len() < 2 * TILT_BATCHES {
        return invalid(format!("need at least {} losses", 2 * TILT_BATCHES));
    }
    if !(lambda >= 0.0) {
        return invalid("temperature must be nonnegative");
    }
    let weighted = |ls: &[f64]| -> Result<(f64, f64, f64)> {
        let lw: Vec<f64> = ls.iter().map(|l| -lambda * l).collect();
        let z = log_sum_exp(&lw)?;
        let w: Vec<f64> = lw.iter().map(|v| (v - z).exp()).collect();
        // centre on the first loss so that a constant sample gives exact zeros
        let d: Vec<f64> = ls.iter().map(|l| l - ls[0]).collect();
        let m1: f64 = w.iter().zip(&d).map(|(w, d)| w * d).sum();
        let c2: f64 = w.iter().zip(&d).map(|(w, d)| w * (d - m1).powi(2)).sum();
        let c4: f64 = w.iter().zip(&d).map(|(w, d)| w * (d - m1).powi(4)).sum();
        let ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
        Ok((c2, c4 - 3.0 * c2 * c2, ess))
    };
    let (v_tilted, kappa4, ess) = weighted(losses)?;
    let size = losses.len() / TILT_BATCHES;
    let batches: Vec<f64> = losses
        .chunks(size)
        .take(TILT_BATCHES)
        .map(|c| weighted(c).map(|r| r.0))
        .collect::<Result<_>>()?;
    let m = mean(losses);
    let sq: Vec<f64> = losses.iter().map(|l| (l - m).powi(2)).collect();
    Ok(TiltedVariance {
        lambda,
        v_tilted: McEstimate {
            value: v_tilted,
            std_err: (sample_variance(&batches) / TILT_BATCHES as f64).sqrt(),
        },
        v_plain: McEstimate {
            value: sample_variance(losses),
            std_err: mean_stderr(&sq),
        },
        effective_sample_size: ess,
        reliable: ess >= 50.0,
        fourth_cumulant: kappa4,
    })
}

/// Self-normalized importance-sampling estimate of `V_{q_λ}(ℓ)` from `mc` draws of `ν`.
pub fn tilted_variance_check(
    model: &ModelSpec,
    spec: &DataGenSpec,
    theta: &DVector<f64>,
    lambda: f64,
    mc: usize,
    rng: &mut RandomStream,
) -> Result<TiltedVariance> {
    check_dim(model.basis_order_model, theta.len())?;
    if mc < 10_000 {
        return invalid("at least 1e4 draws are required");
    }
    let s2 = model.noise_var_model;
    let sd = spec.noise_var_true.sqrt();
    let losses: Vec<f64> = (0..mc)
        .map(|_| {
            let x = sample_input(spec, rng);
            let y = spec.mean_at(x) + sd * rng.standard_normal();
            let r = y - model.features(x).dot(theta);
            0.5 * (LN_2PI + s2.ln()) + r * r / (2.0 * s2)
        })
        .collect();
    tilted_variance_from_losses(&losses, lambda)
}

/// `E_π[V_D(ln p(D|θ))]` by resampling `m` datasets per prior draw, with the closed form `n·V_ν(ℓ)` alongside.
#[allow(clippy::too_many_arguments)]
pub fn prior_predictive_variance(
    model: &ModelSpec,
    spec: &DataGenSpec,
    prior_samples: usize,
    m: usize,
    n: usize,
    rng: &mut RandomStream,
    quad: &QuadratureRule,
) -> Result<PriorPredictiveVariance> {
    if prior_samples < 100 || m < 100 || n == 0 {
        return invalid("need at least 100 prior draws, 100 datasets and n ≥ 1");
    }
    let thetas = model.prior.sample(rng, prior_samples)?;
    let mut resampled = Vec::with_capacity(prior_samples);
    let mut closed = Vec::with_capacity(prior_samples);
    for row in thetas.row_iter() {
        let theta = row.transpose();
        // ln p(D|θ) = −n·L̂ = n·(gap − L); the additive constant does not affect the variance
        let sums: Vec<f64> = (0..m)
            .map(|_| n as f64 * sample_gap(model, spec, &theta, 0.0, n, rng))
            .collect();
        resampled.push(sample_variance(&sums));
        closed.push(n as f64 * loss_variance(model, spec, &theta, quad)?);
    }
    Ok(PriorPredictiveVariance {
        resampled: McEstimate::from_terms(&resampled),
        closed_form: McEstimate::from_terms(&closed),
    })
}

/// Geometric grid of `points` values from `lo` to `hi`.
pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || points < 2 {
        return invalid("geometric grid needs 0 < lo < hi and at least two points");
    }
    let r = (hi / lo).ln() / (points - 1) as f64;
    Ok((0..points)
        .map(|i| if i == points - 1 { hi } else { lo * (r * i as f64).exp() })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataGenSpec;
    use crate::numerics::gauss_legendre;
    use crate::tempering::likelihood_tempered;

    fn quad() -> QuadratureRule {
        gauss_legendre(256).unwrap()
    }

    fn truth() -> DataGenSpec {
        DataGenSpec::all_ones(10, 1.0).unwrap()
    }

    #[test]
    fn fast_jackknife_matches_the_generic_one() {
        let mut rng = RandomStream::new(13, 0);
        let v: Vec<f64> = (0..200).map(|_| 5.0 * rng.standard_normal()).collect();
        let fast = jackknife_log_mean_exp(&v).unwrap();
        let slow = crate::numerics::jackknife_stderr(&v, |s| log_mean_exp(s).unwrap()).unwrap();
        assert!((fast - slow).abs() <= 1e-9 * slow);
        let mut spike = vec![0.0; 50];
        spike[7] = 800.0;
        let fast = jackknife_log_mean_exp(&spike).unwrap();
        let slow = crate::numerics::jackknife_stderr(&spike, |s| log_mean_exp(s).unwrap()).unwrap();
        assert!((fast - slow).abs() <= 1e-9 * slow);
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(1e-3, 8.0, 20).unwrap();
        assert_eq!(g.len(), 20);
        assert_eq!((g[0], g[19]), (1e-3, 8.0));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn cgf_grid_properties() {
        let model = crate::tempering::ModelSpec::isotropic(10, 1.0, 2.0).unwrap();
        let theta = DVector::from_element(10, 0.8);
        let grid = geometric_grid(1e-3, 8.0, 20).unwrap();
        let j = empirical_cgf(
            &model,
            &truth(),
            &theta,
            &grid,
            2000,
            5,
            &mut RandomStream::new(1, 0),
            &quad(),
        )
        .unwrap();
        assert_eq!(j.values.len(), 20);
        assert!(j.values[0].abs() <= 5.0 * j.std_errs[0]);
        for (v, se) in j.values.iter().zip(&j.std_errs) {
            assert!(*v >= -5.0 * se);
        }
        assert!(j.min_slope_increment() >= -1e-3);
    }

    #[test]
    fn cgf_floor_of_a_matched_constant_model() {
        // constant truth and a model predicting that constant: only the y-noise remains
        let spec = DataGenSpec::new(vec![1.5], 1.0).unwrap();
        let model = crate::tempering::ModelSpec::isotropic(1, 2.0, 2.0).unwrap();
        let theta = DVector::from_element(1, 1.5);
        let grid = [0.05, 0.1, 0.2, 0.5, 1.0];
        let j = empirical_cgf(
            &model,
            &spec,
            &theta,
            &grid,
            20_000,
            5,
            &mut RandomStream::new(2, 0),
            &quad(),
        )
        .unwrap();
        for ((l, v), se) in grid.iter().zip(&j.values).zip(&j.std_errs) {
            let floor = constant_model_cgf(*l, 1.0, 2.0);
            assert!((v - floor).abs() <= 5.0 * se, "{l}: {v} vs {floor} ± {se}");
            assert!(floor > 0.0);
        }
    }

    #[test]
    fn cgf_curvature_at_origin_is_the_loss_variance() {
        let model = crate::tempering::ModelSpec::isotropic(10, 1.0, 2.0).unwrap();
        let theta = DVector::from_element(10, 0.8);
        let q = quad();
        let v = loss_variance(&model, &truth(), &theta, &q).unwrap();
        let h = 1e-3;
        let m = 20_000;
        let j = empirical_cgf(
            &model,
            &truth(),
            &theta,
            &[h, 2.0 * h, 3.0 * h],
            m,
            5,
            &mut RandomStream::new(3, 0),
            &q,
        )
        .unwrap();
        let curv = (j.values[2] - 2.0 * j.values[1] + j.values[0]) / (h * h);
        // the resampled curvature estimates V with relative error about sqrt(2/m) times the kurtosis factor
        let tol = 5.0 * v * (8.0 / m as f64).sqrt();
        assert!((curv - v).abs() <= tol, "{curv} vs {v}");
    }

    #[test]
    fn cgf_slope_tracks_the_best_case_gap_at_large_temperature() {
        let model = crate::tempering::ModelSpec::isotropic(10, 1.0, 2.0).unwrap();
        let theta = DVector::from_element(10, 1.0);
        let q = quad();
        let m = 500;
        let grid = [50.0, 100.0, 200.0, 400.0];
        let mut rng = RandomStream::new(4, 0);
        let j = empirical_cgf(&model, &truth(), &theta, &grid, m, 5, &mut rng, &q).unwrap();
        let mut rng = RandomStream::new(4, 0);
        let l_theta = expected_loss_form(&model, &truth(), &q).unwrap().eval(&theta);
        let best = (0..m)
            .map(|_| sample_gap(&model, &truth(), &theta, l_theta, 5, &mut rng))
            .fold(f64::NEG_INFINITY, f64::max);
        let slopes: Vec<f64> = j
            .values
            .windows(2)
            .zip(grid.windows(2))
            .map(|(v, l)| (v[1] - v[0]) / (l[1] - l[0]))
            .collect();
        assert!(slopes.windows(2).all(|s| s[1] >= s[0] - 1e-12));
        assert!((slopes[2] - best).abs() / best.abs() < 0.05, "{slopes:?} vs {best}");
    }

    #[test]
    fn cgf_rejects_bad_arguments() {
        let model = crate::tempering::ModelSpec::isotropic(10, 1.0, 2.0).unwrap();
        let theta = DVector::from_element(10, 1.0);
        let mut rng = RandomStream::new(5, 0);
        assert!(empirical_cgf(&model, &truth(), &theta, &[0.1], 50, 5, &mut rng, &quad()).is_err());
        assert!(empirical_cgf(&model, &truth(), &theta, &[0.0, 0.1], 200, 5, &mut rng, &quad()).is_err());
        assert!(empirical_cgf(&model, &truth(), &theta, &[], 200, 5, &mut rng, &quad()).is_err());
    }

    #[test]
    fn r_function_properties() {
        let model = crate::tempering::ModelSpec::isotropic(10, 1.0, 2.0).unwrap();
        let grid = geometric_grid(1e-3, 8.0, 20).unwrap();
        let r = empirical_r(
            &model,
            &truth(),
            200,
            &grid,
            200,
            5,
            &mut RandomStream::new(6, 0),
            &quad(),
        )
        .unwrap();
        let c = &r.curve;
        assert!(c.values[0].abs() <= 5.0 * c.std_errs[0]);
        assert!(c.min_slope_increment() >= -1e-3);
        let bound = r.variance_bound();
        let rel_v = r.mean_loss_variance.std_err / r.mean_loss_variance.value;
        for i in (0..c.lambdas.len()).take_while(|&i| c.lambdas[i] <= 0.5) {
            let rel = (c.std_errs[i] / c.values[i].abs()).hypot(rel_v);
            assert!(
                c.values[i] <= bound[i] * (1.0 + 5.0 * rel),
                "{} {} {}",
                c.lambdas[i],
                c.values[i],
                bound[i]
            );
        }
    }

    #[test]
    fn bound_holds_for_tempered_posteriors_and_the_prior() {
        let model = crate::tempering::ModelSpec::isotropic(10, 1.0, 2.0).unwrap();
        let q = quad();
        for (i, lambda) in [0.5, 1.0].into_iter().enumerate() {
            let report = alquier_expectation_bound(
                &model,
                &truth(),
                lambda,
                |d| Ok(likelihood_tempered(&model, d, lambda)?.gaussian),
                200,
                5,
                200,
                &mut RandomStream::new(7, i as u64),
                &q,
            )
            .unwrap();
            assert!(report.holds, "{report:?}");
            assert!(
                (report.rhs - (report.train_term + report.kl_term + report.r_term)).abs()
                    <= 1e-12 * report.rhs.abs().max(1.0)
            );
        }
        // a fixed posterior at tiny λ: the KL term blows up
        let tiny = alquier_expectation_bound(
            &model,
            &truth(),
            1e-3,
            |d| Ok(likelihood_tempered(&model, d, 1.0)?.gaussian),
            200,
            5,
            200,
            &mut RandomStream::new(7, 9),
            &q,
        )
        .unwrap();
        assert!(tiny.holds);
        assert!(tiny.kl_term > tiny.train_term + tiny.r_term.abs(), "{tiny:?}");
        let prior = alquier_expectation_bound(
            &model,
            &truth(),
            0.5,
            |_| Ok(model.prior.clone()),
            200,
            5,
            200,
            &mut RandomStream::new(8, 0),
            &q,
        )
        .unwrap();
        assert!(prior.holds && prior.kl_term.abs() < 1e-12);
    }

    #[test]
    fn optimal_lambda_examples() {
        assert!((optimal_lambda_variance(2.0, 100, 0.04).unwrap() - 1.0).abs() < 1e-14);
        let a = optimal_lambda_variance(0.7, 5, 1.3).unwrap();
        let b = optimal_lambda_variance(2.8, 5, 1.3).unwrap();
        assert!((b / a - 2.0).abs() < 1e-14);
        assert!(optimal_lambda_variance(0.0, 5, 1.0).is_err());
        assert!(optimal_lambda_variance(1.0, 0, 1.0).is_err());
    }

    #[test]
    fn optimal_lambda_minimizes_the_variance_bound() {
        let mut rng = RandomStream::new(9, 0);
        for _ in 0..50 {
            let kl = rng.uniform(0.01, 10.0);
            let n = 1 + (rng.uniform(0.0, 200.0) as usize);
            let v = rng.uniform(0.01, 5.0);
            let star = optimal_lambda_variance(kl, n, v).unwrap();
            let g = |l: f64| kl / (l * n as f64) + l * v / 2.0;
            let grid = geometric_grid(star / 100.0, star * 100.0, 4001).unwrap();
            let (mut arg, mut best) = (0.0, f64::INFINITY);
            for &l in &grid {
                if g(l) < best {
                    best = g(l);
                    arg = l;
                }
            }
            let step = (100.0f64 * 100.0).ln() / 4000.0;
            assert!((arg / star).ln().abs() <= step);
        }
    }

    #[test]
    fn intersection_recovers_the_quadratic_minimizer() {
        let grid = geometric_grid(1e-2, 10.0, 40).unwrap();
        let (a, c) = (0.7, 1.3);
        let r: Vec<f64> = grid.iter().map(|l| a * l * l).collect();
        let res = lambda_intersection_search(&grid, &r, c, 5).unwrap();
        assert!((res.lambda / (c / a).sqrt() - 1.0).abs() < 0.01, "{res:?}");
        assert_eq!(res.method, IntersectionMethod::Bisection);
        let obj: Vec<f64> = grid.iter().zip(&r).map(|(l, r)| (c + r) / (l * 5.0)).collect();
        assert!(obj.iter().all(|v| res.objective <= *v));

        let zero = lambda_intersection_search(&grid, &r, 0.0, 5).unwrap();
        assert_eq!(zero.lambda, grid[0]);
        assert!(zero.at_boundary);
        assert!(lambda_intersection_search(&grid[..10], &r[..10], c, 5).is_err());
    }

    #[test]
    fn spline_interpolates_cubics_exactly_inside() {
        let xs: Vec<f64> = (0..25).map(|i| 0.1 * i as f64 + 0.01 * (i * i) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let s = NaturalSpline::new(&xs, &ys);
        for x in [0.05, 0.7, 2.3] {
            let (v, d) = s.eval(x);
            assert!((v - (2.0 * x + 1.0)).abs() < 1e-12 && (d - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tilted_variance_cases() {
        let model = crate::tempering::ModelSpec::isotropic(10, 1.0, 2.0).unwrap();
        let theta = DVector::from_element(10, 0.5);
        let zero =
            tilted_variance_check(&model, &truth(), &theta, 0.0, 100_000, &mut RandomStream::new(10, 0)).unwrap();
        assert!(zero.v_tilted.z_score(zero.v_plain.value, zero.v_plain.std_err) < 3.0);
        assert!(zero.reliable);

        let hot =
            tilted_variance_check(&model, &truth(), &theta, 50.0, 100_000, &mut RandomStream::new(10, 0)).unwrap();
        assert!(hot.v_tilted.value < hot.v_plain.value);
        let hotter =
            tilted_variance_check(&model, &truth(), &theta, 5.0, 100_000, &mut RandomStream::new(10, 0)).unwrap();
        assert!(hot.v_tilted.value < hotter.v_tilted.value);
        assert!(hot.effective_sample_size < zero.effective_sample_size);

        let flat = tilted_variance_from_losses(&[2.5; 1000], 3.0).unwrap();
        assert_eq!((flat.v_tilted.value, flat.v_plain.value), (0.0, 0.0));
        assert!(tilted_variance_check(&model, &truth(), &theta, 1.0, 100, &mut RandomStream::new(10, 0)).is_err());
    }

    #[test]
    fn prior_predictive_variance_cases() {
        let q = quad();
        let spec = truth();
        let model = crate::tempering::ModelSpec::isotropic(10, 1.0, 2.0).unwrap();
        let a = prior_predictive_variance(&model, &spec, 100, 400, 5, &mut RandomStream::new(11, 0), &q).unwrap();
        let b = prior_predictive_variance(&model, &spec, 100, 400, 10, &mut RandomStream::new(11, 0), &q).unwrap();
        assert!((b.closed_form.value / a.closed_form.value - 2.0).abs() < 0.2);
        // same prior draws on both sides, so the comparison is paired
        assert!((a.resampled.value / a.closed_form.value - 1.0).abs() < 0.05, "{a:?}");

        let wide = crate::tempering::ModelSpec::isotropic(10, 1.0, 8.0).unwrap();
        let c = prior_predictive_variance(&wide, &spec, 100, 400, 5, &mut RandomStream::new(11, 0), &q).unwrap();
        assert!(c.closed_form.value > a.closed_form.value);

        // Dirac prior at a matched constant model leaves only the y-noise floor
        let flat = DataGenSpec::new(vec![1.5], 1.0).unwrap();
        let dirac = crate::tempering::ModelSpec::new(
            1,
            1.0,
            Gaussian::isotropic(DVector::from_element(1, 1.5), 1e-30).unwrap(),
        )
        .unwrap();
        let d = prior_predictive_variance(&dirac, &flat, 100, 400, 5, &mut RandomStream::new(12, 0), &q).unwrap();
        // ℓ − const = ε²/2 with ε ~ N(0,1): variance 1/2 per sample
        assert!((d.closed_form.value - 2.5).abs() < 1e-9);
        assert!(d.resampled.z_score(2.5, 0.0) < 5.0);
    }
}
