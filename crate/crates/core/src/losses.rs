//! Test and train log-losses of individual models and of Gaussian posteriors.
//!
//! Expectations over `y` are analytic; expectations over `x ~ U(-1, 1)` use a
//! Gauss–Legendre rule. Train losses come in two conventions: `norm` divides
//! by `n`, `sum` does not. The temperature gradients are exact in the sum form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{DataGenSpec, Dataset, TransformSet};
use crate::error::{check_dim, invalid, Result};
use crate::gaussian::{quadratic_form_moments, QuadraticForm};
use crate::numerics::{mean_stderr, QuadratureRule, RandomStream};
use crate::tempering::{ModelSpec, TemperedPosterior};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Closed-form losses of a posterior, with Monte Carlo standard errors when estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub gibbs_test: f64,
    pub gibbs_train_norm: f64,
    pub gibbs_train_sum: f64,
    pub bayes_test: f64,
    pub mc_std_err: LossStdErr,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStdErr {
    pub gibbs_test: f64,
    pub gibbs_train_norm: f64,
    pub gibbs_train_sum: f64,
    pub bayes_test: f64,
}

/// Test-side Gibbs loss and both conventions of the train-side Gibbs loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GibbsLosses {
    pub test: f64,
    pub train_norm: f64,
    pub train_sum: f64,
}

/// `L(θ) = E_ν[−ln p(y|x,θ)]` as a quadratic in `θ`.
pub fn expected_loss_form(model: &ModelSpec, spec: &DataGenSpec, quad: &QuadratureRule) -> Result<QuadraticForm> {
    model.validate()?;
    spec.validate()?;
    let k = model.basis_order_model;
    let s2 = model.noise_var_model;
    let mut a = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    let mut c = 0.0;
    for (x, w) in quad.iter() {
        let u = 0.5 * w;
        let phi = model.features(x);
        let m = spec.mean_at(x);
        a.ger(u / (2.0 * s2), &phi, &phi, 1.0);
        b.axpy(-u * m / s2, &phi, 1.0);
        c += u * (spec.noise_var_true + m * m) / (2.0 * s2);
    }
    c += 0.5 * (LN_2PI + s2.ln());
    QuadraticForm::new(a, b, c)
}

/// `L(θ)` evaluated node by node.
pub fn expected_log_loss(
    model: &ModelSpec,
    spec: &DataGenSpec,
    theta: &DVector<f64>,
    quad: &QuadratureRule,
) -> Result<f64> {
    check_dim(model.basis_order_model, theta.len())?;
    spec.validate()?;
    let s2 = model.noise_var_model;
    Ok(quad.uniform_mean(|x| {
        let r = spec.mean_at(x) - model.features(x).dot(theta);
        0.5 * (LN_2PI + s2.ln()) + (spec.noise_var_true + r * r) / (2.0 * s2)
    }))
}

/// `L̂(D, θ) = −(1/n) ln p(D|θ)`.
pub fn empirical_log_loss(model: &ModelSpec, data: &Dataset, theta: &DVector<f64>) -> Result<f64> {
    if data.is_empty() {
        return invalid("the normalized empirical loss is undefined on an empty dataset");
    }
    Ok(empirical_log_loss_sum(model, data, theta)? / data.len() as f64)
}

/// `−ln p(D|θ)`; zero on an empty dataset.
pub fn empirical_log_loss_sum(model: &ModelSpec, data: &Dataset, theta: &DVector<f64>) -> Result<f64> {
    check_dim(model.basis_order_model, theta.len())?;
    let s2 = model.noise_var_model;
    Ok(data
        .xs()
        .iter()
        .zip(data.ys())
        .map(|(&x, &y)| {
            let r = y - model.features(x).dot(theta);
            0.5 * (LN_2PI + s2.ln()) + r * r / (2.0 * s2)
        })
        .sum())
}

/// `L̂_DA(D, θ) = (1/n) Σ_i E_t[−ln p(y_i | t(x_i), θ)]`.
pub fn da_empirical_loss(
    model: &ModelSpec,
    data: &Dataset,
    transforms: &TransformSet,
    theta: &DVector<f64>,
) -> Result<f64> {
    check_dim(model.basis_order_model, theta.len())?;
    transforms.validate()?;
    if data.is_empty() {
        return invalid("the normalized empirical loss is undefined on an empty dataset");
    }
    let s2 = model.noise_var_model;
    let total: f64 = data
        .xs()
        .iter()
        .zip(data.ys())
        .map(|(&x, &y)| {
            transforms
                .iter()
                .map(|(t, w)| {
                    let r = y - model.features(t.apply(x)).dot(theta);
                    w * (0.5 * (LN_2PI + s2.ln()) + r * r / (2.0 * s2))
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / data.len() as f64)
}

/// `G(ρ)` and `Ĝ(ρ, D)` in closed form. For augmented posteriors the train side uses `L̂_DA`.
pub fn gibbs_losses(post: &TemperedPosterior<'_>, spec: &DataGenSpec, quad: &QuadratureRule) -> Result<GibbsLosses> {
    let l = expected_loss_form(post.model, spec, quad)?;
    let test = quadratic_form_moments(&post.gaussian, &l)?.mean;
    let n = post.data.len();
    let train_sum = if n == 0 {
        0.0
    } else {
        quadratic_form_moments(&post.gaussian, post.train_nll())?.mean
    };
    Ok(GibbsLosses {
        test,
        train_norm: if n == 0 { f64::NAN } else { train_sum / n as f64 },
        train_sum,
    })
}

/// `B(ρ) = E_ν[−ln E_ρ p(y|x,θ)]` via the Gaussian posterior predictive.
pub fn bayes_loss(post: &TemperedPosterior<'_>, spec: &DataGenSpec, quad: &QuadratureRule) -> Result<f64> {
    spec.validate()?;
    let g = &post.gaussian;
    let s2 = post.model.noise_var_model;
    Ok(quad.uniform_mean(|x| {
        let phi = post.model.features(x);
        let pred_var = s2 + phi.dot(&(g.cov() * &phi));
        let r = spec.mean_at(x) - g.mean().dot(&phi);
        0.5 * (LN_2PI + pred_var.ln()) + (spec.noise_var_true + r * r) / (2.0 * pred_var)
    }))
}

pub fn loss_report(post: &TemperedPosterior<'_>, spec: &DataGenSpec, quad: &QuadratureRule) -> Result<LossReport> {
    let g = gibbs_losses(post, spec, quad)?;
    Ok(LossReport {
        gibbs_test: g.test,
        gibbs_train_norm: g.train_norm,
        gibbs_train_sum: g.train_sum,
        bayes_test: bayes_loss(post, spec, quad)?,
        mc_std_err: LossStdErr::default(),
    })
}

/// Gibbs losses averaged over `k` posterior draws; the Bayes loss stays closed-form.
pub fn loss_report_mc(
    post: &TemperedPosterior<'_>,
    spec: &DataGenSpec,
    quad: &QuadratureRule,
    rng: &mut RandomStream,
    k: usize,
) -> Result<LossReport> {
    if k < 2 {
        return invalid("at least two posterior draws are required");
    }
    let l = expected_loss_form(post.model, spec, quad)?;
    let draws = post.gaussian.sample(rng, k)?;
    let mut test = Vec::with_capacity(k);
    let mut train = Vec::with_capacity(k);
    for row in draws.row_iter() {
        let theta = row.transpose();
        test.push(l.eval(&theta));
        train.push(if post.data.is_empty() {
            0.0
        } else {
            post.train_nll().eval(&theta)
        });
    }
    let n = post.data.len() as f64;
    let sum = crate::numerics::mean(&train);
    let sum_se = mean_stderr(&train);
    Ok(LossReport {
        gibbs_test: crate::numerics::mean(&test),
        gibbs_train_norm: if n == 0.0 { f64::NAN } else { sum / n },
        gibbs_train_sum: sum,
        bayes_test: bayes_loss(post, spec, quad)?,
        mc_std_err: LossStdErr {
            gibbs_test: mean_stderr(&test),
            gibbs_train_norm: if n == 0.0 { f64::NAN } else { sum_se / n },
            gibbs_train_sum: sum_se,
            bayes_test: 0.0,
        },
    })
}

/// Closed-form `V_ν(−ln p(y|x,θ))` for a single model.
pub fn loss_variance(
    model: &ModelSpec,
    spec: &DataGenSpec,
    theta: &DVector<f64>,
    quad: &QuadratureRule,
) -> Result<f64> {
    check_dim(model.basis_order_model, theta.len())?;
    spec.validate()?;
    let s2 = model.noise_var_model;
    let v = spec.noise_var_true;
    // given x the loss is const + (y − θᵀφ)²/(2σ²) with y − θᵀφ ~ N(r, v)
    let mut within = 0.0;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (x, w) in quad.iter() {
        let u = 0.5 * w;
        let r = spec.mean_at(x) - model.features(x).dot(theta);
        within += u * (4.0 * r * r * v + 2.0 * v * v) / (4.0 * s2 * s2);
        let cm = (r * r + v) / (2.0 * s2);
        m1 += u * cm;
        m2 += u * cm * cm;
    }
    Ok(within + (m2 - m1 * m1).max(0.0))
}
