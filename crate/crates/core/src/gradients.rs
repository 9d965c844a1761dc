//! Temperature gradients of the train Gibbs, test Gibbs and Bayes losses.
//!
//! All identities use the sum convention for the train loss,
//! `Ĝ_sum(ρ) = E_ρ[−ln p(D|θ)]`:
//!
//! * `∂λ Ĝ_sum = −V(ln p(D|θ))`
//! * `∂λ G = −Cov(−ln p(D|θ), L(θ))`
//! * `∂λ B = E_ν[Ĝ_sum(p̃)] − Ĝ_sum(p)`, with `p̃` the posterior updated by one fresh sample
//!
//! For augmented posteriors `−ln p(D|θ)` is replaced by `n · L̂_DA`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_input, DataGenSpec, Dataset};
use crate::error::{invalid, Error, Result};
use crate::gaussian::{quadratic_form_covariance, quadratic_form_moments, quadratic_form_third_cumulant};
use crate::losses::expected_loss_form;
use crate::numerics::{mean, mean_stderr, sample_variance, McEstimate, QuadratureRule, RandomStream};
use crate::tempering::{likelihood_tempered, ModelSpec, TemperedPosterior, TemperingKind};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const S_FORM_BATCHES: usize = 20;
const S_FORM_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientMethod {
    ClosedForm,
    MonteCarlo,
    FiniteDifference,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientStdErr {
    pub d_gibbs_train: f64,
    pub d_gibbs_test: f64,
    pub d_bayes_test: f64,
}

/// Gradients of the three losses at one temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub d_gibbs_train: f64,
    pub d_gibbs_test: f64,
    pub d_bayes_test: f64,
    /// How the Bayes gradient was obtained; the Gibbs gradients are always closed-form.
    pub method: GradientMethod,
    pub std_err: GradientStdErr,
    pub mc_samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CpeLabel {
    #[serde(rename = "CPE")]
    Cpe,
    #[serde(rename = "WPE")]
    Wpe,
    Neutral,
}

/// Sign of the Bayes-loss gradient at `λ = 1` against a noise band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpeVerdict {
    pub grad_at_one: f64,
    pub std_err: f64,
    pub label: CpeLabel,
    pub threshold: f64,
}

impl CpeVerdict {
    /// Band `max(3·std_err, 1e-4)`.
    pub fn from_estimate(est: McEstimate) -> Self {
        let threshold = (3.0 * est.std_err).max(1e-4);
        let label = if est.value < -threshold {
            CpeLabel::Cpe
        } else if est.value > threshold {
            CpeLabel::Wpe
        } else {
            CpeLabel::Neutral
        };
        Self {
            grad_at_one: est.value,
            std_err: est.std_err,
            label,
            threshold,
        }
    }
}

/// Function whose posterior expectation is differentiated by [`grad_meta`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GibbsTarget {
    TrainGibbs,
    TestGibbs,
}

/// Bayes-gradient estimate from the S-score covariance, with the self-normalization check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SScoreEstimate {
    pub gradient: McEstimate,
    /// Posterior mean of `−S(θ)`; one by construction.
    pub neg_s_mean: McEstimate,
}

fn require_likelihood_like(post: &TemperedPosterior<'_>, what: &str) -> Result<()> {
    match post.kind {
        TemperingKind::Likelihood | TemperingKind::DataAugmented => Ok(()),
        other => invalid(format!(
            "{what} needs a likelihood-tempered posterior, got {other:?}; use grad_meta"
        )),
    }
}

/// `∂λ Ĝ_sum = −V_{p^λ}(ln p(D|θ))`.
pub fn grad_empirical_gibbs(post: &TemperedPosterior<'_>) -> Result<f64> {
    require_likelihood_like(post, "grad_empirical_gibbs")?;
    Ok(-quadratic_form_moments(&post.gaussian, post.train_nll())?.variance)
}

/// `∂λ G = −Cov_{p^λ}(−ln p(D|θ), L(θ))`.
pub fn grad_gibbs_test(post: &TemperedPosterior<'_>, spec: &DataGenSpec, quad: &QuadratureRule) -> Result<f64> {
    require_likelihood_like(post, "grad_gibbs_test")?;
    let l = expected_loss_form(post.model, spec, quad)?;
    Ok(-quadratic_form_covariance(&post.gaussian, post.train_nll(), &l)?)
}

/// `∂ E_ρ[f]` for any tempering kind: `Cov(c, f)` with `c` the log-factor carrying the temperature.
pub fn grad_meta(
    post: &TemperedPosterior<'_>,
    target: GibbsTarget,
    spec: &DataGenSpec,
    quad: &QuadratureRule,
) -> Result<f64> {
    let loglik = post.train_nll().scaled(-1.0);
    let c = match post.kind {
        TemperingKind::Likelihood | TemperingKind::DataAugmented => loglik,
        TemperingKind::Prior => post.model.prior_log_density(),
        TemperingKind::Full => loglik.plus(&post.model.prior_log_density())?,
    };
    let f = match target {
        GibbsTarget::TrainGibbs => post.train_nll().clone(),
        GibbsTarget::TestGibbs => expected_loss_form(post.model, spec, quad)?,
    };
    quadratic_form_covariance(&post.gaussian, &c, &f)
}

/// Per-posterior constants of the one-sample update.
struct UpdateKernel<'p> {
    cov: &'p DMatrix<f64>,
    mean: &'p DVector<f64>,
    a: &'p DMatrix<f64>,
    grad: DVector<f64>,
    noise_var: f64,
}

impl<'p> UpdateKernel<'p> {
    fn new(post: &'p TemperedPosterior<'_>) -> Self {
        let q = post.train_nll();
        let mean = post.gaussian.mean();
        Self {
            cov: post.gaussian.cov(),
            mean,
            a: q.a(),
            grad: q.a() * mean * 2.0 + q.b(),
            noise_var: post.model.noise_var_model,
        }
    }

    /// Returns `(s, δ₀, uᵀAu, uᵀg)` for feature vector `phi`, where `δ₀ = φᵀμ`.
    fn parts(&self, phi: &DVector<f64>) -> (f64, f64, f64, f64) {
        let u = self.cov * phi;
        let s = self.noise_var + phi.dot(&u);
        (s, phi.dot(self.mean), u.dot(&(self.a * &u)), u.dot(&self.grad))
    }

    /// `Ĝ_sum(p̃) − Ĝ_sum(p)` after observing `(x, y)`.
    fn delta(&self, phi: &DVector<f64>, y: f64) -> f64 {
        let (s, pred, uau, ug) = self.parts(phi);
        let r = y - pred;
        (r * r / (s * s) - 1.0 / s) * uau + (r / s) * ug
    }
}

/// `∂λ B` by Monte Carlo over `m` draws `(x, y) ~ ν`; each draw is a closed-form rank-one update.
pub fn grad_bayes_test(
    post: &TemperedPosterior<'_>,
    spec: &DataGenSpec,
    rng: &mut RandomStream,
    m: usize,
) -> Result<McEstimate> {
    if m < 2 {
        return invalid("at least two data-distribution draws are required");
    }
    spec.validate()?;
    let kernel = UpdateKernel::new(post);
    let sd = spec.noise_var_true.sqrt();
    let mut terms = Vec::with_capacity(m);
    for _ in 0..m {
        let x = sample_input(spec, rng);
        let y = spec.mean_at(x) + sd * rng.standard_normal();
        terms.push(kernel.delta(&post.model.features(x), y));
    }
    Ok(McEstimate::from_terms(&terms))
}

/// `∂λ B` with the `y`-expectation taken analytically and the `x`-expectation by quadrature.
pub fn grad_bayes_test_exact(post: &TemperedPosterior<'_>, spec: &DataGenSpec, quad: &QuadratureRule) -> Result<f64> {
    spec.validate()?;
    let kernel = UpdateKernel::new(post);
    let v = spec.noise_var_true;
    Ok(quad.uniform_mean(|x| {
        let (s, pred, uau, ug) = kernel.parts(&post.model.features(x));
        let delta = spec.mean_at(x) - pred;
        ((delta * delta + v) / (s * s) - 1.0 / s) * uau + (delta / s) * ug
    }))
}

/// `∂λ B = −Cov(−ln p(D|θ), S(θ))` from `k` posterior draws and `m` data-distribution draws.
pub fn grad_bayes_via_s(
    post: &TemperedPosterior<'_>,
    spec: &DataGenSpec,
    rng: &mut RandomStream,
    m: usize,
    k: usize,
) -> Result<SScoreEstimate> {
    if m < 2 || k < 2 * S_FORM_BATCHES {
        return invalid(format!(
            "need at least 2 data draws and {} posterior draws",
            2 * S_FORM_BATCHES
        ));
    }
    spec.validate()?;
    let thetas = post.gaussian.sample(rng, k)?;
    let a: Vec<f64> = thetas
        .row_iter()
        .map(|r| post.train_nll().eval(&r.transpose()))
        .collect();
    let sd = spec.noise_var_true.sqrt();
    let samples: Vec<(f64, f64)> = (0..m)
        .map(|_| {
            let x = sample_input(spec, rng);
            (x, spec.mean_at(x) + sd * rng.standard_normal())
        })
        .collect();

    let batch = k / S_FORM_BATCHES;
    let batch_of = |j: usize| (j / batch).min(S_FORM_BATCHES - 1);
    let mut batch_mean = [0.0; S_FORM_BATCHES];
    let mut batch_len = [0usize; S_FORM_BATCHES];
    for (j, v) in a.iter().enumerate() {
        batch_mean[batch_of(j)] += v;
        batch_len[batch_of(j)] += 1;
    }
    for g in 0..S_FORM_BATCHES {
        batch_mean[g] /= batch_len[g] as f64;
    }
    let a_bar = mean(&a);
    let s2 = post.model.noise_var_model;
    let log_floor = 1e-300f64.ln();

    struct Partial {
        terms: Vec<f64>,
        batch_sums: [f64; S_FORM_BATCHES],
        neg_s: Vec<f64>,
    }

    let partials: Vec<Result<Partial>> = samples
        .par_chunks(S_FORM_CHUNK)
        .map(|chunk| {
            let mut p = Partial {
                terms: Vec::with_capacity(chunk.len()),
                batch_sums: [0.0; S_FORM_BATCHES],
                neg_s: vec![0.0; k],
            };
            let mut logp = vec![0.0; k];
            for &(x, y) in chunk {
                let preds = &thetas * post.model.features(x);
                let mut max = f64::NEG_INFINITY;
                for (lp, pred) in logp.iter_mut().zip(preds.iter()) {
                    let r = y - pred;
                    *lp = -0.5 * (LN_2PI + s2.ln()) - r * r / (2.0 * s2);
                    max = max.max(*lp);
                }
                if max < log_floor {
                    return Err(Error::NumericUnderflow(format!(
                        "every predictive density at (x={x}, y={y}) is below 1e-300"
                    )));
                }
                let mut tot = 0.0;
                let mut num = 0.0;
                let mut bw = [0.0; S_FORM_BATCHES];
                let mut bn = [0.0; S_FORM_BATCHES];
                for (j, lp) in logp.iter_mut().enumerate() {
                    let w = (*lp - max).exp();
                    *lp = w;
                    tot += w;
                    num += w * (a[j] - a_bar);
                    let g = batch_of(j);
                    bw[g] += w;
                    bn[g] += w * (a[j] - batch_mean[g]);
                }
                p.terms.push(num / tot);
                for g in 0..S_FORM_BATCHES {
                    p.batch_sums[g] += bn[g] / bw[g];
                }
                let scale = k as f64 / tot;
                for (ns, w) in p.neg_s.iter_mut().zip(&logp) {
                    *ns += w * scale;
                }
            }
            Ok(p)
        })
        .collect();

    let mut terms = Vec::with_capacity(m);
    let mut batch_sums = [0.0; S_FORM_BATCHES];
    let mut neg_s = vec![0.0; k];
    for p in partials {
        let p = p?;
        terms.extend(p.terms);
        for (acc, v) in batch_sums.iter_mut().zip(&p.batch_sums) {
            *acc += v;
        }
        for (acc, v) in neg_s.iter_mut().zip(&p.neg_s) {
            *acc += v;
        }
    }
    let value = mean(&terms);
    let batches: Vec<f64> = batch_sums.iter().map(|s| s / m as f64).collect();
    let se_nu = mean_stderr(&terms);
    let se_post = (sample_variance(&batches) / S_FORM_BATCHES as f64).sqrt();
    for v in neg_s.iter_mut() {
        *v /= m as f64;
    }
    Ok(SScoreEstimate {
        gradient: McEstimate {
            value,
            std_err: se_nu.hypot(se_post),
        },
        neg_s_mean: McEstimate::from_terms(&neg_s),
    })
}

/// `∂²λ G = E[(ℓ − Eℓ)²(L − EL)]` with `ℓ = −ln p(D|θ)`, from `k` posterior draws.
pub fn second_grad_gibbs_test(
    post: &TemperedPosterior<'_>,
    spec: &DataGenSpec,
    quad: &QuadratureRule,
    rng: &mut RandomStream,
    k: usize,
) -> Result<McEstimate> {
    require_likelihood_like(post, "second_grad_gibbs_test")?;
    if k < 100 {
        return invalid("at least 100 posterior draws are required");
    }
    let l = expected_loss_form(post.model, spec, quad)?;
    let draws = post.gaussian.sample(rng, k)?;
    let (mut ell, mut big) = (Vec::with_capacity(k), Vec::with_capacity(k));
    for row in draws.row_iter() {
        let t = row.transpose();
        ell.push(post.train_nll().eval(&t));
        big.push(l.eval(&t));
    }
    let (me, mb) = (mean(&ell), mean(&big));
    let terms: Vec<f64> = ell.iter().zip(&big).map(|(a, b)| (a - me).powi(2) * (b - mb)).collect();
    Ok(McEstimate::from_terms(&terms))
}

/// Closed-form third joint cumulant `κ(ℓ, ℓ, L)`.
pub fn second_grad_gibbs_test_exact(
    post: &TemperedPosterior<'_>,
    spec: &DataGenSpec,
    quad: &QuadratureRule,
) -> Result<f64> {
    require_likelihood_like(post, "second_grad_gibbs_test_exact")?;
    let l = expected_loss_form(post.model, spec, quad)?;
    let nll = post.train_nll();
    quadratic_form_third_cumulant(&post.gaussian, nll, nll, &l)
}

/// Central difference `(f(λ+h) − f(λ−h)) / 2h`.
pub fn finite_difference<F>(mut f: F, lambda: f64, h: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(h > 0.0) {
        return invalid(format!("step must be positive, got {h}"));
    }
    if lambda - h < 0.0 {
        return invalid(format!("λ − h = {} is negative", lambda - h));
    }
    Ok((f(lambda + h)? - f(lambda - h)?) / (2.0 * h))
}

/// Sample-based `−V(ℓ)` over `k` posterior draws.
pub fn grad_empirical_gibbs_mc(post: &TemperedPosterior<'_>, rng: &mut RandomStream, k: usize) -> Result<McEstimate> {
    require_likelihood_like(post, "grad_empirical_gibbs_mc")?;
    let draws = post.gaussian.sample(rng, k.max(2))?;
    let ell: Vec<f64> = draws
        .row_iter()
        .map(|r| post.train_nll().eval(&r.transpose()))
        .collect();
    let me = mean(&ell);
    let terms: Vec<f64> = ell.iter().map(|a| -(a - me).powi(2)).collect();
    Ok(McEstimate::from_terms(&terms))
}

/// Sample-based `−Cov(ℓ, L)` over `k` posterior draws.
pub fn grad_gibbs_test_mc(
    post: &TemperedPosterior<'_>,
    spec: &DataGenSpec,
    quad: &QuadratureRule,
    rng: &mut RandomStream,
    k: usize,
) -> Result<McEstimate> {
    require_likelihood_like(post, "grad_gibbs_test_mc")?;
    let l = expected_loss_form(post.model, spec, quad)?;
    let draws = post.gaussian.sample(rng, k.max(2))?;
    let pairs: Vec<(f64, f64)> = draws
        .row_iter()
        .map(|r| {
            let t = r.transpose();
            (post.train_nll().eval(&t), l.eval(&t))
        })
        .collect();
    let me = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    let terms: Vec<f64> = pairs.iter().map(|(a, b)| -(a - me) * (b - mb)).collect();
    Ok(McEstimate::from_terms(&terms))
}

/// Closed-form Gibbs gradients and a Monte Carlo Bayes gradient.
pub fn gradient_report(
    post: &TemperedPosterior<'_>,
    spec: &DataGenSpec,
    quad: &QuadratureRule,
    rng: &mut RandomStream,
    m: usize,
) -> Result<GradientReport> {
    let bayes = grad_bayes_test(post, spec, rng, m)?;
    Ok(GradientReport {
        d_gibbs_train: grad_empirical_gibbs(post)?,
        d_gibbs_test: grad_gibbs_test(post, spec, quad)?,
        d_bayes_test: bayes.value,
        method: GradientMethod::MonteCarlo,
        std_err: GradientStdErr {
            d_gibbs_train: 0.0,
            d_gibbs_test: 0.0,
            d_bayes_test: bayes.std_err,
        },
        mc_samples: m,
    })
}

/// Verdict for an arbitrary posterior.
pub fn classify_posterior(
    post: &TemperedPosterior<'_>,
    spec: &DataGenSpec,
    rng: &mut RandomStream,
    m: usize,
) -> Result<CpeVerdict> {
    Ok(CpeVerdict::from_estimate(grad_bayes_test(post, spec, rng, m)?))
}

/// Verdict for the untempered posterior of `model` on `data`.
pub fn classify_cpe(
    model: &ModelSpec,
    spec: &DataGenSpec,
    data: &Dataset,
    rng: &mut RandomStream,
    m: usize,
) -> Result<CpeVerdict> {
    let post = likelihood_tempered(model, data, 1.0)?;
    classify_posterior(&post, spec, rng, m)
}

/// Least-squares coefficients, when the Gram matrix is invertible.
pub fn maximum_likelihood(model: &ModelSpec, data: &Dataset) -> Result<DVector<f64>> {
    let design = model.design(data)?;
    let gram = design.tr_mul(&design);
    let rhs = design.tr_mul(&data.targets());
    let chol = nalgebra::Cholesky::new(gram)
        .ok_or_else(|| Error::NotPositiveDefinite("design Gram matrix (fewer samples than features?)".into()))?;
    Ok(chol.solve(&rhs))
}

/// Minimum-norm least-squares coefficients; defined for any `n`, including `n < K`.
pub fn least_squares(model: &ModelSpec, data: &Dataset) -> Result<DVector<f64>> {
    let design = model.design(data)?;
    let svd = design.svd(true, true);
    svd.solve(&data.targets(), 1e-12)
        .map_err(|e| Error::InvalidInput(format!("least squares failed: {e}")))
}

/// `min_θ −ln p(D|θ)`, attained by any least-squares solution; `n ≥ K` is not required.
pub fn min_train_nll(model: &ModelSpec, data: &Dataset) -> Result<f64> {
    let theta = least_squares(model, data)?;
    Ok(model.train_nll(data)?.eval(&theta))
}
