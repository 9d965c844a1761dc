//! Dense multivariate Gaussians and quadratic forms over them.
//!
//! Every prior, tempered posterior and updated posterior in this crate is a
//! [`Gaussian`]. Log-likelihoods and expected losses are quadratic in the
//! coefficient vector, so their moments under a Gaussian are available in
//! closed form through [`quadratic_form_moments`] and friends.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::numerics::RandomStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multivariate normal with a cached lower Cholesky factor of its covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct GaussianRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<GaussianRepr> for Gaussian {
    type Error = Error;

    fn try_from(r: GaussianRepr) -> Result<Self> {
        let d = r.mean.len();
        if r.cov.len() != d || r.cov.iter().any(|row| row.len() != d) {
            return invalid(format!("covariance must be {d}x{d}"));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| r.cov[i][j]);
        Gaussian::new(DVector::from_vec(r.mean), cov)
    }
}

impl From<Gaussian> for GaussianRepr {
    fn from(g: Gaussian) -> Self {
        let d = g.dim();
        GaussianRepr {
            mean: g.mean.iter().copied().collect(),
            cov: (0..d).map(|i| (0..d).map(|j| g.cov[(i, j)]).collect()).collect(),
        }
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky with a single `1e-10 · scale · I` retry.
fn factor(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    let scale = (0..n)
        .map(|i| m[(i, i)].abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let jittered = m + DMatrix::identity(n, n) * (1e-10 * scale);
    Cholesky::new(jittered).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

impl Gaussian {
    /// Symmetrizes `cov` and factors it; fails if it is not SPD.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return invalid("Gaussian dimension must be positive");
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return invalid("Gaussian parameters must be finite");
        }
        let cov = symmetrize(&cov);
        let chol = factor(&cov, "covariance")?.l();
        Ok(Self { mean, cov, chol })
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return invalid(format!("variance must be positive, got {variance}"));
        }
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance)
    }

    pub fn zero_mean_isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::isotropic(DVector::zeros(dim), variance)
    }

    /// Gaussian with precision `precision` and mean `precision⁻¹ · linear`.
    pub fn from_precision(precision: &DMatrix<f64>, linear: &DVector<f64>) -> Result<Self> {
        check_dim(precision.nrows(), linear.len())?;
        let p = symmetrize(precision);
        let chol = factor(&p, "precision")?;
        let mean = chol.solve(linear);
        let cov = chol.inverse();
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower-triangular `L` with `L Lᵀ = cov`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det_cov(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `cov⁻¹`, recomputed from the factor.
    pub fn precision(&self) -> DMatrix<f64> {
        let d = self.dim();
        let linv = self
            .chol
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .expect("factor has a positive diagonal");
        linv.tr_mul(&linv)
    }

    fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol
            .solve_lower_triangular(v)
            .expect("factor has a positive diagonal")
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let z = self.whiten(&(x - &self.mean));
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + self.log_det_cov() + z.norm_squared()))
    }

    pub fn sample_one(&self, rng: &mut RandomStream) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.standard_normal());
        &self.mean + &self.chol * z
    }

    /// `n × dim` matrix whose rows are independent draws.
    pub fn sample(&self, rng: &mut RandomStream, n: usize) -> Result<DMatrix<f64>> {
        if n == 0 {
            return invalid("sample count must be at least 1");
        }
        let d = self.dim();
        let z = DMatrix::from_fn(d, n, |_, _| rng.standard_normal());
        let mut draws = &self.chol * z;
        for mut col in draws.column_iter_mut() {
            col += &self.mean;
        }
        Ok(draws.transpose())
    }

    /// Same mean, covariance divided by `factor` (the Gaussian raised to a power, renormalized).
    pub fn with_covariance_scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return invalid(format!("covariance scale must be positive, got {factor}"));
        }
        Self::new(self.mean.clone(), &self.cov / factor)
    }
}

/// `KL(q ‖ p)` between two Gaussians.
pub fn kl_divergence(q: &Gaussian, p: &Gaussian) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    let m = p
        .chol
        .solve_lower_triangular(&q.chol)
        .expect("factor has a positive diagonal");
    let delta = p.whiten(&(&p.mean - &q.mean));
    let d = q.dim() as f64;
    Ok(0.5 * (m.norm_squared() + delta.norm_squared() - d + p.log_det_cov() - q.log_det_cov()))
}

/// Posterior with precision `prior⁻¹ + precision_increment` and linear term
/// `prior⁻¹ · prior_mean + linear_increment`.
pub fn conjugate_update(
    prior: &Gaussian,
    precision_increment: &DMatrix<f64>,
    linear_increment: &DVector<f64>,
) -> Result<Gaussian> {
    check_dim(prior.dim(), precision_increment.nrows())?;
    check_dim(prior.dim(), linear_increment.len())?;
    let p0 = prior.precision();
    let precision = &p0 + precision_increment;
    let linear = &p0 * &prior.mean + linear_increment;
    Gaussian::from_precision(&precision, &linear)
}

/// Exact posterior of `θ` under `prior` and the likelihood `N(targets; design θ, noise_var I)^lambda`.
pub fn linear_gaussian_posterior(
    prior: &Gaussian,
    design: &DMatrix<f64>,
    targets: &DVector<f64>,
    noise_var: f64,
    lambda: f64,
) -> Result<Gaussian> {
    if !(noise_var > 0.0) {
        return invalid(format!("noise variance must be positive, got {noise_var}"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return invalid(format!("temperature must be finite and nonnegative, got {lambda}"));
    }
    check_dim(prior.dim(), design.ncols())?;
    check_dim(design.nrows(), targets.len())?;
    if lambda == 0.0 {
        return Ok(prior.clone());
    }
    let s = lambda / noise_var;
    let gram = design.tr_mul(design);
    let xty = design.tr_mul(targets);
    conjugate_update(prior, &(gram * s), &(xty * s))
}

/// `q(θ) = θᵀAθ + bᵀθ + c` with symmetric `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

/// Mean and variance of a scalar functional.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

impl QuadraticForm {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        check_dim(a.nrows(), a.ncols())?;
        check_dim(a.nrows(), b.len())?;
        Ok(Self {
            a: symmetrize(&a),
            b,
            c,
        })
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self {
            a: DMatrix::zeros(dim, dim),
            b: DVector::zeros(dim),
            c,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn eval(&self, theta: &DVector<f64>) -> f64 {
        theta.dot(&(&self.a * theta)) + self.b.dot(theta) + self.c
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            a: &self.a * s,
            b: &self.b * s,
            c: self.c * s,
        }
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self {
            a: &self.a + &other.a,
            b: &self.b + &other.b,
            c: self.c + other.c,
        })
    }

    /// Gradient `2Aμ + b` at `mu`.
    fn gradient_at(&self, mu: &DVector<f64>) -> DVector<f64> {
        &self.a * mu * 2.0 + &self.b
    }
}

pub fn quadratic_form_moments(g: &Gaussian, q: &QuadraticForm) -> Result<Moments> {
    check_dim(g.dim(), q.dim())?;
    let mu = &g.mean;
    let sigma = &g.cov;
    let a_sigma = &q.a * sigma;
    let mean = a_sigma.trace() + mu.dot(&(&q.a * mu)) + q.b.dot(mu) + q.c;
    let grad = q.gradient_at(mu);
    let variance = 2.0 * (&a_sigma * &a_sigma).trace() + grad.dot(&(sigma * &grad));
    Ok(Moments {
        mean,
        variance: variance.max(0.0),
    })
}

/// `Cov(q1(θ), q2(θ))` for `θ ~ g`.
pub fn quadratic_form_covariance(g: &Gaussian, q1: &QuadraticForm, q2: &QuadraticForm) -> Result<f64> {
    check_dim(g.dim(), q1.dim())?;
    check_dim(g.dim(), q2.dim())?;
    if q1 == q2 {
        return Ok(quadratic_form_moments(g, q1)?.variance);
    }
    let sigma = &g.cov;
    let trace = (&q1.a * sigma * &q2.a * sigma).trace();
    let g1 = q1.gradient_at(&g.mean);
    let g2 = q2.gradient_at(&g.mean);
    Ok(2.0 * trace + g1.dot(&(sigma * &g2)))
}

/// Joint third cumulant `κ(q1, q2, q3)` of three quadratic forms under `g`.
pub fn quadratic_form_third_cumulant(
    g: &Gaussian,
    q1: &QuadraticForm,
    q2: &QuadraticForm,
    q3: &QuadraticForm,
) -> Result<f64> {
    for q in [q1, q2, q3] {
        check_dim(g.dim(), q.dim())?;
    }
    let s = &g.cov;
    let trace = (&q1.a * s * &q2.a * s * &q3.a * s).trace();
    let g1 = q1.gradient_at(&g.mean);
    let g2 = q2.gradient_at(&g.mean);
    let g3 = q3.gradient_at(&g.mean);
    let cross = |u: &DVector<f64>, a: &DMatrix<f64>, v: &DVector<f64>| u.dot(&(s * a * s * v));
    Ok(8.0 * trace + 2.0 * (cross(&g1, &q2.a, &g3) + cross(&g1, &q3.a, &g2) + cross(&g2, &q1.a, &g3)))
}
