//! Likelihood-, prior-, full- and augmentation-tempered posteriors, all in closed form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{design_matrix, features_unchecked, Dataset, TransformSet};
use crate::error::{check_dim, invalid, Result};
use crate::gaussian::{conjugate_update, linear_gaussian_posterior, Gaussian, QuadraticForm};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The assumed likelihood `y | x, θ ~ N(θᵀ φ_K(x), noise_var_model)` and its prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub basis_order_model: usize,
    pub noise_var_model: f64,
    pub prior: Gaussian,
}

impl ModelSpec {
    pub fn new(basis_order_model: usize, noise_var_model: f64, prior: Gaussian) -> Result<Self> {
        let m = Self {
            basis_order_model,
            noise_var_model,
            prior,
        };
        m.validate()?;
        Ok(m)
    }

    /// Zero-mean isotropic prior with variance `prior_var`.
    pub fn isotropic(basis_order_model: usize, noise_var_model: f64, prior_var: f64) -> Result<Self> {
        Self::new(
            basis_order_model,
            noise_var_model,
            Gaussian::zero_mean_isotropic(basis_order_model, prior_var)?,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.basis_order_model == 0 {
            return invalid("model basis order must be positive");
        }
        if !(self.noise_var_model > 0.0) || !self.noise_var_model.is_finite() {
            return invalid(format!(
                "noise_var_model must be positive, got {}",
                self.noise_var_model
            ));
        }
        check_dim(self.basis_order_model, self.prior.dim())
    }

    pub fn features(&self, x: f64) -> DVector<f64> {
        features_unchecked(x, self.basis_order_model)
    }

    pub fn design(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        design_matrix(data.xs(), self.basis_order_model)
    }

    /// `−ln p(D|θ)` as a quadratic in `θ`.
    pub fn train_nll(&self, data: &Dataset) -> Result<QuadraticForm> {
        let design = self.design(data)?;
        Ok(self.nll_from_design(&design, &data.targets(), data.len()))
    }

    /// `n · L̂_DA(D, θ)`, the augmentation-averaged negative log-likelihood.
    pub fn da_train_nll(&self, data: &Dataset, transforms: &TransformSet) -> Result<QuadraticForm> {
        transforms.validate()?;
        let (design, targets) = self.augmented_design(data, transforms)?;
        Ok(self.nll_from_design(&design, &targets, data.len()))
    }

    /// `ln p(θ)` as a quadratic in `θ`.
    pub fn prior_log_density(&self) -> QuadraticForm {
        let p = self.prior.precision();
        let pm = &p * self.prior.mean();
        let d = self.basis_order_model as f64;
        let c = -0.5 * (d * LN_2PI + self.prior.log_det_cov() + self.prior.mean().dot(&pm));
        QuadraticForm::new(p * -0.5, pm, c).expect("prior precision is square")
    }

    /// Rows `√w_t · φ(t(x_i))` with targets `√w_t · y_i`, ordered by sample then transform.
    fn augmented_design(&self, data: &Dataset, transforms: &TransformSet) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let k = self.basis_order_model;
        let rows = data.len() * transforms.len();
        let mut design = DMatrix::zeros(rows, k);
        let mut targets = DVector::zeros(rows);
        let mut r = 0;
        for (&x, &y) in data.xs().iter().zip(data.ys()) {
            for (t, w) in transforms.iter() {
                let s = w.sqrt();
                let phi = self.features(t.apply(x));
                for j in 0..k {
                    design[(r, j)] = s * phi[j];
                }
                targets[r] = s * y;
                r += 1;
            }
        }
        Ok((design, targets))
    }

    fn nll_from_design(&self, design: &DMatrix<f64>, targets: &DVector<f64>, n: usize) -> QuadraticForm {
        let s2 = self.noise_var_model;
        let a = design.tr_mul(design) / (2.0 * s2);
        let b = design.tr_mul(targets) / -s2;
        let c = targets.norm_squared() / (2.0 * s2) + 0.5 * n as f64 * (LN_2PI + s2.ln());
        QuadraticForm::new(a, b, c).expect("design products are square")
    }
}

/// Which factor of the joint density carries the temperature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemperingKind {
    Likelihood,
    Prior,
    Full,
    DataAugmented,
}

/// A tempered posterior together with the objects it was built from.
#[derive(Clone, Debug)]
pub struct TemperedPosterior<'a> {
    pub kind: TemperingKind,
    pub temperature: f64,
    pub gaussian: Gaussian,
    pub model: &'a ModelSpec,
    pub data: &'a Dataset,
    train_nll: QuadraticForm,
}

impl<'a> TemperedPosterior<'a> {
    /// The negative log-likelihood in the exponent: `−ln p(D|θ)`, or `n · L̂_DA` for augmented posteriors.
    pub fn train_nll(&self) -> &QuadraticForm {
        &self.train_nll
    }

    /// A posterior of the same provenance whose Gaussian has been replaced.
    pub fn with_gaussian(&self, gaussian: Gaussian) -> Result<Self> {
        check_dim(self.gaussian.dim(), gaussian.dim())?;
        Ok(Self {
            gaussian,
            ..self.clone()
        })
    }
}

fn check_temperature(t: f64, allow_zero: bool) -> Result<()> {
    let ok = t.is_finite() && if allow_zero { t >= 0.0 } else { t > 0.0 };
    if ok {
        Ok(())
    } else {
        invalid(format!(
            "temperature must be {}, got {t}",
            if allow_zero { "nonnegative" } else { "positive" }
        ))
    }
}

/// `p^λ(θ|D) ∝ p(D|θ)^λ p(θ)`.
pub fn likelihood_tempered<'a>(model: &'a ModelSpec, data: &'a Dataset, lambda: f64) -> Result<TemperedPosterior<'a>> {
    check_temperature(lambda, true)?;
    let design = model.design(data)?;
    let targets = data.targets();
    let gaussian = linear_gaussian_posterior(&model.prior, &design, &targets, model.noise_var_model, lambda)?;
    Ok(TemperedPosterior {
        kind: TemperingKind::Likelihood,
        temperature: lambda,
        gaussian,
        model,
        data,
        train_nll: model.nll_from_design(&design, &targets, data.len()),
    })
}

/// `p(D|θ) p(θ)^γ`; the tempered prior keeps its mean and has covariance divided by `γ`.
pub fn prior_tempered<'a>(model: &'a ModelSpec, data: &'a Dataset, gamma: f64) -> Result<TemperedPosterior<'a>> {
    check_temperature(gamma, false)?;
    let prior = model.prior.with_covariance_scaled(gamma)?;
    let design = model.design(data)?;
    let targets = data.targets();
    let gaussian = linear_gaussian_posterior(&prior, &design, &targets, model.noise_var_model, 1.0)?;
    Ok(TemperedPosterior {
        kind: TemperingKind::Prior,
        temperature: gamma,
        gaussian,
        model,
        data,
        train_nll: model.nll_from_design(&design, &targets, data.len()),
    })
}

/// `(p(D|θ) p(θ))^τ`.
pub fn full_tempered<'a>(model: &'a ModelSpec, data: &'a Dataset, tau: f64) -> Result<TemperedPosterior<'a>> {
    check_temperature(tau, false)?;
    let prior = model.prior.with_covariance_scaled(tau)?;
    let design = model.design(data)?;
    let targets = data.targets();
    let gaussian = linear_gaussian_posterior(&prior, &design, &targets, model.noise_var_model, tau)?;
    Ok(TemperedPosterior {
        kind: TemperingKind::Full,
        temperature: tau,
        gaussian,
        model,
        data,
        train_nll: model.nll_from_design(&design, &targets, data.len()),
    })
}

/// `p_DA^λ(θ|D) ∝ exp(−λ n L̂_DA(D, θ)) p(θ)`, with the transform expectation enumerated exactly.
pub fn da_tempered<'a>(
    model: &'a ModelSpec,
    data: &'a Dataset,
    transforms: &TransformSet,
    lambda: f64,
) -> Result<TemperedPosterior<'a>> {
    check_temperature(lambda, true)?;
    transforms.validate()?;
    let (design, targets) = model.augmented_design(data, transforms)?;
    let gaussian = linear_gaussian_posterior(&model.prior, &design, &targets, model.noise_var_model, lambda)?;
    Ok(TemperedPosterior {
        kind: TemperingKind::DataAugmented,
        temperature: lambda,
        gaussian,
        model,
        data,
        train_nll: model.nll_from_design(&design, &targets, data.len()),
    })
}

/// `p̃(θ) ∝ ρ(θ) · N(y; θᵀφ(x), σ_m²)`, a rank-one conjugate update with an untempered likelihood.
pub fn updated_posterior(post: &TemperedPosterior<'_>, y: f64, x: f64) -> Result<Gaussian> {
    let phi = crate::data::fourier_features(x, post.model.basis_order_model)?;
    rank_one_update(&post.gaussian, &phi, y, post.model.noise_var_model)
}

pub(crate) fn rank_one_update(g: &Gaussian, phi: &DVector<f64>, y: f64, noise_var: f64) -> Result<Gaussian> {
    let h = phi * phi.transpose() / noise_var;
    conjugate_update(g, &h, &(phi * (y / noise_var)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_dataset, DataGenSpec, Transform};
    use crate::numerics::RandomStream;

    fn fixture(seed: u64) -> (ModelSpec, Dataset) {
        let spec = DataGenSpec::all_ones(10, 1.0).unwrap();
        let data = sample_dataset(&spec, 5, &mut RandomStream::new(seed, 0)).unwrap();
        (ModelSpec::isotropic(10, 1.0, 2.0).unwrap(), data)
    }

    /// Mean and variance of `exp(log_w)` on a uniform 1-D grid.
    fn grid_moments_1d(lo: f64, hi: f64, n: usize, log_w: impl Fn(f64) -> f64) -> (f64, f64) {
        let h = (hi - lo) / n as f64;
        let pts: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
        let lw: Vec<f64> = pts.iter().map(|&t| log_w(t)).collect();
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut m1) = (0.0, 0.0);
        for (t, l) in pts.iter().zip(&lw) {
            let w = (l - max).exp();
            z += w;
            m1 += w * t;
        }
        let mean = m1 / z;
        let var = pts
            .iter()
            .zip(&lw)
            .map(|(t, l)| (l - max).exp() * (t - mean).powi(2))
            .sum::<f64>()
            / z;
        (mean, var)
    }

    #[test]
    fn zero_temperature_is_the_prior() {
        let (model, data) = fixture(1);
        let p = likelihood_tempered(&model, &data, 0.0).unwrap();
        assert_eq!(&p.gaussian, &model.prior);
        let p = da_tempered(&model, &data, &TransformSet::mirror(), 0.0).unwrap();
        assert_eq!(&p.gaussian, &model.prior);
    }

    #[test]
    fn large_temperature_collapses_onto_the_mle() {
        let model = ModelSpec::isotropic(1, 1.0, 1.0).unwrap();
        // a single input at x = 0 gives φ = 1/√(2π); pick y so the MLE is 2
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let data = Dataset::new(vec![0.0], vec![2.0 * phi0]).unwrap();
        let p = likelihood_tempered(&model, &data, 1e6).unwrap();
        assert!((p.gaussian.mean()[0] - 2.0).abs() < 1e-4);
        assert!(p.gaussian.cov()[(0, 0)] <= 2e-6 / (phi0 * phi0));

        let unit = linear_gaussian_posterior(
            &Gaussian::zero_mean_isotropic(1, 1.0).unwrap(),
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 2.0),
            1.0,
            1e6,
        )
        .unwrap();
        assert!((unit.mean()[0] - 2.0).abs() < 1e-5);
        assert!(unit.cov()[(0, 0)] <= 2e-6);
    }

    #[test]
    fn likelihood_tempering_matches_grid_in_one_dimension() {
        let model = ModelSpec::isotropic(1, 1.0, 2.0).unwrap();
        let data = Dataset::new(vec![0.3, -0.6, 0.9], vec![1.2, -0.4, 2.5]).unwrap();
        let nll = model.train_nll(&data).unwrap();
        for lambda in [0.5, 1.0, 2.0] {
            let p = likelihood_tempered(&model, &data, lambda).unwrap();
            let (m, v) = grid_moments_1d(-15.0, 15.0, 600_000, |t| {
                let th = DVector::from_element(1, t);
                -lambda * nll.eval(&th) - t * t / 4.0
            });
            assert!((p.gaussian.mean()[0] - m).abs() < 1e-8, "{lambda}");
            assert!((p.gaussian.cov()[(0, 0)] - v).abs() < 1e-6, "{lambda}");
        }
    }

    #[test]
    fn likelihood_tempering_matches_grid_in_two_dimensions() {
        let model = ModelSpec::isotropic(2, 1.0, 2.0).unwrap();
        let data = Dataset::new(vec![0.3, -0.6, 0.9, 0.1, -0.2], vec![1.2, -0.4, 2.5, 0.3, 0.0]).unwrap();
        let nll = model.train_nll(&data).unwrap();
        for lambda in [0.5, 1.0, 2.0] {
            let p = likelihood_tempered(&model, &data, lambda).unwrap();
            let mu = p.gaussian.mean().clone();
            let sd0 = p.gaussian.cov()[(0, 0)].sqrt();
            let sd1 = p.gaussian.cov()[(1, 1)].sqrt();
            let n = 1200;
            let half = 12.0;
            let (h0, h1) = (2.0 * half * sd0 / n as f64, 2.0 * half * sd1 / n as f64);
            let log_w = |t0: f64, t1: f64| {
                let th = DVector::from_vec(vec![t0, t1]);
                -lambda * nll.eval(&th) - (t0 * t0 + t1 * t1) / 4.0
            };
            let shift = log_w(mu[0], mu[1]);
            let mut z = 0.0;
            let mut m = [0.0; 2];
            let mut s = [0.0; 3];
            for i in 0..=n {
                let t0 = mu[0] - half * sd0 + i as f64 * h0;
                for j in 0..=n {
                    let t1 = mu[1] - half * sd1 + j as f64 * h1;
                    let w = (log_w(t0, t1) - shift).exp();
                    z += w;
                    m[0] += w * t0;
                    m[1] += w * t1;
                    s[0] += w * t0 * t0;
                    s[1] += w * t0 * t1;
                    s[2] += w * t1 * t1;
                }
            }
            let (m0, m1) = (m[0] / z, m[1] / z);
            let cov = [s[0] / z - m0 * m0, s[1] / z - m0 * m1, s[2] / z - m1 * m1];
            assert!((mu[0] - m0).abs() < 1e-8 && (mu[1] - m1).abs() < 1e-8, "{lambda}");
            let c = p.gaussian.cov();
            assert!((c[(0, 0)] - cov[0]).abs() < 1e-6);
            assert!((c[(0, 1)] - cov[1]).abs() < 1e-6);
            assert!((c[(1, 1)] - cov[2]).abs() < 1e-6);
        }
    }

    #[test]
    fn prior_tempering_cases() {
        let (model, data) = fixture(2);
        let a = prior_tempered(&model, &data, 1.0).unwrap();
        let b = likelihood_tempered(&model, &data, 1.0).unwrap();
        assert!((a.gaussian.mean() - b.gaussian.mean()).amax() < 1e-14);
        assert!((a.gaussian.cov() - b.gaussian.cov()).amax() < 1e-14);

        let p = Gaussian::zero_mean_isotropic(1, 2.0)
            .unwrap()
            .with_covariance_scaled(4.0)
            .unwrap();
        assert_eq!(p.cov()[(0, 0)], 0.5);

        let far = prior_tempered(&model, &data, 1e6).unwrap();
        assert!(far.gaussian.mean().amax() <= 1e-3);
        assert!(prior_tempered(&model, &data, 0.0).is_err());
        assert!(full_tempered(&model, &data, -1.0).is_err());
    }

    #[test]
    fn prior_and_full_tempering_match_grid() {
        let model = ModelSpec::isotropic(1, 1.0, 2.0).unwrap();
        let data = Dataset::new(vec![0.3, -0.6], vec![1.2, -0.4]).unwrap();
        let nll = model.train_nll(&data).unwrap();
        let p = prior_tempered(&model, &data, 2.0).unwrap();
        let (m, v) = grid_moments_1d(-15.0, 15.0, 600_000, |t| {
            -nll.eval(&DVector::from_element(1, t)) - 2.0 * t * t / 4.0
        });
        assert!((p.gaussian.mean()[0] - m).abs() < 1e-8);
        assert!((p.gaussian.cov()[(0, 0)] - v).abs() < 1e-6);

        let f = full_tempered(&model, &data, 2.0).unwrap();
        let (m, v) = grid_moments_1d(-15.0, 15.0, 600_000, |t| {
            2.0 * (-nll.eval(&DVector::from_element(1, t)) - t * t / 4.0)
        });
        assert!((f.gaussian.mean()[0] - m).abs() < 1e-8);
        assert!((f.gaussian.cov()[(0, 0)] - v).abs() < 1e-6);
    }

    #[test]
    fn full_tempering_is_likelihood_tempering_under_a_sharper_prior() {
        let (model, data) = fixture(3);
        for tau in [0.5, 1.0, 2.0, 3.0] {
            let f = full_tempered(&model, &data, tau).unwrap();
            let sharp = ModelSpec::new(10, 1.0, model.prior.with_covariance_scaled(tau).unwrap()).unwrap();
            let l = likelihood_tempered(&sharp, &data, tau).unwrap();
            assert!((f.gaussian.mean() - l.gaussian.mean()).amax() < 1e-12);
            assert!((f.gaussian.cov() - l.gaussian.cov()).amax() < 1e-12);
        }
    }

    #[test]
    fn identity_augmentation_is_likelihood_tempering() {
        let (model, data) = fixture(4);
        for lambda in [0.0, 0.5, 1.0, 3.0] {
            let d = da_tempered(&model, &data, &TransformSet::identity(), lambda).unwrap();
            let l = likelihood_tempered(&model, &data, lambda).unwrap();
            assert_eq!(d.gaussian, l.gaussian);
            assert_eq!(d.train_nll(), l.train_nll());
        }
    }

    #[test]
    fn mirror_augmentation_is_a_half_weighted_augmented_dataset() {
        let (model, data) = fixture(5);
        let mut xs = data.xs().to_vec();
        let mut ys = data.ys().to_vec();
        xs.extend(data.xs().iter().map(|x| -x));
        ys.extend_from_slice(data.ys());
        let doubled = Dataset::new(xs, ys).unwrap();
        // weight 1/2 on every row is the same as doubling the noise variance
        let half = ModelSpec::new(10, 2.0, model.prior.clone()).unwrap();
        for lambda in [0.5, 1.0, 2.0] {
            let d = da_tempered(&model, &data, &TransformSet::mirror(), lambda).unwrap();
            let a = likelihood_tempered(&half, &doubled, lambda).unwrap();
            assert!((d.gaussian.mean() - a.gaussian.mean()).amax() < 1e-12);
            assert!((d.gaussian.cov() - a.gaussian.cov()).amax() < 1e-12);
        }
    }

    #[test]
    fn updated_posterior_cases() {
        let g = Gaussian::isotropic(DVector::from_element(1, 1.0), 0.5).unwrap();
        let up = rank_one_update(&g, &DVector::from_element(1, 1.0), 2.0, 1.0).unwrap();
        assert!((up.mean()[0] - 4.0 / 3.0).abs() < 1e-14);
        assert!((up.cov()[(0, 0)] - 1.0 / 3.0).abs() < 1e-14);

        let (m, v) = grid_moments_1d(-15.0, 15.0, 600_000, |t| {
            -(t - 1.0) * (t - 1.0) - 0.5 * (2.0 - t) * (2.0 - t)
        });
        assert!((up.mean()[0] - m).abs() < 1e-8 && (up.cov()[(0, 0)] - v).abs() < 1e-6);

        let (big, data) = fixture(6);
        let p = likelihood_tempered(&big, &data, 1.0).unwrap();
        let phi = big.features(0.3);
        let faint = rank_one_update(&p.gaussian, &phi, 1.0, 1e12).unwrap();
        assert!((faint.mean() - p.gaussian.mean()).amax() < 1e-8);
        assert!((faint.cov() - p.gaussian.cov()).amax() < 1e-8);
    }

    #[test]
    fn updates_commute() {
        let (model, data) = fixture(7);
        let p = likelihood_tempered(&model, &data, 1.0).unwrap();
        let ab = updated_posterior(
            &p.with_gaussian(updated_posterior(&p, 0.4, 0.2).unwrap()).unwrap(),
            -1.0,
            -0.7,
        )
        .unwrap();
        let ba = updated_posterior(
            &p.with_gaussian(updated_posterior(&p, -1.0, -0.7).unwrap()).unwrap(),
            0.4,
            0.2,
        )
        .unwrap();
        assert!((ab.mean() - ba.mean()).amax() < 1e-12);
        assert!((ab.cov() - ba.cov()).amax() < 1e-12);
    }

    #[test]
    fn likelihood_tempering_contracts() {
        for seed in 0..20 {
            let (model, data) = fixture(100 + seed);
            let traces: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0]
                .iter()
                .map(|&l| likelihood_tempered(&model, &data, l).unwrap().gaussian.cov().trace())
                .collect();
            assert!(traces.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn nll_forms_evaluate_the_likelihood() {
        let (model, data) = fixture(8);
        let theta = DVector::from_fn(10, |i, _| 0.1 * i as f64 - 0.3);
        let s2 = model.noise_var_model;
        let naive: f64 = data
            .xs()
            .iter()
            .zip(data.ys())
            .map(|(&x, &y)| {
                let r = y - model.features(x).dot(&theta);
                0.5 * (2.0 * std::f64::consts::PI * s2).ln() + r * r / (2.0 * s2)
            })
            .sum();
        assert!((model.train_nll(&data).unwrap().eval(&theta) - naive).abs() < 1e-12);

        let set = TransformSet::new(vec![Transform::Identity, Transform::Scale(0.5)], vec![0.25, 0.75]).unwrap();
        let da_naive: f64 = data
            .xs()
            .iter()
            .zip(data.ys())
            .map(|(&x, &y)| {
                set.iter()
                    .map(|(t, w)| {
                        let r = y - model.features(t.apply(x)).dot(&theta);
                        w * (0.5 * (2.0 * std::f64::consts::PI * s2).ln() + r * r / (2.0 * s2))
                    })
                    .sum::<f64>()
            })
            .sum();
        assert!((model.da_train_nll(&data, &set).unwrap().eval(&theta) - da_naive).abs() < 1e-12);

        let lp = model.prior_log_density().eval(&theta);
        assert!((lp - model.prior.log_density(&theta).unwrap()).abs() < 1e-12);
    }
}
