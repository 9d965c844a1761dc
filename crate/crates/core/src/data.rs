//! The data-generating distribution: Fourier features, datasets and input transformations.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::RandomStream;

const INV_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Law of the scalar input `x`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputLaw {
    #[default]
    UniformMinus1To1,
}

/// The true distribution: `x ~ U(-1, 1)`, `y | x ~ N(coeffsᵀ φ_K(x), noise_var_true)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataGenSpec {
    pub basis_order_true: usize,
    pub true_coeffs: Vec<f64>,
    pub noise_var_true: f64,
    #[serde(default)]
    pub input_law: InputLaw,
}

impl DataGenSpec {
    pub fn new(true_coeffs: Vec<f64>, noise_var_true: f64) -> Result<Self> {
        let spec = Self {
            basis_order_true: true_coeffs.len(),
            true_coeffs,
            noise_var_true,
            input_law: InputLaw::UniformMinus1To1,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// All-ones coefficients on a `k`-term basis.
    pub fn all_ones(k: usize, noise_var: f64) -> Result<Self> {
        Self::new(vec![1.0; k], noise_var)
    }

    pub fn validate(&self) -> Result<()> {
        if self.basis_order_true == 0 {
            return invalid("true basis order must be positive");
        }
        if self.true_coeffs.len() != self.basis_order_true {
            return invalid(format!(
                "true_coeffs has length {} but basis_order_true is {}",
                self.true_coeffs.len(),
                self.basis_order_true
            ));
        }
        if !(self.noise_var_true > 0.0) || !self.noise_var_true.is_finite() {
            return invalid(format!("noise_var_true must be positive, got {}", self.noise_var_true));
        }
        if self.true_coeffs.iter().any(|c| !c.is_finite()) {
            return invalid("true_coeffs must be finite");
        }
        Ok(())
    }

    /// Conditional mean `coeffsᵀ φ(x)` without range checks.
    pub(crate) fn mean_at(&self, x: f64) -> f64 {
        self.true_coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * basis_component(x, i + 1))
            .sum()
    }
}

fn check_input(x: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&x) {
        Ok(())
    } else {
        invalid(format!("input {x} lies outside [-1, 1]"))
    }
}

/// Component `k` (1-based) of the Fourier basis.
#[inline]
fn basis_component(x: f64, k: usize) -> f64 {
    if k == 1 {
        INV_SQRT_2PI
    } else if k % 2 == 1 {
        (k as f64 * x).sin() * INV_SQRT_PI
    } else {
        (k as f64 * x).cos() * INV_SQRT_PI
    }
}

pub(crate) fn features_unchecked(x: f64, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |i, _| basis_component(x, i + 1))
}

/// `[1/√(2π), cos(2x)/√π, sin(3x)/√π, cos(4x)/√π, ...]` truncated to `k` terms.
pub fn fourier_features(x: f64, k: usize) -> Result<DVector<f64>> {
    if k == 0 {
        return invalid("basis order must be positive");
    }
    check_input(x)?;
    Ok(features_unchecked(x, k))
}

/// Row `i` holds `fourier_features(xs[i], k)`.
pub fn design_matrix(xs: &[f64], k: usize) -> Result<DMatrix<f64>> {
    if k == 0 {
        return invalid("basis order must be positive");
    }
    for &x in xs {
        check_input(x)?;
    }
    Ok(DMatrix::from_fn(xs.len(), k, |i, j| basis_component(xs[i], j + 1)))
}

/// Conditional mean and variance of `y` given `x`.
pub fn true_conditional(spec: &DataGenSpec, x: f64) -> Result<(f64, f64)> {
    check_input(x)?;
    Ok((spec.mean_at(x), spec.noise_var_true))
}

/// Truth supported on the constant and cosine terms, so `x ↦ -x` leaves `ν(y|x)` unchanged.
pub fn mirror_invariant_spec(k: usize, noise_var: f64) -> Result<DataGenSpec> {
    let coeffs = (1..=k).map(|j| if j == 1 || j % 2 == 0 { 1.0 } else { 0.0 }).collect();
    DataGenSpec::new(coeffs, noise_var)
}

/// Truth supported on the sine terms only, so `x ↦ -x` flips the sign of the conditional mean.
pub fn mirror_antisymmetric_spec(k: usize, noise_var: f64) -> Result<DataGenSpec> {
    let coeffs = (1..=k).map(|j| if j > 1 && j % 2 == 1 { 1.0 } else { 0.0 }).collect();
    DataGenSpec::new(coeffs, noise_var)
}

/// Paired scalar inputs and targets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    x: f64,
    y: f64,
}

impl Dataset {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return invalid(format!("{} inputs but {} targets", xs.len(), ys.len()));
        }
        for &x in &xs {
            check_input(x)?;
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return invalid("targets must be finite");
        }
        Ok(Self { xs, ys })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn targets(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.ys)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "y"])?;
        for (x, y) in self.xs.iter().zip(&self.ys) {
            w.write_record([format!("{x:.16e}"), format!("{y:.16e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
            return invalid("dataset CSV must have header `x,y`");
        }
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for row in r.deserialize::<Row>() {
            let row = row?;
            xs.push(row.x);
            ys.push(row.y);
        }
        Self::new(xs, ys)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Draws `n` i.i.d. pairs from `spec`; for each sample the input is drawn before the noise.
pub fn sample_dataset(spec: &DataGenSpec, n: usize, rng: &mut RandomStream) -> Result<Dataset> {
    spec.validate()?;
    let sd = spec.noise_var_true.sqrt();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sample_input(spec, rng);
        xs.push(x);
        ys.push(spec.mean_at(x) + sd * rng.standard_normal());
    }
    Ok(Dataset { xs, ys })
}

pub(crate) fn sample_input(spec: &DataGenSpec, rng: &mut RandomStream) -> f64 {
    match spec.input_law {
        InputLaw::UniformMinus1To1 => rng.uniform(-1.0, 1.0),
    }
}

/// A label-preserving input map on `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Mirror,
    /// `x ↦ c·x` with `|c| ≤ 1`.
    Scale(f64),
}

impl Transform {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Transform::Identity => x,
            Transform::Mirror => -x,
            Transform::Scale(c) => c * x,
        }
    }
}

/// A finite distribution over transforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSet {
    transforms: Vec<Transform>,
    weights: Vec<f64>,
}

impl TransformSet {
    pub fn new(transforms: Vec<Transform>, weights: Vec<f64>) -> Result<Self> {
        let set = Self { transforms, weights };
        set.validate()?;
        Ok(set)
    }

    pub fn uniform(transforms: Vec<Transform>) -> Result<Self> {
        let w = 1.0 / transforms.len().max(1) as f64;
        let weights = vec![w; transforms.len()];
        Self::new(transforms, weights)
    }

    pub fn identity() -> Self {
        Self {
            transforms: vec![Transform::Identity],
            weights: vec![1.0],
        }
    }

    /// `{identity, mirror}` with equal weights.
    pub fn mirror() -> Self {
        Self {
            transforms: vec![Transform::Identity, Transform::Mirror],
            weights: vec![0.5, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.transforms.is_empty() {
            return invalid("transform set must be nonempty");
        }
        if self.transforms.len() != self.weights.len() {
            return invalid("one weight per transform is required");
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return invalid("transform weights must be nonnegative");
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("transform weights sum to {total}, not 1"));
        }
        for t in &self.transforms {
            if let Transform::Scale(c) = t {
                if !(c.abs() <= 1.0) {
                    return invalid(format!("scale {c} does not map [-1, 1] into itself"));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Transform, f64)> + '_ {
        self.transforms.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn is_identity(&self) -> bool {
        self.iter().all(|(t, w)| t == Transform::Identity || w == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn features_at_zero() {
        let f = fourier_features(0.0, 10).unwrap();
        let s = 1.0 / std::f64::consts::PI.sqrt();
        let want = [
            1.0 / (2.0 * std::f64::consts::PI).sqrt(),
            s,
            0.0,
            s,
            0.0,
            s,
            0.0,
            s,
            0.0,
            s,
        ];
        for (a, b) in f.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let one = fourier_features(0.0, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[0] - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn features_reject_bad_inputs() {
        assert!(fourier_features(1.5, 3).is_err());
        assert!(fourier_features(0.2, 0).is_err());
        assert!(design_matrix(&[0.1, -1.01], 3).is_err());
    }

    #[test]
    fn design_rows_are_feature_vectors() {
        let xs = [-0.9, 0.0, 0.4];
        let d = design_matrix(&xs, 7).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            assert_eq!(d.row(i).transpose(), fourier_features(x, 7).unwrap());
        }
    }

    #[test]
    fn true_conditional_cases() {
        let spec = DataGenSpec::all_ones(10, 1.0).unwrap();
        let (m, v) = true_conditional(&spec, 0.0).unwrap();
        let pi = std::f64::consts::PI;
        assert!((m - (1.0 / (2.0 * pi).sqrt() + 5.0 / pi.sqrt())).abs() < 1e-14);
        assert_eq!(v, 1.0);
        let zero = DataGenSpec::new(vec![0.0; 4], 0.3).unwrap();
        assert_eq!(true_conditional(&zero, 0.77).unwrap(), (0.0, 0.3));
    }

    #[test]
    fn conditional_mean_matches_samples() {
        let spec = DataGenSpec::all_ones(10, 1.0).unwrap();
        let x = 0.37;
        let (m, v) = true_conditional(&spec, x).unwrap();
        let mut rng = RandomStream::new(3, 0);
        let ys: Vec<f64> = (0..100_000).map(|_| m + v.sqrt() * rng.standard_normal()).collect();
        let se = (v / 1e5).sqrt();
        assert!((crate::numerics::mean(&ys) - m).abs() < 4.0 * se);
    }

    #[test]
    fn mirror_specs() {
        let s = mirror_invariant_spec(10, 1.0).unwrap();
        assert_eq!(s.true_coeffs, vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let a = true_conditional(&s, 0.37).unwrap().0;
        let b = true_conditional(&s, -0.37).unwrap().0;
        assert!((a - b).abs() < 1e-14);

        let ones = DataGenSpec::all_ones(10, 1.0).unwrap();
        let gap = true_conditional(&ones, 0.37).unwrap().0 - true_conditional(&ones, -0.37).unwrap().0;
        assert!(gap.abs() > 0.1);

        let anti = mirror_antisymmetric_spec(10, 1.0).unwrap();
        assert_eq!(anti.true_coeffs, vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let a = true_conditional(&anti, 0.37).unwrap().0;
        let b = true_conditional(&anti, -0.37).unwrap().0;
        assert!((a + b).abs() < 1e-14 && a.abs() > 0.1);
    }

    #[test]
    fn mirror_premise_holds_at_random_inputs() {
        let s = mirror_invariant_spec(10, 1.0).unwrap();
        let mut rng = RandomStream::new(4, 0);
        for _ in 0..200 {
            let x = rng.uniform(-1.0, 1.0);
            let (m1, v1) = true_conditional(&s, x).unwrap();
            let (m2, v2) = true_conditional(&s, Transform::Mirror.apply(x)).unwrap();
            assert!((m1 - m2).abs() < 1e-14);
            assert_eq!(v1, v2);
        }
    }

    #[test]
    fn sampling_cases() {
        let spec = DataGenSpec::all_ones(10, 1.0).unwrap();
        let mut rng = RandomStream::new(1, 0);
        assert!(sample_dataset(&spec, 0, &mut rng).unwrap().is_empty());

        let quiet = DataGenSpec::all_ones(10, 1e-30).unwrap();
        let d = sample_dataset(&quiet, 50, &mut rng).unwrap();
        for (x, y) in d.xs().iter().zip(d.ys()) {
            assert!((y - quiet.mean_at(*x)).abs() <= 1e-10);
        }

        let d = sample_dataset(&spec, 100_000, &mut rng).unwrap();
        let resid: Vec<f64> = d.xs().iter().zip(d.ys()).map(|(x, y)| y - spec.mean_at(*x)).collect();
        assert!((crate::numerics::sample_variance(&resid) - 1.0).abs() < 0.05);
        assert!(d.xs().iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn sampling_is_reproducible() {
        let spec = DataGenSpec::all_ones(10, 1.0).unwrap();
        let a = sample_dataset(&spec, 20, &mut RandomStream::derive(9, &[1, 2])).unwrap();
        let b = sample_dataset(&spec, 20, &mut RandomStream::derive(9, &[1, 2])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let spec = DataGenSpec::all_ones(10, 1.0).unwrap();
        let d = sample_dataset(&spec, 30, &mut RandomStream::new(2, 0)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y\n"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), d);
        assert!(Dataset::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn transform_sets_validate() {
        assert!(TransformSet::uniform(vec![]).is_err());
        assert!(TransformSet::new(vec![Transform::Identity], vec![0.9]).is_err());
        assert!(TransformSet::uniform(vec![Transform::Scale(1.5)]).is_err());
        let m = TransformSet::mirror();
        assert!(m.validate().is_ok() && !m.is_identity());
        assert!(TransformSet::identity().is_identity());
    }

    proptest! {
        #[test]
        fn features_are_bounded(x in -1.0f64..=1.0, k in 1usize..40) {
            let f = fourier_features(x, k).unwrap();
            prop_assert_eq!(f[0], INV_SQRT_2PI);
            for v in f.iter().skip(1) {
                prop_assert!(v.abs() <= INV_SQRT_PI + 1e-16);
            }
            let direct: f64 = (1..=k)
                .map(|j| {
                    let v = if j == 1 {
                        1.0 / (2.0 * std::f64::consts::PI).sqrt()
                    } else if j % 2 == 1 {
                        (j as f64 * x).sin() / std::f64::consts::PI.sqrt()
                    } else {
                        (j as f64 * x).cos() / std::f64::consts::PI.sqrt()
                    };
                    v * v
                })
                .sum();
            prop_assert!((f.norm_squared() - direct).abs() < 1e-12);
        }

        #[test]
        fn transforms_stay_in_range(x in -1.0f64..=1.0, c in -1.0f64..=1.0) {
            for t in [Transform::Identity, Transform::Mirror, Transform::Scale(c)] {
                prop_assert!((-1.0..=1.0).contains(&t.apply(x)));
            }
        }
    }
}
