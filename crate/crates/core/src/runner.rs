//! Experiment orchestration: temperature sweeps, gradient checks, augmentation
//! comparisons and PAC-Bayes runs, with CSV and JSON outputs.
//!
//! Every task draws from its own random stream, addressed by `(tag, seed, λ index)`,
//! so outputs do not depend on the number of worker threads.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_dataset, Dataset, TransformSet};
use crate::error::{Error, Result};
use crate::gaussian::kl_divergence;
use crate::gradients::{
    finite_difference, grad_bayes_test, grad_bayes_test_exact, grad_empirical_gibbs, grad_empirical_gibbs_mc,
    grad_gibbs_test, grad_gibbs_test_mc, gradient_report, least_squares, min_train_nll, CpeVerdict,
};
use crate::losses::{bayes_loss, gibbs_losses, loss_report};
use crate::numerics::{gauss_legendre, median, McEstimate, QuadratureRule, RandomStream};
use crate::pacbayes::{
    alquier_expectation_bound, empirical_cgf, empirical_r, geometric_grid, lambda_intersection_search,
    optimal_lambda_variance, prior_predictive_variance, BoundReport, CgfEstimate, IntersectionResult,
    PriorPredictiveVariance, RFunction,
};
use crate::scenario::ScenarioConfig;
use crate::tempering::{da_tempered, likelihood_tempered};

const DATA_TAG: u64 = 1;
const MC_TAG: u64 = 2;
const PAC_TAG: u64 = 3;

pub const SWEEP_HEADER: [&str; 9] = [
    "lambda",
    "seed",
    "gibbs_train_norm",
    "gibbs_test",
    "bayes_test",
    "d_gibbs_train",
    "d_gibbs_test",
    "d_bayes_test",
    "d_bayes_stderr",
];
pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-5;
pub const JENSEN_SLACK: f64 = 1e-9;
pub const PAC_BOUND_LAMBDAS: [f64; 5] = [0.1, 0.25, 0.5, 1.0, 2.0];
pub const PAC_PRIOR_SAMPLES: usize = 200;

/// Run-level settings that are not part of a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub master_seed: u64,
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            master_seed: 0,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl RunOptions {
    fn pool(&self) -> Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads.max(1))
            .build()?)
    }
}

/// Training set of `seed`; identical across every subcommand for the same master seed.
pub fn training_data(cfg: &ScenarioConfig, master_seed: u64, seed: usize) -> Result<Dataset> {
    sample_dataset(
        &cfg.data_gen,
        cfg.n_train,
        &mut RandomStream::derive(master_seed, &[DATA_TAG, seed as u64]),
    )
}

/// `<path>.summary.json`.
pub fn summary_path(out: &Path) -> PathBuf {
    let mut s = OsString::from(out.as_os_str());
    s.push(".summary.json");
    PathBuf::from(s)
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub lambda: f64,
    pub seed: usize,
    pub gibbs_train_norm: f64,
    pub gibbs_test: f64,
    pub bayes_test: f64,
    pub d_gibbs_train: f64,
    pub d_gibbs_test: f64,
    pub d_bayes_test: f64,
    pub d_bayes_stderr: f64,
}

impl SweepRecord {
    fn fields(&self) -> [String; 9] {
        [
            fmt(self.lambda),
            self.seed.to_string(),
            fmt(self.gibbs_train_norm),
            fmt(self.gibbs_test),
            fmt(self.bayes_test),
            fmt(self.d_gibbs_train),
            fmt(self.d_gibbs_test),
            fmt(self.d_bayes_test),
            fmt(self.d_bayes_stderr),
        ]
    }
}

/// Medians over seeds at one temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub lambda: f64,
    pub gibbs_train_norm: f64,
    pub gibbs_test: f64,
    pub bayes_test: f64,
    pub d_gibbs_train: f64,
    pub d_gibbs_test: f64,
    pub d_bayes_test: f64,
}

/// Per-seed quantities at `λ = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedCheck {
    pub seed: usize,
    pub verdict: CpeVerdict,
    /// `E_{p^1}[−ln p(D|θ)]`.
    pub gibbs_train_sum: f64,
    /// `min_θ −ln p(D|θ)`.
    pub min_train_nll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub scenario: String,
    pub master_seed: u64,
    pub seeds: usize,
    pub records: usize,
    pub medians: Vec<MedianRow>,
    /// Median over seeds of the `λ = 1` Bayes gradient, banded by the median per-seed standard error.
    pub verdict: CpeVerdict,
    pub per_seed: Vec<SeedCheck>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    pub records: Vec<SweepRecord>,
    pub summary: SweepSummary,
}

fn sweep_task(
    cfg: &ScenarioConfig,
    quad: &QuadratureRule,
    data: &Dataset,
    master_seed: u64,
    seed: usize,
    li: usize,
) -> Result<(SweepRecord, f64)> {
    let lambda = cfg.lambda_grid[li];
    let post = likelihood_tempered(&cfg.model, data, lambda)?;
    let losses = loss_report(&post, &cfg.data_gen, quad)?;
    let mut rng = RandomStream::derive(master_seed, &[MC_TAG, seed as u64, li as u64]);
    let grads = gradient_report(&post, &cfg.data_gen, quad, &mut rng, cfg.mc_counts.nu_samples)?;
    let record = SweepRecord {
        lambda,
        seed,
        gibbs_train_norm: losses.gibbs_train_norm,
        gibbs_test: losses.gibbs_test,
        bayes_test: losses.bayes_test,
        d_gibbs_train: grads.d_gibbs_train,
        d_gibbs_test: grads.d_gibbs_test,
        d_bayes_test: grads.d_bayes_test,
        d_bayes_stderr: grads.std_err.d_bayes_test,
    };
    Ok((record, losses.gibbs_train_sum))
}

fn check_sweep_invariants(records: &[SweepRecord], grid_len: usize) -> Result<()> {
    for r in records {
        if r.bayes_test > r.gibbs_test + JENSEN_SLACK {
            return Err(Error::InvariantViolation {
                rule: "Jensen: Bayes loss <= Gibbs loss",
                detail: format!(
                    "seed {} λ {}: B = {} > G = {}",
                    r.seed, r.lambda, r.bayes_test, r.gibbs_test
                ),
            });
        }
        if !(r.d_gibbs_train <= 0.0) {
            return Err(Error::InvariantViolation {
                rule: "train-loss gradient is a negative variance",
                detail: format!("seed {} λ {}: gradient {}", r.seed, r.lambda, r.d_gibbs_train),
            });
        }
    }
    for rows in records.chunks(grid_len) {
        for w in rows.windows(2) {
            if w[1].gibbs_train_norm > w[0].gibbs_train_norm {
                return Err(Error::InvariantViolation {
                    rule: "train loss is non-increasing in λ",
                    detail: format!(
                        "seed {}: {} at λ {} rises to {} at λ {}",
                        w[0].seed, w[0].gibbs_train_norm, w[0].lambda, w[1].gibbs_train_norm, w[1].lambda
                    ),
                });
            }
        }
    }
    Ok(())
}

fn median_of<F: Fn(&SweepRecord) -> f64>(rows: &[&SweepRecord], f: F) -> f64 {
    median(&rows.iter().map(|r| f(r)).collect::<Vec<_>>())
}

/// Computes every `(seed, λ)` record, checks the exact invariants and summarizes.
pub fn sweep(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<SweepOutput> {
    cfg.validate()?;
    let quad = gauss_legendre(cfg.quadrature_order)?;
    let datasets: Vec<Dataset> = (0..cfg.seeds)
        .map(|s| training_data(cfg, opts.master_seed, s))
        .collect::<Result<_>>()?;
    let grid_len = cfg.lambda_grid.len();
    let tasks: Vec<(usize, usize)> = (0..cfg.seeds)
        .flat_map(|s| (0..grid_len).map(move |i| (s, i)))
        .collect();
    let results: Vec<(SweepRecord, f64)> = opts.pool()?.install(|| {
        tasks
            .par_iter()
            .map(|&(s, i)| sweep_task(cfg, &quad, &datasets[s], opts.master_seed, s, i))
            .collect::<Result<_>>()
    })?;
    let records: Vec<SweepRecord> = results.iter().map(|r| r.0).collect();
    check_sweep_invariants(&records, grid_len)?;

    let unit = cfg.unit_index().expect("validated grid contains 1");
    let per_seed: Vec<SeedCheck> = (0..cfg.seeds)
        .map(|s| {
            let (rec, train_sum) = results[s * grid_len + unit];
            Ok(SeedCheck {
                seed: s,
                verdict: CpeVerdict::from_estimate(McEstimate {
                    value: rec.d_bayes_test,
                    std_err: rec.d_bayes_stderr,
                }),
                gibbs_train_sum: train_sum,
                min_train_nll: min_train_nll(&cfg.model, &datasets[s])?,
            })
        })
        .collect::<Result<_>>()?;
    let medians: Vec<MedianRow> = (0..grid_len)
        .map(|i| {
            let rows: Vec<&SweepRecord> = records.iter().skip(i).step_by(grid_len).collect();
            MedianRow {
                lambda: cfg.lambda_grid[i],
                gibbs_train_norm: median_of(&rows, |r| r.gibbs_train_norm),
                gibbs_test: median_of(&rows, |r| r.gibbs_test),
                bayes_test: median_of(&rows, |r| r.bayes_test),
                d_gibbs_train: median_of(&rows, |r| r.d_gibbs_train),
                d_gibbs_test: median_of(&rows, |r| r.d_gibbs_test),
                d_bayes_test: median_of(&rows, |r| r.d_bayes_test),
            }
        })
        .collect();
    let grads: Vec<f64> = per_seed.iter().map(|c| c.verdict.grad_at_one).collect();
    let ses: Vec<f64> = per_seed.iter().map(|c| c.verdict.std_err).collect();
    let verdict = CpeVerdict::from_estimate(McEstimate {
        value: median(&grads),
        std_err: median(&ses),
    });
    Ok(SweepOutput {
        summary: SweepSummary {
            scenario: cfg.name.clone(),
            master_seed: opts.master_seed,
            seeds: cfg.seeds,
            records: records.len(),
            medians,
            verdict,
            per_seed,
        },
        records,
    })
}

/// Writes sweep records as CSV in `(seed, λ)` order.
pub fn write_sweep_csv(records: &[SweepRecord], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(SWEEP_HEADER)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// [`sweep`], then the CSV at `out` and the summary at `<out>.summary.json`.
pub fn run_sweep(cfg: &ScenarioConfig, opts: &RunOptions, out: &Path) -> Result<SweepOutput> {
    let output = sweep(cfg, opts)?;
    write_sweep_csv(&output.records, out)?;
    write_json(&summary_path(out), &output.summary)?;
    Ok(output)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `E_ρ[−ln p(D|θ)]`.
    GibbsTrainSum,
    GibbsTest,
    BayesTest,
}

impl LossKind {
    fn as_str(self) -> &'static str {
        match self {
            LossKind::GibbsTrainSum => "gibbs_train_sum",
            LossKind::GibbsTest => "gibbs_test",
            LossKind::BayesTest => "bayes_test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub lambda: f64,
    pub loss: LossKind,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub mc_std_err: f64,
    pub finite_difference: f64,
    /// `|closed_form − finite_difference| / |finite_difference|`.
    pub rel_err_fd: f64,
    /// `|monte_carlo − closed_form| / mc_std_err`.
    pub z_mc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub scenario: String,
    pub seed: usize,
    pub rows: Vec<GradCheckRow>,
    pub max_rel_err_fd: f64,
    pub train_gradients_nonpositive: bool,
    pub mc_within_3_std_err: usize,
    pub passed: bool,
}

fn grad_check_lambda(
    cfg: &ScenarioConfig,
    quad: &QuadratureRule,
    data: &Dataset,
    master_seed: u64,
    li: usize,
) -> Result<Vec<GradCheckRow>> {
    let lambda = cfg.lambda_grid[li];
    let spec = &cfg.data_gen;
    let post = likelihood_tempered(&cfg.model, data, lambda)?;
    let curve = |kind: LossKind| {
        move |l: f64| -> Result<f64> {
            let p = likelihood_tempered(&cfg.model, data, l)?;
            match kind {
                LossKind::GibbsTrainSum => Ok(gibbs_losses(&p, spec, quad)?.train_sum),
                LossKind::GibbsTest => Ok(gibbs_losses(&p, spec, quad)?.test),
                LossKind::BayesTest => bayes_loss(&p, spec, quad),
            }
        }
    };
    let mut rng = RandomStream::derive(master_seed, &[MC_TAG, u64::MAX, li as u64]);
    let k = cfg.mc_counts.posterior_samples;
    let entries = [
        (
            LossKind::GibbsTrainSum,
            grad_empirical_gibbs(&post)?,
            grad_empirical_gibbs_mc(&post, &mut rng, k)?,
        ),
        (
            LossKind::GibbsTest,
            grad_gibbs_test(&post, spec, quad)?,
            grad_gibbs_test_mc(&post, spec, quad, &mut rng, k)?,
        ),
        (
            LossKind::BayesTest,
            grad_bayes_test_exact(&post, spec, quad)?,
            grad_bayes_test(&post, spec, &mut rng, cfg.mc_counts.nu_samples)?,
        ),
    ];
    entries
        .into_iter()
        .map(|(loss, closed, mc)| {
            let fd = finite_difference(curve(loss), lambda, FD_STEP)?;
            Ok(GradCheckRow {
                lambda,
                loss,
                closed_form: closed,
                monte_carlo: mc.value,
                mc_std_err: mc.std_err,
                finite_difference: fd,
                rel_err_fd: (closed - fd).abs() / fd.abs(),
                z_mc: mc.z_score(closed, 0.0),
            })
        })
        .collect()
}

/// Closed-form, Monte Carlo and finite-difference gradients on the seed-0 training set.
pub fn grad_check(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<GradCheckReport> {
    cfg.validate()?;
    if cfg.lambda_grid[0] < FD_STEP {
        return Err(Error::InvalidInput(format!(
            "gradient check needs every λ ≥ {FD_STEP} for central differences"
        )));
    }
    let quad = gauss_legendre(cfg.quadrature_order)?;
    let data = training_data(cfg, opts.master_seed, 0)?;
    let per_lambda: Vec<Vec<GradCheckRow>> = opts.pool()?.install(|| {
        (0..cfg.lambda_grid.len())
            .into_par_iter()
            .map(|i| grad_check_lambda(cfg, &quad, &data, opts.master_seed, i))
            .collect::<Result<_>>()
    })?;
    let rows: Vec<GradCheckRow> = per_lambda.into_iter().flatten().collect();
    let max_rel_err_fd = rows.iter().map(|r| r.rel_err_fd).fold(0.0, f64::max);
    let train_gradients_nonpositive = rows
        .iter()
        .filter(|r| r.loss == LossKind::GibbsTrainSum)
        .all(|r| r.closed_form <= 0.0);
    let mc_within_3_std_err = rows.iter().filter(|r| r.z_mc <= 3.0).count();
    Ok(GradCheckReport {
        scenario: cfg.name.clone(),
        seed: 0,
        passed: max_rel_err_fd <= FD_TOLERANCE && train_gradients_nonpositive && mc_within_3_std_err == rows.len(),
        max_rel_err_fd,
        train_gradients_nonpositive,
        mc_within_3_std_err,
        rows,
    })
}

/// [`grad_check`], with the table as CSV at `out` and the report at `<out>.summary.json`.
pub fn run_grad_check(cfg: &ScenarioConfig, opts: &RunOptions, out: &Path) -> Result<GradCheckReport> {
    let report = grad_check(cfg, opts)?;
    let mut w = csv::Writer::from_path(out)?;
    w.write_record([
        "lambda",
        "loss",
        "closed_form",
        "monte_carlo",
        "mc_stderr",
        "finite_difference",
        "rel_err_fd",
        "z_mc",
    ])?;
    for r in &report.rows {
        w.write_record([
            fmt(r.lambda),
            r.loss.as_str().to_string(),
            fmt(r.closed_form),
            fmt(r.monte_carlo),
            fmt(r.mc_std_err),
            fmt(r.finite_difference),
            fmt(r.rel_err_fd),
            fmt(r.z_mc),
        ])?;
    }
    w.flush()?;
    write_json(&summary_path(out), &report)?;
    Ok(report)
}

/// Gradients at `λ = 1` with and without augmentation on one training set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaRow {
    pub seed: usize,
    pub d_gibbs_test_plain: f64,
    pub d_gibbs_test_da: f64,
    pub d_bayes_test_plain: f64,
    pub d_bayes_test_da: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaReport {
    pub scenario: String,
    pub transforms: TransformSet,
    pub rows: Vec<DaRow>,
    pub median_d_gibbs_test_plain: f64,
    pub median_d_gibbs_test_da: f64,
    pub median_d_bayes_test_plain: f64,
    pub median_d_bayes_test_da: f64,
    /// The augmented Gibbs-loss gradient is at least as negative, in the median.
    pub strengthened: bool,
}

/// Compares `∂λ G` and `∂λ B` at `λ = 1` with and without augmentation, per seed.
pub fn da_compare(cfg: &ScenarioConfig, transforms: &TransformSet, opts: &RunOptions) -> Result<DaReport> {
    cfg.validate()?;
    transforms.validate()?;
    let quad = gauss_legendre(cfg.quadrature_order)?;
    let spec = &cfg.data_gen;
    let rows: Vec<DaRow> = opts.pool()?.install(|| {
        (0..cfg.seeds)
            .into_par_iter()
            .map(|s| {
                let data = training_data(cfg, opts.master_seed, s)?;
                let plain = likelihood_tempered(&cfg.model, &data, 1.0)?;
                let da = da_tempered(&cfg.model, &data, transforms, 1.0)?;
                Ok(DaRow {
                    seed: s,
                    d_gibbs_test_plain: grad_gibbs_test(&plain, spec, &quad)?,
                    d_gibbs_test_da: grad_gibbs_test(&da, spec, &quad)?,
                    d_bayes_test_plain: grad_bayes_test_exact(&plain, spec, &quad)?,
                    d_bayes_test_da: grad_bayes_test_exact(&da, spec, &quad)?,
                })
            })
            .collect::<Result<_>>()
    })?;
    let med = |f: fn(&DaRow) -> f64| median(&rows.iter().map(f).collect::<Vec<_>>());
    let (gp, gd) = (med(|r| r.d_gibbs_test_plain), med(|r| r.d_gibbs_test_da));
    Ok(DaReport {
        scenario: cfg.name.clone(),
        transforms: transforms.clone(),
        median_d_gibbs_test_plain: gp,
        median_d_gibbs_test_da: gd,
        median_d_bayes_test_plain: med(|r| r.d_bayes_test_plain),
        median_d_bayes_test_da: med(|r| r.d_bayes_test_da),
        strengthened: gd <= gp,
        rows,
    })
}

/// [`da_compare`], with per-seed rows as CSV at `out` and the report at `<out>.summary.json`.
pub fn run_da_compare(
    cfg: &ScenarioConfig,
    transforms: &TransformSet,
    opts: &RunOptions,
    out: &Path,
) -> Result<DaReport> {
    let report = da_compare(cfg, transforms, opts)?;
    let mut w = csv::Writer::from_path(out)?;
    w.write_record([
        "seed",
        "d_gibbs_test_plain",
        "d_gibbs_test_da",
        "d_bayes_test_plain",
        "d_bayes_test_da",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.seed.to_string(),
            fmt(r.d_gibbs_test_plain),
            fmt(r.d_gibbs_test_da),
            fmt(r.d_bayes_test_plain),
            fmt(r.d_bayes_test_da),
        ])?;
    }
    w.flush()?;
    write_json(&summary_path(out), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelledCgf {
    pub label: String,
    pub estimate: CgfEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacBayesReport {
    pub scenario: String,
    pub master_seed: u64,
    pub cgf: Vec<LabelledCgf>,
    pub r: RFunction,
    pub bounds: Vec<BoundReport>,
    pub all_bounds_hold: bool,
    /// `E_D KL(p^1(·|D) ‖ π)` over the resampled datasets.
    pub kl_expected: f64,
    pub optimal_lambda_variance: f64,
    pub optimal_lambda_intersection: IntersectionResult,
    pub prior_predictive_variance: PriorPredictiveVariance,
}

/// CGF curves, the R function, bounds at five temperatures, both optimal temperatures and the
/// prior-predictive variance.
pub fn pacbayes(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<PacBayesReport> {
    cfg.validate()?;
    let quad = gauss_legendre(cfg.quadrature_order)?;
    let (model, spec, n) = (&cfg.model, &cfg.data_gen, cfg.n_train);
    let m = cfg.mc_counts.resamples;
    let seed = opts.master_seed;
    let grid = geometric_grid(1e-3, 8.0, 20)?;
    let stream = |id: u64| RandomStream::derive(seed, &[PAC_TAG, id]);

    let prior_draw = model.prior.sample_one(&mut stream(0));
    let mle = least_squares(model, &training_data(cfg, seed, 0)?)?;
    let thetas = [
        ("prior_mean", model.prior.mean().clone()),
        ("prior_draw", prior_draw),
        ("least_squares", mle),
    ];
    let pool = opts.pool()?;
    let cgf: Vec<LabelledCgf> = pool.install(|| {
        thetas
            .par_iter()
            .enumerate()
            .map(|(i, (label, theta))| {
                let estimate = empirical_cgf(model, spec, theta, &grid, m, n, &mut stream(1 + i as u64), &quad)?;
                Ok(LabelledCgf {
                    label: label.to_string(),
                    estimate,
                })
            })
            .collect::<Result<_>>()
    })?;
    let r = empirical_r(model, spec, PAC_PRIOR_SAMPLES, &grid, m, n, &mut stream(10), &quad)?;
    let bounds: Vec<BoundReport> = pool.install(|| {
        PAC_BOUND_LAMBDAS
            .par_iter()
            .enumerate()
            .map(|(i, &lambda)| {
                alquier_expectation_bound(
                    model,
                    spec,
                    lambda,
                    |d| Ok(likelihood_tempered(model, d, lambda)?.gaussian),
                    m,
                    n,
                    PAC_PRIOR_SAMPLES,
                    &mut stream(20 + i as u64),
                    &quad,
                )
            })
            .collect::<Result<_>>()
    })?;
    let mut rng = stream(30);
    let kls: Vec<f64> = (0..m)
        .map(|_| {
            let d = sample_dataset(spec, n, &mut rng)?;
            kl_divergence(&likelihood_tempered(model, &d, 1.0)?.gaussian, &model.prior)
        })
        .collect::<Result<_>>()?;
    let kl_expected = kls.iter().sum::<f64>() / kls.len() as f64;
    let lambda_var = optimal_lambda_variance(kl_expected, n, r.mean_loss_variance.value)?;
    let intersection = lambda_intersection_search(&r.curve.lambdas, &r.curve.values, kl_expected, n)?;
    let ppv = prior_predictive_variance(model, spec, PAC_PRIOR_SAMPLES, m.max(100), n, &mut stream(40), &quad)?;
    Ok(PacBayesReport {
        scenario: cfg.name.clone(),
        master_seed: seed,
        cgf,
        all_bounds_hold: bounds.iter().all(|b| b.holds),
        r,
        bounds,
        kl_expected,
        optimal_lambda_variance: lambda_var,
        optimal_lambda_intersection: intersection,
        prior_predictive_variance: ppv,
    })
}

/// [`pacbayes`], written as JSON at `out`.
pub fn run_pacbayes(cfg: &ScenarioConfig, opts: &RunOptions, out: &Path) -> Result<PacBayesReport> {
    let report = pacbayes(cfg, opts)?;
    write_json(out, &report)?;
    Ok(report)
}
