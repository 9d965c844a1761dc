//! Exact tempered Bayesian inference for conjugate Gaussian linear regression,
//! with closed-form losses, temperature gradients and PAC-Bayes diagnostics.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
mod error;
pub mod gaussian;
pub mod gradients;
pub mod losses;
pub mod numerics;
pub mod pacbayes;
pub mod runner;
pub mod scenario;
pub mod tempering;

pub use data::{
    design_matrix, fourier_features, mirror_antisymmetric_spec, mirror_invariant_spec, sample_dataset,
    true_conditional, DataGenSpec, Dataset, InputLaw, Transform, TransformSet,
};
pub use error::{Error, Result};
pub use gaussian::{
    conjugate_update, kl_divergence, linear_gaussian_posterior, quadratic_form_covariance, quadratic_form_moments,
    quadratic_form_third_cumulant, Gaussian, Moments, QuadraticForm,
};
pub use gradients::{
    classify_cpe, classify_posterior, finite_difference, grad_bayes_test, grad_bayes_test_exact, grad_bayes_via_s,
    grad_empirical_gibbs, grad_empirical_gibbs_mc, grad_gibbs_test, grad_gibbs_test_mc, grad_meta, gradient_report,
    least_squares, maximum_likelihood, min_train_nll, second_grad_gibbs_test, second_grad_gibbs_test_exact, CpeLabel,
    CpeVerdict, GibbsTarget, GradientMethod, GradientReport, GradientStdErr, SScoreEstimate,
};
pub use losses::{
    bayes_loss, da_empirical_loss, empirical_log_loss, empirical_log_loss_sum, expected_log_loss, expected_loss_form,
    gibbs_losses, loss_report, loss_report_mc, loss_variance, GibbsLosses, LossReport, LossStdErr,
};
pub use numerics::{gauss_legendre, McEstimate, QuadratureRule, RandomStream};
pub use pacbayes::{
    alquier_expectation_bound, constant_model_cgf, empirical_cgf, empirical_r, geometric_grid,
    lambda_intersection_search, optimal_lambda_variance, prior_predictive_variance, tilted_variance_check,
    tilted_variance_from_losses, BoundReport, CgfEstimate, IntersectionMethod, IntersectionResult,
    PriorPredictiveVariance, RFunction, TiltedVariance,
};
pub use runner::{
    da_compare, grad_check, pacbayes as pacbayes_run, run_da_compare, run_grad_check, run_pacbayes, run_sweep, sweep,
    DaReport, DaRow, GradCheckReport, GradCheckRow, LossKind, MedianRow, PacBayesReport, RunOptions, SeedCheck,
    SweepOutput, SweepRecord, SweepSummary,
};
pub use scenario::{builtin_scenario, builtin_scenarios, da_scenario, DaTruth, McCounts, ScenarioConfig};
pub use tempering::{
    da_tempered, full_tempered, likelihood_tempered, prior_tempered, updated_posterior, ModelSpec, TemperedPosterior,
    TemperingKind,
};
