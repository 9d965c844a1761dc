//! Shared numeric utilities: random streams, Gauss-Legendre rules and
//! stable reductions with error bars.

mod quadrature;
mod rng;
mod stats;

pub use quadrature::{gauss_legendre, QuadratureRule, DEFAULT_QUADRATURE_ORDER};
pub use rng::{stream_id, RandomStream};
pub use stats::{jackknife_stderr, log_mean_exp, log_sum_exp, mean, mean_stderr, median, sample_variance, McEstimate};
