use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use coldpost_core::{
    builtin_scenario, builtin_scenarios, da_scenario, run_da_compare, run_grad_check, run_pacbayes, run_sweep, DaTruth,
    RunOptions, ScenarioConfig, TransformSet,
};

const GRAD_CHECK_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Parser)]
#[command(
    name = "coldpost",
    version,
    about = "Tempered-posterior experiments for Bayesian linear regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Loss and gradient curves over a temperature grid, per seed.
    Sweep(CommonArgs),
    /// Closed-form gradients against Monte Carlo and finite differences.
    GradCheck(CommonArgs),
    /// Gradients at λ = 1 with and without mirror augmentation.
    DaCompare {
        #[command(flatten)]
        common: CommonArgs,
        /// Truth for the built-in augmentation scenario; ignored with --scenario.
        #[arg(long, value_enum, default_value_t = TruthArg::Invariant)]
        truth: TruthArg,
        #[arg(long, value_enum, default_value_t = TransformArg::Mirror)]
        transforms: TransformArg,
    },
    /// CGF and R curves, bounds, optimal temperatures and the prior-predictive variance.
    Pacbayes(CommonArgs),
    /// Lists the built-in scenarios.
    Scenarios {
        /// Print full configurations as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Built-in scenario name or path to a JSON config.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    /// Comma-separated temperatures, e.g. 0.5,1,2.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    /// Draws from the data distribution per Monte Carlo gradient.
    #[arg(long)]
    mc_nu: Option<usize>,
    /// Posterior draws per Monte Carlo estimate.
    #[arg(long)]
    mc_post: Option<usize>,
    #[arg(long)]
    quad_order: Option<usize>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TruthArg {
    Invariant,
    Antisymmetric,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    Mirror,
    Identity,
}

impl CommonArgs {
    fn config(&self, fallback: Option<ScenarioConfig>) -> Result<ScenarioConfig> {
        let mut cfg = match (&self.scenario, fallback) {
            (Some(s), _) => match builtin_scenario(s) {
                Some(c) => c,
                None => {
                    ScenarioConfig::load(s).with_context(|| format!("no built-in scenario or readable config `{s}`"))?
                }
            },
            (None, Some(c)) => c,
            (None, None) => bail!("--scenario is required"),
        };
        if let Some(n) = self.seeds {
            cfg.seeds = n;
        }
        if let Some(g) = &self.lambda_grid {
            cfg.lambda_grid = g.clone();
        }
        if let Some(m) = self.mc_nu {
            cfg.mc_counts.nu_samples = m;
        }
        if let Some(k) = self.mc_post {
            cfg.mc_counts.posterior_samples = k;
        }
        if let Some(q) = self.quad_order {
            cfg.quadrature_order = q;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn options(&self) -> RunOptions {
        let mut opts = RunOptions {
            master_seed: self.master_seed,
            ..RunOptions::default()
        };
        if let Some(t) = self.threads {
            opts.threads = t;
        }
        opts
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sweep(args) => {
            let cfg = args.config(None)?;
            let out = run_sweep(&cfg, &args.options(), &args.out)?;
            print_json(&out.summary.verdict)?;
        }
        Command::GradCheck(mut args) => {
            if args.lambda_grid.is_none() {
                args.lambda_grid = Some(GRAD_CHECK_GRID.to_vec());
            }
            let cfg = args.config(None)?;
            let report = run_grad_check(&cfg, &args.options(), &args.out)?;
            println!(
                "{}: max relative error vs finite differences {:.3e}, Monte Carlo within 3 std err {}/{}: {}",
                report.scenario,
                report.max_rel_err_fd,
                report.mc_within_3_std_err,
                report.rows.len(),
                if report.passed { "PASS" } else { "FAIL" }
            );
            if !report.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::DaCompare {
            common,
            truth,
            transforms,
        } => {
            let truth = match truth {
                TruthArg::Invariant => DaTruth::MirrorInvariant,
                TruthArg::Antisymmetric => DaTruth::MirrorAntisymmetric,
            };
            let cfg = common.config(Some(da_scenario(truth)?))?;
            let set = match transforms {
                TransformArg::Mirror => TransformSet::mirror(),
                TransformArg::Identity => TransformSet::identity(),
            };
            let report = run_da_compare(&cfg, &set, &common.options(), &common.out)?;
            println!(
                "{}: median dG/dλ plain {:.6e}, augmented {:.6e}; strengthened: {}",
                report.scenario, report.median_d_gibbs_test_plain, report.median_d_gibbs_test_da, report.strengthened
            );
        }
        Command::Pacbayes(args) => {
            let cfg = args.config(None)?;
            let report = run_pacbayes(&cfg, &args.options(), &args.out)?;
            println!(
                "{}: bounds hold {}, optimal λ {:.4} (variance) vs {:.4} (R curve)",
                report.scenario,
                report.all_bounds_hold,
                report.optimal_lambda_variance,
                report.optimal_lambda_intersection.lambda
            );
        }
        Command::Scenarios { json } => {
            let all = builtin_scenarios();
            if json {
                print_json(&all)?;
            } else {
                for c in &all {
                    println!(
                        "{:<24} K={:<3} noise_var={:<5} prior_var={}",
                        c.name,
                        c.model.basis_order_model,
                        c.model.noise_var_model,
                        c.model.prior.cov()[(0, 0)]
                    );
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
