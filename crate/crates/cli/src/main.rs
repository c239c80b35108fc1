//! `lrsm`: simulate, fit, predict, score and diagnose LRSM data sets.
//!
//! Exit codes: 0 success, 2 usage or invalid argument, 3 data or file
//! error, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lrsm::harness::{
    cmd_diagnose, cmd_fit, cmd_predict, cmd_score, cmd_simulate, exit_code, run_study, BackendSpec, DiagnoseOptions,
    FitOptions, PredictOptions, ScenarioConfig, StudyConfig, StudyOptions,
};
use lrsm::inference::{McmcConfig, Priors};
use lrsm::scoring::format_results_table;
use lrsm::{Error, Result};

#[derive(Parser)]
#[command(name = "lrsm", version, about = "Spatial extremes with Lévy random scale mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a data set from a scenario file.
    ///
    /// The scenario file holds `key = value` lines (`#` starts a comment):
    /// name, n, T, alpha, rho, nu, holdout, seed, backends, n_iter,
    /// adapt_every, target_accept, burn_in, r_thin, reps, pred_draws,
    /// alpha_star. Writes sites.csv, replicates.csv and meta.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed of the scenario file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit by MCMC on the training sites; writes chain.csv, chain.json and summary.json.
    Fit(FitArgs),
    /// Simulate the held-out sites from a fit; writes predictive.csv into the fit directory.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        /// Predictive draws per site and replicate.
        #[arg(long, default_value_t = 500)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a fit and its predictions; writes score.json into the fit directory.
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        /// Interval level is 1 − alpha_star.
        #[arg(long, default_value_t = 0.05)]
        alpha_star: f64,
    },
    /// Empirical χ curve, max-stability test and per-site GEV fits.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Spatial lag of the χ curve.
        #[arg(long, default_value_t = 0.177)]
        lag: f64,
        #[arg(long, default_value_t = 0.02)]
        lag_tol: f64,
        /// Bootstrap resamples for the χ bands.
        #[arg(long, default_value_t = 200)]
        n_boot: usize,
        /// Bootstrap resamples for the max-stability p-value.
        #[arg(long, default_value_t = 200)]
        n_bootstrap: usize,
        /// Comma-separated site indices for the max-stability test (default: all).
        #[arg(long, value_delimiter = ',')]
        subset: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a scenario × repetition × backend study; writes results.txt and results.json.
    ///
    /// The study file uses the scenario keys; n, T, alpha, rho and nu may be
    /// comma-separated lists, and `jobs` sets the number of concurrent fits.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep cells that already have a score.json.
        #[arg(long)]
        resume: bool,
        /// Overrides `jobs` of the study file.
        #[arg(long)]
        jobs: Option<usize>,
        /// Stop after this many newly fitted cells.
        #[arg(long)]
        max_new_cells: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendName {
    Full,
    Vecchia,
    Taper,
    Lowrank,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    backend: BackendName,
    /// Vecchia conditioning-set size.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Taper sparsity: target fraction of zero covariance entries.
    #[arg(long, default_value_t = 0.9)]
    sparsity: f64,
    /// Low-rank basis size.
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 50_000)]
    iters: usize,
    #[arg(long, default_value_t = 200)]
    adapt_every: usize,
    #[arg(long, default_value_t = 0.44)]
    target_accept: f64,
    /// Fraction of iterations discarded as burn-in.
    #[arg(long, default_value_t = 0.5)]
    burn_in: f64,
    /// Store R draws every this many iterations.
    #[arg(long, default_value_t = 50)]
    r_thin: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FitArgs {
    fn options(&self) -> Result<FitOptions> {
        let backend = match self.backend {
            BackendName::Full => BackendSpec::Full,
            BackendName::Vecchia => BackendSpec::Vecchia { m: self.m },
            BackendName::Taper => BackendSpec::Taper { sparsity: self.sparsity },
            BackendName::Lowrank => BackendSpec::LowRank { k: self.k },
        };
        backend.validate()?;
        let mcmc = McmcConfig {
            n_iter: self.iters,
            adapt_every: self.adapt_every,
            target_accept: self.target_accept,
            burn_in: self.burn_in,
            seed: self.seed,
            r_thin: self.r_thin,
            prior_only: false,
        };
        mcmc.validate()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument("--level must lie in (0, 1)".into()));
        }
        Ok(FitOptions { backend, mcmc, priors: Priors::default(), level: self.level })
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let mut cfg = ScenarioConfig::parse(&read_text(&config)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ds = cmd_simulate(&cfg, &out)?;
            println!(
                "wrote {} sites ({} train, {} test) × {} replicates to {}",
                ds.sites.len(),
                ds.meta.train.len(),
                ds.meta.test.len(),
                ds.u.n_replicates(),
                out.display()
            );
        }
        Command::Fit(args) => {
            let summary = cmd_fit(&args.data, &args.out, &args.options()?)?;
            print_json(&summary)?;
        }
        Command::Predict { data, fit, draws, seed } => {
            let pred = cmd_predict(&data, &fit, &PredictOptions { draws, seed })?;
            println!(
                "wrote {} draws for {} sites × {} replicates to {}",
                pred.n_draws(),
                pred.n_targets(),
                pred.n_replicates(),
                fit.display()
            );
        }
        Command::Score { data, fit, alpha_star } => {
            print_json(&cmd_score(&data, &fit, alpha_star)?)?;
        }
        Command::Diagnose { data, out, lag, lag_tol, n_boot, n_bootstrap, subset, seed } => {
            let opts = DiagnoseOptions { lag, lag_tol, n_boot, n_bootstrap, subset, seed, ..Default::default() };
            let d = cmd_diagnose(&data, &out, &opts)?;
            print_json(&d.max_stability)?;
        }
        Command::Study { config, out, resume, jobs, max_new_cells } => {
            let mut cfg = StudyConfig::parse(&read_text(&config)?)?;
            if let Some(j) = jobs {
                cfg.jobs = j.max(1);
            }
            let outcome = run_study(&cfg, &out, &StudyOptions { resume, max_new_cells })?;
            print!("{}", format_results_table(&outcome.table));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
