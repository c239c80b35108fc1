//! The simulate / fit / predict / score / diagnose commands.
//!
//! Every command reads and writes plain files so that the steps can be run
//! separately from the command line or chained by the study runner.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{BackendSpec, ScenarioConfig};
use crate::correlation::MaternParams;
use crate::error::{Error, Result};
use crate::extremal::{
    empirical_chi, gev_fit_mle, max_stability_test, ChiEstimate, GevParams, MaxStabTestResult, DEFAULT_LAG_TOL,
};
use crate::fields::{simulate_lrsm, ReplicateMatrix, ReplicateMeta, Scale};
use crate::inference::{
    quantile_type7, run_mcmc, summarize, AcceptRates, McmcConfig, ParamSummary, PosteriorChain, Priors,
};
use crate::marginal::Alpha;
use crate::prediction::{conditional_simulate, twcrps_inputs, PredictiveSamples};
use crate::scoring::{empirical_coverage, interval_score, twcrps, ScoreReport, TwWeight};
use crate::sites::{sample_uniform_sites, SiteSet};

pub const SITES_FILE: &str = "sites.csv";
pub const REPLICATES_FILE: &str = "replicates.csv";
pub const META_FILE: &str = "meta.json";
pub const CHAIN_CSV: &str = "chain.csv";
pub const CHAIN_JSON: &str = "chain.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PREDICTIVE_FILE: &str = "predictive.csv";
pub const SCORE_FILE: &str = "score.json";
pub const CHI_FILE: &str = "chi.csv";
pub const MAXSTAB_FILE: &str = "maxstab.json";
pub const GEV_FILE: &str = "gev.csv";

/// Mixes a base seed with tags into an independent-looking seed (splitmix64).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ t.wrapping_add(0x632B_E59B_D9B4_E019)))
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_context(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_context(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_context(dir, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| io_context(path, e))?;
    w.flush().map_err(|e| io_context(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn write_with<F: FnOnce(&mut BufWriter<File>) -> Result<()>>(path: &Path, f: F) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| io_context(path, e))
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub replicates: ReplicateMeta,
    /// Indices of the sites used for fitting, ascending.
    pub train: Vec<usize>,
    /// Held-out site indices, ascending.
    pub test: Vec<usize>,
    /// Lévy scales used in the simulation.
    pub r_true: Vec<f64>,
    pub config: ScenarioConfig,
}

/// A simulated data set with its train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sites: SiteSet,
    pub u: ReplicateMatrix,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn simulate(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let sites = sample_uniform_sites(cfg.n, derive_seed(seed, &[1]))?;
        let p = MaternParams::new(cfg.rho, cfg.nu)?;
        let sim = simulate_lrsm(&sites, &p, Alpha::new(cfg.alpha)?, cfg.t, derive_seed(seed, &[2]))?;
        let mut idx: Vec<usize> = (0..cfg.n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3])));
        let mut test = idx[..cfg.n_test()].to_vec();
        let mut train = idx[cfg.n_test()..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        let meta = DatasetMeta {
            replicates: ReplicateMeta {
                n: cfg.n,
                t: cfg.t,
                alpha: cfg.alpha,
                rho: cfg.rho,
                nu: cfg.nu,
                seed,
                scale: Scale::UniformU,
            },
            train,
            test,
            r_true: sim.r.as_slice().to_vec(),
            config: ScenarioConfig { seed, ..cfg.clone() },
        };
        Ok(Self { sites, u: sim.u, meta })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        write_with(&dir.join(SITES_FILE), |w| self.sites.write_csv(w))?;
        write_with(&dir.join(REPLICATES_FILE), |w| self.u.write_csv(w))?;
        write_json(&dir.join(META_FILE), &self.meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = read_json(&dir.join(META_FILE))?;
        let sites = SiteSet::read_csv(open(&dir.join(SITES_FILE))?)?;
        let u = ReplicateMatrix::read_csv(open(&dir.join(REPLICATES_FILE))?, meta.replicates.scale)?;
        let n = sites.len();
        if u.n_sites() != n || meta.replicates.n != n || u.n_replicates() != meta.replicates.t {
            return Err(Error::Data(format!("{}: sites, replicates and metadata disagree in size", dir.display())));
        }
        let mut all: Vec<usize> = meta.train.iter().chain(&meta.test).copied().collect();
        all.sort_unstable();
        if all != (0..n).collect::<Vec<_>>() || meta.train.is_empty() || meta.test.is_empty() {
            return Err(Error::Data(format!("{}: train/test split is not a partition of the sites", dir.display())));
        }
        Ok(Self { sites, u, meta })
    }

    pub fn train_sites(&self) -> Result<SiteSet> {
        self.sites.subset(&self.meta.train)
    }

    pub fn test_sites(&self) -> Result<SiteSet> {
        self.sites.subset(&self.meta.test)
    }

    pub fn train_u(&self) -> Result<ReplicateMatrix> {
        self.u.select_sites(&self.meta.train)
    }

    pub fn test_u(&self) -> Result<ReplicateMatrix> {
        self.u.select_sites(&self.meta.test)
    }
}

/// Simulates the scenario with its own seed and writes the data set.
pub fn cmd_simulate(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Dataset> {
    let ds = Dataset::simulate(cfg, cfg.seed)?;
    ds.save(out_dir)?;
    info!("simulated n={} T={} into {}", cfg.n, cfg.t, out_dir.display());
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub backend: BackendSpec,
    pub mcmc: McmcConfig,
    pub priors: Priors,
    /// Credible level of the reported intervals.
    pub level: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { backend: BackendSpec::Full, mcmc: McmcConfig::default(), priors: Priors::default(), level: 0.95 }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub backend: BackendSpec,
    pub method: String,
    pub nu: f64,
    pub n_train: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub n_iter: usize,
    pub level: f64,
    pub alpha: ParamSummary,
    pub rho: ParamSummary,
    pub accept_rates: AcceptRates,
    /// Wall-clock seconds of the MCMC loop only.
    pub walltime_sec: f64,
    pub seed: u64,
}

/// Runs the sampler on the training sites of a data set. The smoothness ν
/// is held at the value the data were generated with.
pub fn fit_dataset(ds: &Dataset, opts: &FitOptions) -> Result<(PosteriorChain, FitSummary)> {
    if opts.mcmc.n_iter == 0 {
        return Err(Error::invalid("the number of MCMC iterations must be positive"));
    }
    opts.backend.validate()?;
    let s = ds.train_sites()?;
    let u = ds.train_u()?;
    let backend = opts.backend.build(&s)?;
    let nu = ds.meta.replicates.nu;
    let chain = run_mcmc(&u, &backend, &s, nu, &opts.mcmc, &opts.priors)?;
    let cs = summarize(&chain, opts.level)?;
    let summary = FitSummary {
        backend: opts.backend,
        method: opts.backend.label(),
        nu,
        n_train: s.len(),
        t: u.n_replicates(),
        n_iter: opts.mcmc.n_iter,
        level: opts.level,
        alpha: cs.alpha,
        rho: cs.rho,
        accept_rates: cs.accept_rates,
        walltime_sec: cs.walltime_sec,
        seed: opts.mcmc.seed,
    };
    Ok((chain, summary))
}

/// Writes `chain.csv`, `chain.json` and `summary.json`.
pub fn save_fit(out_dir: &Path, chain: &PosteriorChain, summary: &FitSummary) -> Result<()> {
    ensure_dir(out_dir)?;
    write_with(&out_dir.join(CHAIN_CSV), |w| chain.write_csv(w))?;
    write_json(&out_dir.join(CHAIN_JSON), chain)?;
    write_json(&out_dir.join(SUMMARY_FILE), summary)
}

pub fn load_fit(dir: &Path) -> Result<(PosteriorChain, FitSummary)> {
    Ok((read_json(&dir.join(CHAIN_JSON))?, read_json(&dir.join(SUMMARY_FILE))?))
}

pub fn cmd_fit(dataset_dir: &Path, out_dir: &Path, opts: &FitOptions) -> Result<FitSummary> {
    let ds = Dataset::load(dataset_dir)?;
    let (chain, summary) = fit_dataset(&ds, opts)?;
    save_fit(out_dir, &chain, &summary)?;
    info!(
        "{}: alpha {:.3} [{:.3}, {:.3}], rho {:.4} [{:.4}, {:.4}], {:.1}s",
        summary.method,
        summary.alpha.median,
        summary.alpha.ci_low,
        summary.alpha.ci_high,
        summary.rho.median,
        summary.rho.ci_low,
        summary.rho.ci_high,
        summary.walltime_sec
    );
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    /// Total predictive draws per (site, replicate).
    pub draws: usize,
    pub seed: u64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self { draws: crate::prediction::DEFAULT_PREDICTIVE_DRAWS, seed: 0 }
    }
}

/// Conditional simulation at the held-out sites. Posterior states are thinned
/// to at most `draws`, and each retained state contributes an equal number of
/// draws so that the total is at least `draws`.
pub fn predict_dataset(
    ds: &Dataset,
    chain: &PosteriorChain,
    summary: &FitSummary,
    opts: &PredictOptions,
) -> Result<PredictiveSamples> {
    if opts.draws == 0 {
        return Err(Error::invalid("need at least one predictive draw"));
    }
    let s_obs = ds.train_sites()?;
    let backend = summary.backend.build(&s_obs)?;
    let n_states = chain.stored_states().len().clamp(1, opts.draws);
    let per_state = opts.draws.div_ceil(n_states);
    conditional_simulate(
        &ds.train_u()?,
        &s_obs,
        &ds.test_sites()?,
        chain,
        &backend,
        summary.nu,
        per_state,
        n_states,
        opts.seed,
    )
}

pub fn cmd_predict(dataset_dir: &Path, fit_dir: &Path, opts: &PredictOptions) -> Result<PredictiveSamples> {
    let ds = Dataset::load(dataset_dir)?;
    let (chain, summary) = load_fit(fit_dir)?;
    let pred = predict_dataset(&ds, &chain, &summary, opts)?;
    write_with(&fit_dir.join(PREDICTIVE_FILE), |w| pred.write_csv(w))?;
    Ok(pred)
}

/// Tail-weight cutoffs derived from the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightCutoffs {
    /// Median of the training values (lower-tail indicator).
    pub a: f64,
    /// Mean and standard deviation of the training values (Gaussian weight).
    pub mu: f64,
    pub sigma: f64,
}

impl WeightCutoffs {
    pub fn from_training(u: &ReplicateMatrix) -> Result<Self> {
        let mut v: Vec<f64> = u.values().iter().copied().collect();
        if v.len() < 2 {
            return Err(Error::invalid("need at least two training values"));
        }
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mu = v.iter().sum::<f64>() / n;
        let sigma = (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        if !(sigma > 0.0) {
            return Err(Error::Data("training values are constant".into()));
        }
        Ok(Self { a: quantile_type7(&v, 0.5), mu, sigma })
    }
}

/// Scores a fit: interval coverage and interval score for α and ρ against
/// the simulation truth, and the three twCRPS variants averaged over all
/// held-out (site, replicate) values.
pub fn score_fit(
    ds: &Dataset,
    summary: &FitSummary,
    pred: &PredictiveSamples,
    alpha_star: f64,
) -> Result<ScoreReport> {
    let truth = &ds.meta.replicates;
    let ia = (summary.alpha.ci_low, summary.alpha.ci_high);
    let ir = (summary.rho.ci_low, summary.rho.ci_high);
    let cut = WeightCutoffs::from_training(&ds.train_u()?)?;
    let test = ds.test_u()?;
    let units = twcrps_inputs(pred, &test)?;
    let mut tw = [0.0; 3];
    let mut sorted = Vec::new();
    for unit in &units {
        sorted.clear();
        sorted.extend_from_slice(unit.samples);
        sorted.sort_by(f64::total_cmp);
        let a80 = quantile_type7(&sorted, 0.8);
        tw[0] += twcrps(unit.samples, unit.truth, TwWeight::LowerTail(cut.a))?;
        tw[1] += twcrps(unit.samples, unit.truth, TwWeight::GaussianCdf { mu: cut.mu, sigma: cut.sigma })?;
        tw[2] += twcrps(unit.samples, unit.truth, TwWeight::UpperTail(a80))?;
    }
    let k = units.len() as f64;
    Ok(ScoreReport {
        coverage_alpha: empirical_coverage(&[ia], truth.alpha)?,
        coverage_rho: empirical_coverage(&[ir], truth.rho)?,
        interval_score_alpha: interval_score(ia.0, ia.1, truth.alpha, alpha_star)?,
        interval_score_rho: interval_score(ir.0, ir.1, truth.rho, alpha_star)?,
        twcrps_1: tw[0] / k,
        twcrps_2: tw[1] / k,
        twcrps_3: tw[2] / k,
        walltime_sec: summary.walltime_sec,
    })
}

/// Reads the data set, the fit summary and `predictive.csv` from `fit_dir`,
/// and writes `score.json` there.
pub fn cmd_score(dataset_dir: &Path, fit_dir: &Path, alpha_star: f64) -> Result<ScoreReport> {
    let ds = Dataset::load(dataset_dir)?;
    let summary: FitSummary = read_json(&fit_dir.join(SUMMARY_FILE))?;
    let pred_path = fit_dir.join(PREDICTIVE_FILE);
    let pred = PredictiveSamples::read_csv(open(&pred_path)?, Scale::UniformU)?;
    let report = score_fit(&ds, &summary, &pred, alpha_star)?;
    write_json(&fit_dir.join(SCORE_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOptions {
    pub lag: f64,
    pub lag_tol: f64,
    pub u_grid: Vec<f64>,
    /// Bootstrap resamples for the χ bands.
    pub n_boot: usize,
    /// Sites entering the max-stability statistic; `None` uses all sites.
    pub subset: Option<Vec<usize>>,
    /// Bootstrap resamples for the max-stability p-value.
    pub n_bootstrap: usize,
    pub seed: u64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            lag: 0.177,
            lag_tol: DEFAULT_LAG_TOL,
            u_grid: (0..20).map(|k| 0.80 + 0.01 * k as f64).collect(),
            n_boot: 200,
            subset: None,
            n_bootstrap: 200,
            seed: 0,
        }
    }
}

/// Per-site GEV fit; `None` where the fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GevRow {
    pub site_id: usize,
    pub fit: Option<GevParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub chi: ChiEstimate,
    pub max_stability: MaxStabTestResult,
    pub gev: Vec<GevRow>,
}

/// Per-site GEV fits to the replicate values. Uniform-scale data are first
/// put on the standard Gumbel scale, −ln(−ln u), where exact uniform
/// margins correspond to μ = 0, σ = 1, ξ = 0.
pub fn site_gev_fits(u: &ReplicateMatrix) -> Vec<GevRow> {
    let gumbel = u.scale() == Scale::UniformU;
    (0..u.n_sites())
        .map(|i| {
            let y: Vec<f64> = (0..u.n_replicates())
                .map(|t| {
                    let v = u.get(i, t);
                    if gumbel { -(-v.ln()).ln() } else { v }
                })
                .collect();
            let fit = match gev_fit_mle(&y, None) {
                Ok(p) => Some(p),
                Err(e) => {
                    warn!("GEV fit failed at site {i}: {e}");
                    None
                }
            };
            GevRow { site_id: i, fit }
        })
        .collect()
}

/// χ curve, max-stability test and GEV fits. Levels u of the χ grid with
/// fewer than one expected exceedance per site, (1 − u)·T < 1, are dropped.
pub fn diagnose_dataset(ds: &Dataset, opts: &DiagnoseOptions) -> Result<Diagnostics> {
    let t_len = ds.u.n_replicates() as f64;
    let grid: Vec<f64> = opts.u_grid.iter().copied().filter(|&u| (1.0 - u) * t_len >= 1.0).collect();
    if grid.len() < opts.u_grid.len() {
        warn!("dropped {} χ levels too high for {t_len} replicates", opts.u_grid.len() - grid.len());
    }
    if grid.is_empty() {
        return Err(Error::invalid(format!("no χ level is estimable with {t_len} replicates")));
    }
    let chi = empirical_chi(&ds.u, &ds.sites, opts.lag, opts.lag_tol, &grid, opts.n_boot, opts.seed)?;
    let subset = opts.subset.clone().unwrap_or_else(|| (0..ds.sites.len()).collect());
    let max_stability = max_stability_test(&ds.u, &subset, opts.n_bootstrap, derive_seed(opts.seed, &[1]))?;
    Ok(Diagnostics { chi, max_stability, gev: site_gev_fits(&ds.u) })
}

fn write_gev_csv<W: Write>(rows: &[GevRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["site_id", "mu", "sigma", "xi"])?;
    for r in rows {
        let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:?}"));
        wr.write_record([
            r.site_id.to_string(),
            f(r.fit.map(|p| p.mu)),
            f(r.fit.map(|p| p.sigma)),
            f(r.fit.map(|p| p.xi)),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes `chi.csv`, `maxstab.json` and `gev.csv` into `out_dir`.
pub fn cmd_diagnose(dataset_dir: &Path, out_dir: &Path, opts: &DiagnoseOptions) -> Result<Diagnostics> {
    let ds = Dataset::load(dataset_dir)?;
    let d = diagnose_dataset(&ds, opts)?;
    ensure_dir(out_dir)?;
    write_with(&out_dir.join(CHI_FILE), |w| d.chi.write_csv(w))?;
    write_json(&out_dir.join(MAXSTAB_FILE), &d.max_stability)?;
    write_with(&out_dir.join(GEV_FILE), |w| write_gev_csv(&d.gev, w))?;
    Ok(d)
}

/// Paths of one fitted cell inside a study.
pub(crate) fn cell_paths(root: &Path, scenario: &str, rep: usize, backend: &BackendSpec) -> (PathBuf, PathBuf) {
    let rep_dir = root.join(scenario).join(format!("rep{rep:03}"));
    (rep_dir.join("data"), rep_dir.join(backend.label()))
}
