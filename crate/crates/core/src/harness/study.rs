//! Scenario × repetition × backend study runner.
//!
//! Layout under the output root:
//! `<scenario>/rep<k>/data/` holds the simulated data set and
//! `<scenario>/rep<k>/<method>/` the chain, predictions and `score.json` of
//! one fit. A cell whose `score.json` exists is complete and is skipped on
//! a rerun, so an interrupted study resumes where it stopped.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::commands::{
    cell_paths, derive_seed, fit_dataset, predict_dataset, read_json, save_fit, score_fit, write_json, Dataset,
    FitOptions, PredictOptions, PREDICTIVE_FILE, SCORE_FILE,
};
use super::config::{BackendSpec, ScenarioConfig, StudyConfig};
use crate::error::{Error, Result};
use crate::inference::{McmcConfig, Priors};
use crate::scoring::{format_results_table, ResultsRow, ScoreReport};

pub const RESULTS_TABLE: &str = "results.txt";
pub const RESULTS_JSON: &str = "results.json";
const ERROR_FILE: &str = "error.txt";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyOptions {
    /// Keep cells that already have a score; otherwise every cell is refitted.
    pub resume: bool,
    /// Stop after this many newly computed cells, as if interrupted.
    pub max_new_cells: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    /// Computed in this run.
    Completed,
    /// Found complete on disk.
    Resumed,
    Failed,
    /// Not attempted because the run stopped early.
    Pending,
}

/// One scenario × repetition × backend fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scenario: String,
    pub rep: usize,
    pub method: String,
    pub status: CellStatus,
    pub score: Option<ScoreReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutcome {
    pub cells: Vec<CellResult>,
    /// One aggregated row per scenario and method.
    pub table: Vec<ResultsRow>,
}

impl StudyOutcome {
    pub fn count(&self, status: CellStatus) -> usize {
        self.cells.iter().filter(|c| c.status == status).count()
    }
}

struct Cell<'a> {
    scenario: &'a ScenarioConfig,
    rep: usize,
    backend: BackendSpec,
    data_dir: PathBuf,
    fit_dir: PathBuf,
}

/// Seed of repetition `rep` of a scenario.
pub fn repetition_seed(scenario: &ScenarioConfig, rep: usize) -> u64 {
    derive_seed(scenario.seed, &[rep as u64])
}

fn run_cell(cell: &Cell) -> Result<ScoreReport> {
    let ds = Dataset::load(&cell.data_dir)?;
    let seed = repetition_seed(cell.scenario, cell.rep);
    let opts = FitOptions {
        backend: cell.backend,
        mcmc: McmcConfig { seed: derive_seed(seed, &[10]), ..cell.scenario.mcmc.clone() },
        priors: Priors::default(),
        level: 1.0 - cell.scenario.alpha_star,
    };
    let (chain, summary) = fit_dataset(&ds, &opts)?;
    save_fit(&cell.fit_dir, &chain, &summary)?;
    let pred =
        predict_dataset(&ds, &chain, &summary, &PredictOptions { draws: cell.scenario.pred_draws, seed: derive_seed(seed, &[11]) })?;
    let mut w = BufWriter::new(fs::File::create(cell.fit_dir.join(PREDICTIVE_FILE))?);
    pred.write_csv(&mut w)?;
    w.flush()?;
    let report = score_fit(&ds, &summary, &pred, cell.scenario.alpha_star)?;
    // written last: its presence marks the cell complete
    write_json(&cell.fit_dir.join(SCORE_FILE), &report)?;
    Ok(report)
}

/// Whether a stored data set was generated by this scenario and seed.
fn same_design(stored: &ScenarioConfig, sc: &ScenarioConfig, seed: u64) -> bool {
    (stored.n, stored.t, stored.seed) == (sc.n, sc.t, seed)
        && (stored.alpha, stored.rho, stored.nu, stored.n_test_fraction)
            == (sc.alpha, sc.rho, sc.nu, sc.n_test_fraction)
}

/// Mean over the completed repetitions; coverage is the fraction of
/// repetitions whose interval contained the truth.
pub fn aggregate(cells: &[CellResult], scenarios: &[ScenarioConfig]) -> Vec<ResultsRow> {
    let mut rows = Vec::new();
    for sc in scenarios {
        for b in &sc.backends {
            let method = b.label();
            let done: Vec<&ScoreReport> = cells
                .iter()
                .filter(|c| c.scenario == sc.name && c.method == method)
                .filter_map(|c| c.score.as_ref())
                .collect();
            let mean = |f: &dyn Fn(&ScoreReport) -> f64| {
                if done.is_empty() {
                    None
                } else {
                    Some(done.iter().map(|r| f(r)).sum::<f64>() / done.len() as f64)
                }
            };
            rows.push(ResultsRow {
                scenario: sc.name.clone(),
                method,
                n_reps: done.len(),
                coverage_alpha: mean(&|r| r.coverage_alpha),
                coverage_rho: mean(&|r| r.coverage_rho),
                interval_score_alpha: mean(&|r| sc.alpha_star / 2.0 * r.interval_score_alpha),
                interval_score_rho: mean(&|r| sc.alpha_star / 2.0 * r.interval_score_rho),
                twcrps: [mean(&|r| r.twcrps_1), mean(&|r| r.twcrps_2), mean(&|r| r.twcrps_3)],
                walltime_min: mean(&|r| r.walltime_sec / 60.0),
            });
        }
    }
    rows
}

/// Runs every cell of the study, skipping completed ones, and writes
/// `results.txt` and `results.json` under `out_dir`.
///
/// A failing cell is recorded as missing and the run continues. Up to
/// `config.jobs` cells are fitted concurrently.
pub fn run_study(config: &StudyConfig, out_dir: &Path, opts: &StudyOptions) -> Result<StudyOutcome> {
    let mut names: Vec<&str> = config.scenarios.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != config.scenarios.len() {
        return Err(Error::invalid("scenario names must be unique"));
    }
    fs::create_dir_all(out_dir)?;

    // Data sets first, sequentially, so concurrent cells never write the same files.
    let mut cells = Vec::new();
    for sc in &config.scenarios {
        for rep in 0..sc.n_repetitions {
            let (data_dir, _) = cell_paths(out_dir, &sc.name, rep, &BackendSpec::Full);
            let seed = repetition_seed(sc, rep);
            match Dataset::load(&data_dir) {
                Ok(ds) if same_design(&ds.meta.config, sc, seed) => {}
                _ => {
                    // fits of a different or damaged data set are stale
                    if let Some(rep_dir) = data_dir.parent().filter(|d| d.exists()) {
                        fs::remove_dir_all(rep_dir)?;
                    }
                    Dataset::simulate(sc, seed)?.save(&data_dir)?
                }
            }
            for b in &sc.backends {
                let (data_dir, fit_dir) = cell_paths(out_dir, &sc.name, rep, b);
                cells.push(Cell { scenario: sc, rep, backend: *b, data_dir, fit_dir });
            }
        }
    }

    let results: Vec<Mutex<Option<CellResult>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let budget = AtomicUsize::new(opts.max_new_cells.unwrap_or(usize::MAX));
    let worker = || loop {
        let k = next.fetch_add(1, Ordering::SeqCst);
        let Some(cell) = cells.get(k) else { break };
        let base = |status, score, error| CellResult {
            scenario: cell.scenario.name.clone(),
            rep: cell.rep,
            method: cell.backend.label(),
            status,
            score,
            error,
        };
        let score_path = cell.fit_dir.join(SCORE_FILE);
        let done = if opts.resume { read_json::<ScoreReport>(&score_path).ok() } else { None };
        let res = if let Some(rep) = done {
            base(CellStatus::Resumed, Some(rep), None)
        } else if budget.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| b.checked_sub(1)).is_err() {
            base(CellStatus::Pending, None, None)
        } else {
            info!("cell {} rep {} {}", cell.scenario.name, cell.rep, cell.backend.label());
            let _ = fs::remove_file(cell.fit_dir.join(ERROR_FILE));
            match run_cell(cell) {
                Ok(rep) => base(CellStatus::Completed, Some(rep), None),
                Err(e) => {
                    warn!("cell {} rep {} {} failed: {e}", cell.scenario.name, cell.rep, cell.backend.label());
                    let _ = fs::create_dir_all(&cell.fit_dir).and_then(|_| fs::write(cell.fit_dir.join(ERROR_FILE), e.to_string()));
                    base(CellStatus::Failed, None, Some(e.to_string()))
                }
            }
        };
        *results[k].lock().unwrap() = Some(res);
    };
    std::thread::scope(|scope| {
        for _ in 0..config.jobs.max(1).min(cells.len().max(1)) {
            scope.spawn(worker);
        }
    });
    let cells: Vec<CellResult> = results.into_iter().map(|m| m.into_inner().unwrap().expect("every cell visited")).collect();
    let table = aggregate(&cells, &config.scenarios);
    fs::write(out_dir.join(RESULTS_TABLE), format_results_table(&table))?;
    let outcome = StudyOutcome { cells, table };
    write_json(&out_dir.join(RESULTS_JSON), &outcome)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::parse_results_table;

    fn report(cov: f64) -> ScoreReport {
        ScoreReport {
            coverage_alpha: cov,
            coverage_rho: 1.0,
            interval_score_alpha: 0.2,
            interval_score_rho: 0.1,
            twcrps_1: 0.01,
            twcrps_2: 0.02,
            twcrps_3: 0.03,
            walltime_sec: 60.0,
        }
    }

    fn cell(rep: usize, cov: Option<f64>) -> CellResult {
        CellResult {
            scenario: "s".into(),
            rep,
            method: "full".into(),
            status: if cov.is_some() { CellStatus::Completed } else { CellStatus::Failed },
            score: cov.map(report),
            error: None,
        }
    }

    #[test]
    fn aggregation_is_mean_of_indicators() {
        let sc = ScenarioConfig { name: "s".into(), ..Default::default() };
        let cells = vec![cell(0, Some(1.0)), cell(1, Some(0.0)), cell(2, Some(1.0)), cell(3, None)];
        let rows = aggregate(&cells, &[sc]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n_reps, 3);
        assert!((rows[0].coverage_alpha.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((rows[0].interval_score_alpha.unwrap() - 0.025 * 0.2).abs() < 1e-15);
        assert_eq!(rows[0].walltime_min, Some(1.0));
    }

    #[test]
    fn missing_method_gives_na_row() {
        let sc = ScenarioConfig { name: "s".into(), backends: vec![BackendSpec::Vecchia { m: 3 }], ..Default::default() };
        let rows = aggregate(&[cell(0, Some(1.0))], &[sc]);
        assert_eq!(rows[0].n_reps, 0);
        assert_eq!(rows[0].coverage_alpha, None);
        let back = parse_results_table(&format_results_table(&rows)).unwrap();
        assert_eq!(back[0].coverage_alpha, None);
    }

    #[test]
    fn tiny_study_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = StudyConfig::parse(
            "name = t\nn = 12\nT = 4\nalpha = 0.3\nrho = 0.1\nbackends = full, vecchia:3\nreps = 2\n\
             n_iter = 60\nadapt_every = 20\npred_draws = 20\njobs = 2\n",
        )
        .unwrap();
        let first = run_study(&cfg, dir.path(), &StudyOptions { resume: true, max_new_cells: Some(3) }).unwrap();
        assert_eq!(first.count(CellStatus::Completed), 3);
        assert_eq!(first.count(CellStatus::Pending), 1);
        let resume = StudyOptions { resume: true, max_new_cells: None };
        let second = run_study(&cfg, dir.path(), &resume).unwrap();
        assert_eq!(second.cells.len(), 4);
        assert_eq!(second.count(CellStatus::Resumed), 3);
        assert_eq!(second.count(CellStatus::Completed), 1);
        let third = run_study(&cfg, dir.path(), &resume).unwrap();
        assert_eq!(third.count(CellStatus::Resumed), 4);
        assert_eq!(third.table, second.table);
        // refitting reproduces the scores up to walltime
        let fresh = run_study(&cfg, dir.path(), &StudyOptions::default()).unwrap();
        assert_eq!(fresh.count(CellStatus::Completed), 4);
        for (a, b) in fresh.cells.iter().zip(&third.cells) {
            let (a, b) = (a.score.unwrap(), b.score.unwrap());
            assert_eq!((a.coverage_alpha, a.interval_score_alpha, a.twcrps_3), (b.coverage_alpha, b.interval_score_alpha, b.twcrps_3));
        }
        let text = fs::read_to_string(dir.path().join(RESULTS_TABLE)).unwrap();
        assert_eq!(parse_results_table(&text).unwrap().len(), 2);
    }
}
