//! Line-oriented `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.
//! In a study file the design keys `n`, `T`, `alpha`, `rho` and `nu` may hold
//! comma-separated lists; the study runs their Cartesian product.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::correlation::{eigenbasis, taper_range_for_sparsity, TaperSpec, REFERENCE_BASIS_KERNEL};
use crate::error::{Error, Result};
use crate::inference::McmcConfig;
use crate::likelihood::LikelihoodBackend;
use crate::sites::{build_vecchia_plan, SiteSet};

/// Parsed `key = value` pairs in file order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected `key = value`, got {raw:?}", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::invalid(format!("line {}: empty key", no + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::invalid(format!("line {}: duplicate key {k:?}", no + 1)));
            }
        }
        Ok(Self { entries })
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::invalid(format!("cannot parse value {v:?} of key {key:?}"))),
        }
    }

    fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim().parse().map_err(|_| Error::invalid(format!("cannot parse list item {x:?} of key {key:?}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(Error::invalid(format!("unknown configuration key {k:?}"))),
            None => Ok(()),
        }
    }
}

/// A Gaussian backend and its tuning setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BackendSpec {
    Full,
    /// Conditioning-set size.
    Vecchia { m: usize },
    /// Target fraction of zero covariance entries.
    Taper { sparsity: f64 },
    /// Number of basis functions.
    LowRank { k: usize },
}

impl BackendSpec {
    /// Builds the backend for a site set.
    pub fn build(&self, s: &SiteSet) -> Result<LikelihoodBackend> {
        Ok(match *self {
            BackendSpec::Full => LikelihoodBackend::full(),
            BackendSpec::Vecchia { m } => LikelihoodBackend::vecchia(build_vecchia_plan(s, m.min(s.len() - 1).max(1))?),
            BackendSpec::Taper { sparsity } => {
                LikelihoodBackend::taper(TaperSpec::new(taper_range_for_sparsity(s, sparsity)?)?)
            }
            BackendSpec::LowRank { k } => LikelihoodBackend::low_rank(eigenbasis(s, k, &REFERENCE_BASIS_KERNEL)?),
        })
    }

    /// Short label used in file names and tables.
    pub fn label(&self) -> String {
        match *self {
            BackendSpec::Full => "full".into(),
            BackendSpec::Vecchia { m } => format!("vecchia-m{m}"),
            BackendSpec::Taper { sparsity } => format!("taper-s{sparsity}"),
            BackendSpec::LowRank { k } => format!("lowrank-k{k}"),
        }
    }

    /// From a backend name and its optional setting.
    pub fn from_parts(name: &str, setting: Option<&str>) -> Result<Self> {
        let num = |what: &str| -> Result<&str> {
            setting.ok_or_else(|| Error::invalid(format!("backend {name:?} needs a {what} setting")))
        };
        let bad = |v: &str| Error::invalid(format!("bad setting {v:?} for backend {name:?}"));
        let spec = match name {
            "full" => BackendSpec::Full,
            "vecchia" => {
                let v = num("conditioning size")?;
                BackendSpec::Vecchia { m: v.parse().map_err(|_| bad(v))? }
            }
            "taper" => {
                let v = num("sparsity")?;
                BackendSpec::Taper { sparsity: v.parse().map_err(|_| bad(v))? }
            }
            "lowrank" => {
                let v = num("rank")?;
                BackendSpec::LowRank { k: v.parse().map_err(|_| bad(v))? }
            }
            other => return Err(Error::invalid(format!("unknown backend {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BackendSpec::Vecchia { m: 0 } => Err(Error::invalid("Vecchia needs m ≥ 1")),
            BackendSpec::LowRank { k: 0 } => Err(Error::invalid("low-rank needs k ≥ 1")),
            BackendSpec::Taper { sparsity } if !(sparsity > 0.0 && sparsity < 1.0) => {
                Err(Error::invalid("taper sparsity must lie in (0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            BackendSpec::Full => write!(f, "full"),
            BackendSpec::Vecchia { m } => write!(f, "vecchia:{m}"),
            BackendSpec::Taper { sparsity } => write!(f, "taper:{sparsity}"),
            BackendSpec::LowRank { k } => write!(f, "lowrank:{k}"),
        }
    }
}

impl FromStr for BackendSpec {
    type Err = Error;

    /// `full`, `vecchia:<m>`, `taper:<sparsity>` or `lowrank:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.split_once(':') {
            Some((name, v)) => Self::from_parts(name.trim(), Some(v.trim())),
            None => Self::from_parts(s, None),
        }
    }
}

/// One simulation design point with its fitting settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub alpha: f64,
    pub rho: f64,
    pub nu: f64,
    pub n_test_fraction: f64,
    pub backends: Vec<BackendSpec>,
    pub mcmc: McmcConfig,
    pub n_repetitions: usize,
    pub seed: u64,
    /// Posterior states used for prediction.
    pub pred_draws: usize,
    /// Level of the credible intervals is 1 − alpha_star.
    pub alpha_star: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            n: 100,
            t: 50,
            alpha: 0.3,
            rho: 0.05,
            nu: 0.5,
            n_test_fraction: 0.25,
            backends: vec![BackendSpec::Full],
            mcmc: McmcConfig::default(),
            n_repetitions: 10,
            seed: 0,
            pred_draws: crate::prediction::DEFAULT_PREDICTIVE_DRAWS,
            alpha_star: 0.05,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || self.t < 1 {
            return Err(Error::invalid("need n ≥ 4 sites and T ≥ 1 replicates"));
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) || !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::invalid("rho and nu must be positive"));
        }
        if !(self.n_test_fraction > 0.0 && self.n_test_fraction < 1.0) {
            return Err(Error::invalid("holdout fraction must lie in (0, 1)"));
        }
        if self.backends.is_empty() {
            return Err(Error::invalid("at least one backend is required"));
        }
        for b in &self.backends {
            b.validate()?;
        }
        if !(self.alpha_star > 0.0 && self.alpha_star < 1.0) {
            return Err(Error::invalid("alpha_star must lie in (0, 1)"));
        }
        if self.pred_draws == 0 {
            return Err(Error::invalid("pred_draws must be positive"));
        }
        self.mcmc.validate()
    }

    /// Number of held-out sites.
    pub fn n_test(&self) -> usize {
        ((self.n as f64 * self.n_test_fraction).round() as usize).clamp(1, self.n - 2)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let cfg = Self::from_kv(&mut kv, false)?.remove(0);
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the scenario keys; with `grid` the design keys may be lists.
    fn from_kv(kv: &mut KeyValues, grid: bool) -> Result<Vec<Self>> {
        let d = Self::default();
        let list_or_one = |kv: &mut KeyValues, key: &str, default: f64| -> Result<Vec<f64>> {
            if grid {
                Ok(kv.take_list(key)?.unwrap_or_else(|| vec![default]))
            } else {
                Ok(vec![kv.take(key)?.unwrap_or(default)])
            }
        };
        let ns: Vec<usize> = if grid {
            kv.take_list("n")?.unwrap_or_else(|| vec![d.n])
        } else {
            vec![kv.take("n")?.unwrap_or(d.n)]
        };
        let ts: Vec<usize> = if grid {
            kv.take_list("T")?.unwrap_or_else(|| vec![d.t])
        } else {
            vec![kv.take("T")?.unwrap_or(d.t)]
        };
        let alphas = list_or_one(kv, "alpha", d.alpha)?;
        let rhos = list_or_one(kv, "rho", d.rho)?;
        let nus = list_or_one(kv, "nu", d.nu)?;
        let name: String = kv.take("name")?.unwrap_or(d.name.clone());
        let backends = match kv.entries.remove("backends") {
            Some(v) => v.split(',').map(|b| b.parse()).collect::<Result<Vec<BackendSpec>>>()?,
            None => d.backends.clone(),
        };
        let dm = McmcConfig::default();
        let mcmc = McmcConfig {
            n_iter: kv.take("n_iter")?.unwrap_or(dm.n_iter),
            adapt_every: kv.take("adapt_every")?.unwrap_or(dm.adapt_every),
            target_accept: kv.take("target_accept")?.unwrap_or(dm.target_accept),
            burn_in: kv.take("burn_in")?.unwrap_or(dm.burn_in),
            seed: 0,
            r_thin: kv.take("r_thin")?.unwrap_or(dm.r_thin),
            prior_only: false,
        };
        let base = Self {
            name,
            n_test_fraction: kv.take("holdout")?.unwrap_or(d.n_test_fraction),
            backends,
            mcmc,
            n_repetitions: kv.take("reps")?.unwrap_or(d.n_repetitions),
            seed: kv.take("seed")?.unwrap_or(d.seed),
            pred_draws: kv.take("pred_draws")?.unwrap_or(d.pred_draws),
            alpha_star: kv.take("alpha_star")?.unwrap_or(d.alpha_star),
            ..d
        };
        let multi = [ns.len(), ts.len(), alphas.len(), rhos.len(), nus.len()].iter().any(|&l| l > 1);
        let mut out = Vec::new();
        for &n in &ns {
            for &t in &ts {
                for &alpha in &alphas {
                    for &rho in &rhos {
                        for &nu in &nus {
                            let name = if multi {
                                format!("{}_n{n}_T{t}_a{alpha}_r{rho}_nu{nu}", base.name)
                            } else {
                                base.name.clone()
                            };
                            out.push(Self { name, n, t, alpha, rho, nu, ..base.clone() });
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Text form accepted by [`ScenarioConfig::parse`].
    pub fn to_config_text(&self) -> String {
        let backends: Vec<String> = self.backends.iter().map(|b| b.to_string()).collect();
        format!(
            "name = {}\nn = {}\nT = {}\nalpha = {:?}\nrho = {:?}\nnu = {:?}\nholdout = {:?}\nbackends = {}\n\
             n_iter = {}\nadapt_every = {}\ntarget_accept = {:?}\nburn_in = {:?}\nr_thin = {}\nreps = {}\nseed = {}\n\
             pred_draws = {}\nalpha_star = {:?}\n",
            self.name,
            self.n,
            self.t,
            self.alpha,
            self.rho,
            self.nu,
            self.n_test_fraction,
            backends.join(", "),
            self.mcmc.n_iter,
            self.mcmc.adapt_every,
            self.mcmc.target_accept,
            self.mcmc.burn_in,
            self.mcmc.r_thin,
            self.n_repetitions,
            self.seed,
            self.pred_draws,
            self.alpha_star
        )
    }
}

/// A grid of scenarios sharing fitting settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenarios: Vec<ScenarioConfig>,
    /// Number of cells evaluated concurrently.
    pub jobs: usize,
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let jobs = kv.take("jobs")?.unwrap_or(1usize).max(1);
        let scenarios = ScenarioConfig::from_kv(&mut kv, true)?;
        kv.finish()?;
        for s in &scenarios {
            s.validate()?;
        }
        Ok(Self { scenarios, jobs })
    }
}
