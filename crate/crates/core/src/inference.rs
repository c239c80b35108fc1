//! Random-walk Metropolis for (α, ρ, R_1..R_T) with log-adaptive proposals.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::correlation::MaternParams;
use crate::error::{Error, Result};
use crate::fields::{LevyDraws, ReplicateMatrix};
use crate::likelihood::{loglik_full, CopulaMargins, GaussianFactor, LikelihoodBackend};
use crate::marginal::Alpha;
use crate::sites::SiteSet;
use crate::special::levy_half_log_pdf;

/// Median of the Lévy(0, 1/2) law, the initial value of every R_t.
pub const LEVY_MEDIAN: f64 = 1.099;

/// Independent uniform priors on α and ρ; each R_t has the Lévy(0, 1/2) prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub alpha: (f64, f64),
    pub rho: (f64, f64),
}

impl Default for Priors {
    fn default() -> Self {
        Self { alpha: (0.0, 1.0), rho: (0.0, 0.5) }
    }
}

impl Priors {
    pub fn new(alpha: (f64, f64), rho: (f64, f64)) -> Result<Self> {
        for (name, (a, b)) in [("alpha", alpha), ("rho", rho)] {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::invalid(format!("{name} prior bounds must satisfy a < b, got ({a}, {b})")));
            }
        }
        if alpha.0 < 0.0 || rho.0 < 0.0 {
            return Err(Error::invalid("prior supports must lie in (0, ∞)"));
        }
        Ok(Self { alpha, rho })
    }

    /// Log prior density of the state (−∞ outside the support).
    pub fn log_density(&self, state: &McmcState) -> f64 {
        let mut lp = uniform_log_pdf(state.alpha, self.alpha) + uniform_log_pdf(state.rho, self.rho);
        for &r in &state.r {
            lp += if r > 0.0 { levy_half_log_pdf(r) } else { f64::NEG_INFINITY };
        }
        lp
    }
}

fn uniform_log_pdf(x: f64, (a, b): (f64, f64)) -> f64 {
    if x > a && x < b {
        -(b - a).ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// ln |dx/dη| for x = a + (b − a)·logistic(η).
fn logit_log_jacobian(x: f64, (a, b): (f64, f64)) -> f64 {
    (x - a).ln() + (b - x).ln() - (b - a).ln()
}

fn to_logit(x: f64, (a, b): (f64, f64)) -> f64 {
    let s = (x - a) / (b - a);
    s.ln() - (-s).ln_1p()
}

fn from_logit(eta: f64, (a, b): (f64, f64)) -> f64 {
    a + (b - a) / (1.0 + (-eta).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub adapt_every: usize,
    pub target_accept: f64,
    pub burn_in: f64,
    pub seed: u64,
    /// R_t draws are stored every `r_thin` iterations.
    pub r_thin: usize,
    /// Replace the likelihood by a constant and sample the prior.
    pub prior_only: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iter: 50_000,
            adapt_every: 200,
            target_accept: 0.44,
            burn_in: 0.5,
            seed: 0,
            r_thin: 50,
            prior_only: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.adapt_every == 0 || self.r_thin == 0 {
            return Err(Error::invalid("adapt_every and r_thin must be positive"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid(format!("target_accept must lie in (0, 1), got {}", self.target_accept)));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < 1.0) {
            return Err(Error::invalid(format!("burn_in must lie in [0, 1), got {}", self.burn_in)));
        }
        Ok(())
    }

    /// Number of burn-in iterations.
    pub fn burn_in_iters(&self) -> usize {
        (self.burn_in * self.n_iter as f64).floor() as usize
    }
}

/// A point of the parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcState {
    pub alpha: f64,
    pub rho: f64,
    pub r: Vec<f64>,
}

impl McmcState {
    pub fn initial(n_replicates: usize) -> Self {
        Self { alpha: 0.5, rho: 0.25, r: vec![LEVY_MEDIAN; n_replicates] }
    }
}

/// Acceptance rates per block, after burn-in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptRates {
    pub alpha: f64,
    pub rho: f64,
    pub r: Vec<f64>,
}

/// State of the proposal scales at the end of one adaptation batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRecord {
    pub iter: usize,
    pub rate_alpha: f64,
    pub rate_rho: f64,
    pub rate_r_mean: f64,
    pub log_sd_alpha: f64,
    pub log_sd_rho: f64,
    pub log_sd_r_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    /// Index k holds the state after iteration k; index 0 is the initial state.
    pub alpha_draws: Vec<f64>,
    pub rho_draws: Vec<f64>,
    /// T × (number of stored iterations).
    pub r_draws: DMatrix<f64>,
    pub r_draw_iters: Vec<usize>,
    pub accept_rates: AcceptRates,
    pub proposal_log_sd_history: Vec<AdaptationRecord>,
    pub burn_in_iters: usize,
    pub nu: f64,
    pub final_log_posterior: f64,
    pub walltime_sec: f64,
}

impl PosteriorChain {
    pub fn n_iter(&self) -> usize {
        self.alpha_draws.len() - 1
    }

    /// α draws after burn-in.
    pub fn alpha_post(&self) -> &[f64] {
        &self.alpha_draws[(self.burn_in_iters + 1).min(self.alpha_draws.len())..]
    }

    /// ρ draws after burn-in.
    pub fn rho_post(&self) -> &[f64] {
        &self.rho_draws[(self.burn_in_iters + 1).min(self.rho_draws.len())..]
    }

    /// Stored joint states (iteration, α, ρ, R) after burn-in.
    pub fn stored_states(&self) -> Vec<(usize, McmcState)> {
        self.r_draw_iters
            .iter()
            .enumerate()
            .filter(|(_, &it)| it > self.burn_in_iters || (self.n_iter() == 0 && it == 0))
            .map(|(j, &it)| {
                let r = self.r_draws.column(j).iter().copied().collect();
                (it, McmcState { alpha: self.alpha_draws[it], rho: self.rho_draws[it], r })
            })
            .collect()
    }

    /// CSV with header `iter,alpha,rho`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iter", "alpha", "rho"])?;
        for (k, (a, r)) in self.alpha_draws.iter().zip(&self.rho_draws).enumerate() {
            wr.write_record([k.to_string(), format!("{a:?}"), format!("{r:?}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Log posterior on the proposal scale: log-likelihood, priors and the
/// Jacobians of the logit/log reparameterizations.
pub fn log_posterior(
    state: &McmcState,
    u: &ReplicateMatrix,
    s: &SiteSet,
    nu: f64,
    backend: &LikelihoodBackend,
    priors: &Priors,
) -> Result<f64> {
    let prior = priors.log_density(state);
    if prior == f64::NEG_INFINITY || !(state.alpha < 1.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let alpha = Alpha::new(state.alpha)?;
    let p = MaternParams::new(state.rho, nu)?;
    let r = LevyDraws::new(state.r.clone())?;
    let ll = loglik_full(u, &r, alpha, s, &p, backend)?.loglik;
    Ok(ll + prior + reparam_log_jacobian(state, priors))
}

fn reparam_log_jacobian(state: &McmcState, priors: &Priors) -> f64 {
    logit_log_jacobian(state.alpha, priors.alpha)
        + logit_log_jacobian(state.rho, priors.rho)
        + state.r.iter().map(|r| r.ln()).sum::<f64>()
}

struct Sampler<'a> {
    u: &'a ReplicateMatrix,
    s: &'a SiteSet,
    nu: f64,
    backend: &'a LikelihoodBackend,
    priors: Priors,
    prior_only: bool,
    n: usize,
    state: McmcState,
    margins: Option<CopulaMargins>,
    factor: Option<Arc<GaussianFactor>>,
    z: Vec<f64>,
    jac: Vec<f64>,
    gp: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Sampler<'a> {
    fn log_post(&self) -> f64 {
        let ll: f64 = self.jac.iter().sum::<f64>() + self.gp.iter().sum::<f64>();
        ll + self.priors.log_density(&self.state) + reparam_log_jacobian(&self.state, &self.priors)
    }

    fn refresh_all(&mut self) -> Result<()> {
        if self.prior_only {
            return Ok(());
        }
        let margins = CopulaMargins::new(self.u, Alpha::new(self.state.alpha)?)?;
        let p = MaternParams::new(self.state.rho, self.nu)?;
        let factor = Arc::new(self.backend.factor(self.s, &p)?);
        for t in 0..self.state.r.len() {
            let zt = &mut self.z[t * self.n..(t + 1) * self.n];
            self.jac[t] = margins.transform_into(t, self.state.r[t], zt);
            self.gp[t] = factor.log_density(zt);
        }
        self.margins = Some(margins);
        self.factor = Some(factor);
        Ok(())
    }

    /// Returns whether the proposal was accepted.
    fn update_alpha(&mut self, eta_step: f64, log_u: f64) -> bool {
        let cur_lp = self.log_post();
        let old = self.state.alpha;
        let new = from_logit(to_logit(old, self.priors.alpha) + eta_step, self.priors.alpha);
        if !(new > self.priors.alpha.0 && new < self.priors.alpha.1 && new < 1.0) {
            return false;
        }
        if self.prior_only {
            self.state.alpha = new;
            let lp = self.log_post();
            if log_u < lp - cur_lp {
                return true;
            }
            self.state.alpha = old;
            return false;
        }
        let margins = match Alpha::new(new).and_then(|a| CopulaMargins::new(self.u, a)) {
            Ok(m) => m,
            Err(e) => {
                log::debug!("alpha proposal {new} rejected: {e}");
                return false;
            }
        };
        let factor = self.factor.clone().expect("factor initialized");
        let t_len = self.state.r.len();
        let mut z_new = vec![0.0; self.z.len()];
        let mut jac_new = vec![0.0; t_len];
        let mut gp_new = vec![0.0; t_len];
        for t in 0..t_len {
            let zt = &mut z_new[t * self.n..(t + 1) * self.n];
            jac_new[t] = margins.transform_into(t, self.state.r[t], zt);
            gp_new[t] = factor.log_density(zt);
        }
        let z_old = std::mem::replace(&mut self.z, z_new);
        let jac_old = std::mem::replace(&mut self.jac, jac_new);
        let gp_old = std::mem::replace(&mut self.gp, gp_new);
        self.state.alpha = new;
        let lp = self.log_post();
        if lp.is_finite() && log_u < lp - cur_lp {
            self.margins = Some(margins);
            true
        } else {
            self.z = z_old;
            self.jac = jac_old;
            self.gp = gp_old;
            self.state.alpha = old;
            false
        }
    }

    fn update_rho(&mut self, eta_step: f64, log_u: f64) -> bool {
        let cur_lp = self.log_post();
        let old = self.state.rho;
        let new = from_logit(to_logit(old, self.priors.rho) + eta_step, self.priors.rho);
        if !(new > self.priors.rho.0 && new < self.priors.rho.1) {
            return false;
        }
        self.state.rho = new;
        if self.prior_only || !self.backend.depends_on_range() {
            let lp = self.log_post();
            if log_u < lp - cur_lp {
                return true;
            }
            self.state.rho = old;
            return false;
        }
        let factor = match MaternParams::new(new, self.nu).and_then(|p| self.backend.factor(self.s, &p)) {
            Ok(f) => Arc::new(f),
            Err(e) => {
                log::debug!("rho proposal {new} rejected: {e}");
                self.state.rho = old;
                return false;
            }
        };
        let gp_new: Vec<f64> = (0..self.state.r.len())
            .map(|t| factor.log_density(&self.z[t * self.n..(t + 1) * self.n]))
            .collect();
        let gp_old = std::mem::replace(&mut self.gp, gp_new);
        let lp = self.log_post();
        if lp.is_finite() && log_u < lp - cur_lp {
            self.factor = Some(factor);
            true
        } else {
            self.gp = gp_old;
            self.state.rho = old;
            false
        }
    }

    fn update_r(&mut self, t: usize, log_step: f64, log_u: f64) -> bool {
        let cur_lp = self.log_post();
        let old = self.state.r[t];
        let new = old * log_step.exp();
        if !(new > 0.0 && new.is_finite()) {
            return false;
        }
        self.state.r[t] = new;
        if self.prior_only {
            let lp = self.log_post();
            if log_u < lp - cur_lp {
                return true;
            }
            self.state.r[t] = old;
            return false;
        }
        let margins = self.margins.as_ref().expect("margins initialized");
        let factor = self.factor.as_ref().expect("factor initialized");
        let range = t * self.n..(t + 1) * self.n;
        self.scratch.copy_from_slice(&self.z[range.clone()]);
        let (jac_old, gp_old) = (self.jac[t], self.gp[t]);
        let zt = &mut self.z[range.clone()];
        self.jac[t] = margins.transform_into(t, new, zt);
        self.gp[t] = factor.log_density(zt);
        let lp = self.log_post();
        if lp.is_finite() && log_u < lp - cur_lp {
            true
        } else {
            self.z[range].copy_from_slice(&self.scratch);
            self.jac[t] = jac_old;
            self.gp[t] = gp_old;
            self.state.r[t] = old;
            false
        }
    }
}

/// Runs the sampler from the default initial state.
pub fn run_mcmc(
    u: &ReplicateMatrix,
    backend: &LikelihoodBackend,
    s: &SiteSet,
    nu: f64,
    cfg: &McmcConfig,
    priors: &Priors,
) -> Result<PosteriorChain> {
    run_mcmc_from(u, backend, s, nu, cfg, priors, McmcState::initial(u.n_replicates()))
}

/// Runs the sampler from a given initial state.
///
/// Each iteration updates α, then ρ, then R_1..R_T, with Gaussian random
/// walks on logit(α), logit(ρ/ρ_max) and log R_t. Every `adapt_every`
/// iterations during burn-in each block's log proposal sd moves by
/// b^{-1/2}·(rate − target) for batch b; the scales are frozen afterwards.
pub fn run_mcmc_from(
    u: &ReplicateMatrix,
    backend: &LikelihoodBackend,
    s: &SiteSet,
    nu: f64,
    cfg: &McmcConfig,
    priors: &Priors,
    init: McmcState,
) -> Result<PosteriorChain> {
    cfg.validate()?;
    if u.n_sites() != s.len() {
        return Err(Error::invalid(format!("data have {} sites, site set has {}", u.n_sites(), s.len())));
    }
    let t_len = u.n_replicates();
    if init.r.len() != t_len {
        return Err(Error::invalid("initial state has the wrong number of Lévy scales"));
    }
    MaternParams::new(init.rho, nu)?;
    let n = s.len();
    let mut sm = Sampler {
        u,
        s,
        nu,
        backend,
        priors: *priors,
        prior_only: cfg.prior_only,
        n,
        state: init,
        margins: None,
        factor: None,
        z: vec![0.0; n * t_len],
        jac: vec![0.0; t_len],
        gp: vec![0.0; t_len],
        scratch: vec![0.0; n],
    };
    let init_err = |e: Error| Error::Initialization(format!("initial state is not evaluable: {e}"));
    if !(sm.state.alpha < 1.0) {
        return Err(Error::Initialization("initial α must be below 1".into()));
    }
    sm.refresh_all().map_err(init_err)?;
    if !sm.log_post().is_finite() {
        return Err(Error::Initialization("initial log-posterior is not finite".into()));
    }

    let burn = cfg.burn_in_iters();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut lsd_a, mut lsd_rho) = (0.5f64.ln(), 0.5f64.ln());
    let mut lsd_r = vec![0.5f64.ln(); t_len];
    let (mut batch_a, mut batch_rho) = (0usize, 0usize);
    let mut batch_r = vec![0usize; t_len];
    let (mut post_a, mut post_rho) = (0usize, 0usize);
    let mut post_r = vec![0usize; t_len];
    let mut history = Vec::new();
    let mut n_batches = 0usize;

    let mut alpha_draws = Vec::with_capacity(cfg.n_iter + 1);
    let mut rho_draws = Vec::with_capacity(cfg.n_iter + 1);
    let mut r_cols: Vec<f64> = Vec::new();
    let mut r_draw_iters = Vec::new();
    alpha_draws.push(sm.state.alpha);
    rho_draws.push(sm.state.rho);
    r_cols.extend_from_slice(&sm.state.r);
    r_draw_iters.push(0);

    let start = Instant::now();
    for iter in 1..=cfg.n_iter {
        let step: f64 = rng.sample(StandardNormal);
        let lu = rng.random::<f64>().ln();
        let acc = sm.update_alpha(lsd_a.exp() * step, lu);
        batch_a += acc as usize;
        if iter > burn {
            post_a += acc as usize;
        }

        let step: f64 = rng.sample(StandardNormal);
        let lu = rng.random::<f64>().ln();
        let acc = sm.update_rho(lsd_rho.exp() * step, lu);
        batch_rho += acc as usize;
        if iter > burn {
            post_rho += acc as usize;
        }

        for t in 0..t_len {
            let step: f64 = rng.sample(StandardNormal);
            let lu = rng.random::<f64>().ln();
            let acc = sm.update_r(t, lsd_r[t].exp() * step, lu);
            batch_r[t] += acc as usize;
            if iter > burn {
                post_r[t] += acc as usize;
            }
        }

        if iter % cfg.adapt_every == 0 && iter <= burn {
            n_batches += 1;
            let gamma = (n_batches as f64).powf(-0.5);
            let m = cfg.adapt_every as f64;
            let rate_a = batch_a as f64 / m;
            let rate_rho = batch_rho as f64 / m;
            lsd_a += gamma * (rate_a - cfg.target_accept);
            lsd_rho += gamma * (rate_rho - cfg.target_accept);
            let mut rate_r_sum = 0.0;
            for t in 0..t_len {
                let rate = batch_r[t] as f64 / m;
                rate_r_sum += rate;
                lsd_r[t] += gamma * (rate - cfg.target_accept);
            }
            history.push(AdaptationRecord {
                iter,
                rate_alpha: rate_a,
                rate_rho,
                rate_r_mean: rate_r_sum / t_len.max(1) as f64,
                log_sd_alpha: lsd_a,
                log_sd_rho: lsd_rho,
                log_sd_r_mean: lsd_r.iter().sum::<f64>() / t_len.max(1) as f64,
            });
            batch_a = 0;
            batch_rho = 0;
            batch_r.iter_mut().for_each(|b| *b = 0);
        } else if iter % cfg.adapt_every == 0 {
            batch_a = 0;
            batch_rho = 0;
            batch_r.iter_mut().for_each(|b| *b = 0);
        }

        alpha_draws.push(sm.state.alpha);
        rho_draws.push(sm.state.rho);
        if iter % cfg.r_thin == 0 {
            r_cols.extend_from_slice(&sm.state.r);
            r_draw_iters.push(iter);
        }
    }
    let walltime_sec = start.elapsed().as_secs_f64();

    let n_post = (cfg.n_iter - burn.min(cfg.n_iter)) as f64;
    let rate = |c: usize| if n_post > 0.0 { c as f64 / n_post } else { f64::NAN };
    let accept_rates =
        AcceptRates { alpha: rate(post_a), rho: rate(post_rho), r: post_r.iter().map(|&c| rate(c)).collect() };
    let r_draws = DMatrix::from_vec(t_len, r_draw_iters.len(), r_cols);
    Ok(PosteriorChain {
        alpha_draws,
        rho_draws,
        r_draws,
        r_draw_iters,
        accept_rates,
        proposal_log_sd_history: history,
        burn_in_iters: burn,
        nu,
        final_log_posterior: sm.log_post(),
        walltime_sec,
    })
}

/// Batch-means standard error with batch size ⌊√N⌋.
pub fn batch_means_se(draws: &[f64]) -> Result<f64> {
    let n = draws.len();
    if n < 100 {
        return Err(Error::invalid(format!("batch means need at least 100 draws, got {n}")));
    }
    let b = (n as f64).sqrt().floor() as usize;
    let a = n / b;
    let means: Vec<f64> = draws[n - a * b..].chunks(b).map(|c| c.iter().sum::<f64>() / b as f64).collect();
    let mean = means.iter().sum::<f64>() / a as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (a - 1) as f64;
    Ok(var.sqrt() / (a as f64).sqrt())
}

/// Sample quantile with linear interpolation between order statistics
/// (type 7). `sorted` must be in ascending order.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean computed about the first value, exact for constant input.
fn mean(x: &[f64]) -> f64 {
    let x0 = x[0];
    x0 + x.iter().map(|v| v - x0).sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Batch-means standard error; absent for chains shorter than 100.
    pub bm_se: Option<f64>,
}

pub fn summarize_draws(draws: &[f64], level: f64) -> Result<ParamSummary> {
    if draws.is_empty() {
        return Err(Error::invalid("no draws to summarize"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("credible level must lie in (0, 1), got {level}")));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(ParamSummary {
        mean: mean(draws),
        median: quantile_type7(&sorted, 0.5),
        ci_low: quantile_type7(&sorted, tail),
        ci_high: quantile_type7(&sorted, 1.0 - tail),
        bm_se: batch_means_se(draws).ok(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub alpha: ParamSummary,
    pub rho: ParamSummary,
    pub accept_rates: AcceptRates,
    pub walltime_sec: f64,
}

/// Posterior means, medians and equal-tailed intervals after burn-in.
pub fn summarize(chain: &PosteriorChain, level: f64) -> Result<ChainSummary> {
    let (a, r) = if chain.n_iter() == 0 {
        (&chain.alpha_draws[..], &chain.rho_draws[..])
    } else {
        (chain.alpha_post(), chain.rho_post())
    };
    Ok(ChainSummary {
        alpha: summarize_draws(a, level)?,
        rho: summarize_draws(r, level)?,
        accept_rates: chain.accept_rates.clone(),
        walltime_sec: chain.walltime_sec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::simulate_lrsm;
    use crate::sites::sample_uniform_sites;
    use rand_distr::{Distribution, Normal};

    fn small_problem(seed: u64) -> (SiteSet, ReplicateMatrix) {
        let s = sample_uniform_sites(15, seed).unwrap();
        let p = MaternParams::new(0.1, 0.5).unwrap();
        let sim = simulate_lrsm(&s, &p, Alpha::new(0.4).unwrap(), 6, seed).unwrap();
        (s, sim.u)
    }

    #[test]
    fn zero_iterations_gives_initial_state() {
        let (s, u) = small_problem(1);
        let cfg = McmcConfig { n_iter: 0, ..Default::default() };
        let ch = run_mcmc(&u, &LikelihoodBackend::full(), &s, 0.5, &cfg, &Priors::default()).unwrap();
        assert_eq!(ch.alpha_draws, vec![0.5]);
        assert_eq!(ch.rho_draws, vec![0.25]);
        assert_eq!(ch.r_draws.ncols(), 1);
        assert!(ch.r_draws.iter().all(|&r| r == LEVY_MEDIAN));
        let sm = summarize(&ch, 0.95).unwrap();
        assert_eq!(sm.alpha.mean, 0.5);
    }

    #[test]
    fn log_posterior_support_and_consistency() {
        let (s, u) = small_problem(2);
        let b = LikelihoodBackend::full();
        let pr = Priors::default();
        let mut st = McmcState::initial(6);
        st.alpha = 1.2;
        assert_eq!(log_posterior(&st, &u, &s, 0.5, &b, &pr).unwrap(), f64::NEG_INFINITY);
        st.alpha = -0.1;
        assert_eq!(log_posterior(&st, &u, &s, 0.5, &b, &pr).unwrap(), f64::NEG_INFINITY);
        st.alpha = 0.4;
        st.rho = 0.6;
        assert_eq!(log_posterior(&st, &u, &s, 0.5, &b, &pr).unwrap(), f64::NEG_INFINITY);

        // the sampler's incrementally tracked log posterior agrees with a fresh evaluation
        let cfg = McmcConfig { n_iter: 50, adapt_every: 10, seed: 4, ..Default::default() };
        let ch = run_mcmc(&u, &b, &s, 0.5, &cfg, &pr).unwrap();
        assert_eq!(*ch.r_draw_iters.last().unwrap(), 50);
        let fin = McmcState {
            alpha: ch.alpha_draws[50],
            rho: ch.rho_draws[50],
            r: ch.r_draws.column(ch.r_draws.ncols() - 1).iter().copied().collect(),
        };
        let lp = log_posterior(&fin, &u, &s, 0.5, &b, &pr).unwrap();
        assert!((lp - ch.final_log_posterior).abs() < 1e-9 * lp.abs().max(1.0), "{lp} {}", ch.final_log_posterior);
    }

    #[test]
    fn tiny_alpha_matches_gaussian_copula_posterior() {
        let (s, u) = small_problem(3);
        let b = LikelihoodBackend::full();
        let pr = Priors::default();
        let mut st = McmcState::initial(6);
        st.alpha = 1e-8;
        let lp = log_posterior(&st, &u, &s, 0.5, &b, &pr).unwrap();
        // Gaussian-copula oracle: α = 0 likelihood plus the same prior terms
        let ll0 = loglik_full(
            &u,
            &LevyDraws::new(st.r.clone()).unwrap(),
            Alpha::new(0.0).unwrap(),
            &s,
            &MaternParams::new(st.rho, 0.5).unwrap(),
            &b,
        )
        .unwrap()
        .loglik;
        let want = ll0 + pr.log_density(&st) + reparam_log_jacobian(&st, &pr);
        assert!((lp - want).abs() < 1e-4, "{lp} {want}");
    }

    #[test]
    fn same_seed_same_chain() {
        let (s, u) = small_problem(5);
        let cfg = McmcConfig { n_iter: 40, adapt_every: 10, seed: 9, ..Default::default() };
        let b = LikelihoodBackend::full();
        let a = run_mcmc(&u, &b, &s, 0.5, &cfg, &Priors::default()).unwrap();
        let c = run_mcmc(&u, &b, &s, 0.5, &cfg, &Priors::default()).unwrap();
        assert_eq!(a.alpha_draws, c.alpha_draws);
        assert_eq!(a.rho_draws, c.rho_draws);
        assert_eq!(a.r_draws, c.r_draws);
        assert!(a.alpha_draws.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(a.rho_draws.iter().all(|&x| x > 0.0 && x < 0.5));
        assert!(a.r_draws.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn adaptation_freezes_after_burn_in() {
        let (s, u) = small_problem(6);
        let cfg = McmcConfig { n_iter: 100, adapt_every: 10, burn_in: 0.5, seed: 1, ..Default::default() };
        let ch = run_mcmc(&u, &LikelihoodBackend::full(), &s, 0.5, &cfg, &Priors::default()).unwrap();
        assert_eq!(ch.proposal_log_sd_history.len(), 5);
        assert!(ch.proposal_log_sd_history.iter().all(|h| h.iter <= 50));
    }

    #[test]
    fn prior_only_sampler_recovers_uniform_alpha() {
        let (s, u) = small_problem(7);
        let cfg = McmcConfig { n_iter: 100_000, burn_in: 0.2, prior_only: true, seed: 3, ..Default::default() };
        let ch = run_mcmc(&u, &LikelihoodBackend::full(), &s, 0.5, &cfg, &Priors::default()).unwrap();
        let mut d: Vec<f64> = ch.alpha_post().iter().step_by(8).copied().collect();
        d.sort_by(f64::total_cmp);
        let n = d.len() as f64;
        let ks = d
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(n >= 1e4);
        assert!(ks < 1.63 / n.sqrt(), "KS {ks}");
    }

    #[test]
    fn batch_means_cases() {
        assert!(batch_means_se(&[1.0; 99]).is_err());
        assert_eq!(batch_means_se(&[2.5; 400]).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let iid: Vec<f64> = (0..10_000).map(|_| nrm.sample(&mut rng)).collect();
        let se = batch_means_se(&iid).unwrap();
        assert!((se / 0.01 - 1.0).abs() < 0.3, "{se}");
        let mut ar = vec![0.0; 10_000];
        for i in 1..ar.len() {
            ar[i] = 0.9 * ar[i - 1] + (1.0f64 - 0.81).sqrt() * nrm.sample(&mut rng);
        }
        assert!(batch_means_se(&ar).unwrap() > se);
    }

    #[test]
    fn summary_cases() {
        let c = summarize_draws(&[0.3; 200], 0.95).unwrap();
        assert_eq!((c.mean, c.median, c.ci_low, c.ci_high), (0.3, 0.3, 0.3, 0.3));
        let sym: Vec<f64> = (-500..=500).map(|i| i as f64 / 100.0).collect();
        let s = summarize_draws(&sym, 0.95).unwrap();
        assert!((s.mean - s.median).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let unif: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let s = summarize_draws(&unif, 0.95).unwrap();
        assert!((s.ci_low - 0.025).abs() < 0.005 && (s.ci_high - 0.975).abs() < 0.005);
        assert_eq!(quantile_type7(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
    }

    #[test]
    fn chain_csv_header() {
        let (s, u) = small_problem(8);
        let cfg = McmcConfig { n_iter: 3, adapt_every: 1, ..Default::default() };
        let ch = run_mcmc(&u, &LikelihoodBackend::full(), &s, 0.5, &cfg, &Priors::default()).unwrap();
        let mut buf = Vec::new();
        ch.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,alpha,rho\n0,0.5,0.25\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
