//! Empirical tail dependence, the max-stability test and per-site GEV fits.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ReplicateMatrix, Scale};
use crate::inference::quantile_type7;
use crate::optim::nelder_mead;
use crate::sites::SiteSet;

/// Default half-width of the distance window for pooling site pairs.
pub const DEFAULT_LAG_TOL: f64 = 0.02;

/// Below this |ξ| the Gumbel formulas are used.
pub const GUMBEL_XI_EPS: f64 = 1e-8;

const PIT_CLAMP: f64 = 1e-12;

/// ln of the smallest positive subnormal.
const MIN_LN: f64 = -744.44;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiEstimate {
    pub u_grid: Vec<f64>,
    pub chi_hat: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Bootstrap standard deviation of each estimate.
    pub boot_se: Vec<f64>,
    pub lag_h: f64,
    pub lag_tol: f64,
    pub n_pairs: usize,
}

impl ChiEstimate {
    /// CSV with header `u,chi,lo,hi`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["u", "chi", "lo", "hi"])?;
        for i in 0..self.u_grid.len() {
            wr.write_record([
                format!("{:?}", self.u_grid[i]),
                format!("{:?}", self.chi_hat[i]),
                format!("{:?}", self.ci_low[i]),
                format!("{:?}", self.ci_high[i]),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Per-site ranks scaled to (0, 1), with ties given their average rank.
fn pseudo_uniforms(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank / (n as f64 + 1.0);
        }
        i = j + 1;
    }
    out
}

/// Pooled joint and marginal exceedance counts of one threshold over the
/// given replicate indices.
fn chi_ratio(ranks: &DMatrix<f64>, pairs: &[(usize, usize)], reps: &[usize], u: f64) -> Option<f64> {
    let (mut joint, mut marg) = (0usize, 0usize);
    for &t in reps {
        for &(i, j) in pairs {
            let (a, b) = (ranks[(i, t)] > u, ranks[(j, t)] > u);
            joint += (a && b) as usize;
            marg += a as usize + b as usize;
        }
    }
    (marg > 0).then(|| 2.0 * joint as f64 / marg as f64)
}

/// Pooled empirical χ_u over all site pairs whose distance is within `tol`
/// of `h`, with percentile bootstrap bands from resampled replicates.
///
/// The data are converted to per-site ranks first, so the estimate only
/// depends on the copula. The denominator is the pooled marginal
/// exceedance count, which equals (1 − u)·T up to rank discretization.
pub fn empirical_chi(
    u: &ReplicateMatrix,
    s: &SiteSet,
    h: f64,
    tol: f64,
    u_grid: &[f64],
    n_boot: usize,
    seed: u64,
) -> Result<ChiEstimate> {
    if u.n_sites() != s.len() {
        return Err(Error::invalid("site count does not match the data"));
    }
    let t_len = u.n_replicates();
    if t_len < 20 {
        return Err(Error::invalid(format!("need at least 20 replicates, got {t_len}")));
    }
    if !(tol >= 0.0) || !(h >= 0.0) {
        return Err(Error::invalid("lag and window must be non-negative"));
    }
    if u_grid.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::invalid("thresholds must lie in (0, 1)"));
    }
    let n = s.len();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if (s.distance(i, j) - h).abs() <= tol {
                pairs.push((i, j));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::invalid(format!("no site pairs at distance {h} ± {tol}")));
    }
    let mut ranks = DMatrix::zeros(n, t_len);
    for i in 0..n {
        let row: Vec<f64> = (0..t_len).map(|t| u.get(i, t)).collect();
        for (t, r) in pseudo_uniforms(&row).into_iter().enumerate() {
            ranks[(i, t)] = r;
        }
    }
    let all: Vec<usize> = (0..t_len).collect();
    let mut chi_hat = Vec::with_capacity(u_grid.len());
    for &q in u_grid {
        let c = chi_ratio(&ranks, &pairs, &all, q)
            .ok_or_else(|| Error::invalid(format!("no exceedances of u = {q} with {t_len} replicates")))?;
        chi_hat.push(c);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot = vec![Vec::with_capacity(n_boot); u_grid.len()];
    let mut reps = vec![0usize; t_len];
    for _ in 0..n_boot {
        for r in reps.iter_mut() {
            *r = rng.random_range(0..t_len);
        }
        for (k, &q) in u_grid.iter().enumerate() {
            boot[k].push(chi_ratio(&ranks, &pairs, &reps, q).unwrap_or(0.0));
        }
    }
    let (mut lo, mut hi, mut se) = (Vec::new(), Vec::new(), Vec::new());
    for (k, b) in boot.iter_mut().enumerate() {
        if b.is_empty() {
            lo.push(chi_hat[k]);
            hi.push(chi_hat[k]);
            se.push(0.0);
            continue;
        }
        b.sort_by(f64::total_cmp);
        lo.push(quantile_type7(b, 0.025).min(chi_hat[k]));
        hi.push(quantile_type7(b, 0.975).max(chi_hat[k]));
        let m = b.iter().sum::<f64>() / b.len() as f64;
        let v = b.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b.len().max(2) - 1) as f64;
        se.push(v.sqrt());
    }
    Ok(ChiEstimate {
        u_grid: u_grid.to_vec(),
        chi_hat,
        ci_low: lo,
        ci_high: hi,
        boot_se: se,
        lag_h: h,
        lag_tol: tol,
        n_pairs: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !(mu.is_finite() && xi.is_finite() && sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("invalid GEV parameters ({mu}, {sigma}, {xi})")));
        }
        Ok(Self { mu, sigma, xi })
    }
}

/// ln(1 + ξw) and (1 + ξw)^{-1/ξ}, or None outside the support.
fn gev_terms(z: f64, p: &GevParams) -> Option<(f64, f64)> {
    let w = (z - p.mu) / p.sigma;
    if p.xi.abs() < GUMBEL_XI_EPS {
        return Some((w, (-w).exp()));
    }
    let a = p.xi * w;
    if a <= -1.0 {
        return None;
    }
    let l = a.ln_1p();
    Some((l, (-l / p.xi).exp()))
}

pub fn gev_cdf(z: f64, p: &GevParams) -> f64 {
    match gev_terms(z, p) {
        Some((_, tpow)) => (-tpow).exp(),
        None if p.xi > 0.0 => 0.0,
        None => 1.0,
    }
}

pub fn gev_quantile(q: f64, p: &GevParams) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("probability must lie in (0, 1), got {q}")));
    }
    let y = -(-q.ln()).ln();
    if p.xi.abs() < GUMBEL_XI_EPS {
        return Ok(p.mu + p.sigma * y);
    }
    Ok(p.mu + p.sigma * (p.xi * y).exp_m1() / p.xi)
}

/// Log-density; −∞ outside the support.
pub fn gev_logpdf(z: f64, p: &GevParams) -> f64 {
    match gev_terms(z, p) {
        Some((l, tpow)) if p.xi.abs() < GUMBEL_XI_EPS => -p.sigma.ln() - l - tpow,
        Some((l, tpow)) => -p.sigma.ln() - (1.0 + 1.0 / p.xi) * l - tpow,
        None => f64::NEG_INFINITY,
    }
}

/// Maximum-likelihood GEV fit by Nelder–Mead on (μ, ln σ, ξ).
///
/// The default start is the Gumbel moment fit with ξ = 0.1.
pub fn gev_fit_mle(maxima: &[f64], init: Option<GevParams>) -> Result<GevParams> {
    let n = maxima.len();
    if n < 20 {
        return Err(Error::invalid(format!("GEV fit needs at least 20 maxima, got {n}")));
    }
    if maxima.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("maxima must be finite"));
    }
    let mean = maxima.iter().sum::<f64>() / n as f64;
    let sd = (maxima.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if !(sd > 0.0) {
        return Err(Error::invalid("maxima are constant"));
    }
    let start = init.unwrap_or_else(|| {
        let sigma = sd * 6f64.sqrt() / std::f64::consts::PI;
        GevParams { mu: mean - 0.577_215_664_901_532_9 * sigma, sigma, xi: 0.1 }
    });
    // work in standardized units so the tolerances are scale free
    let nll = |x: &[f64]| {
        let p = GevParams { mu: x[0], sigma: x[1].exp(), xi: x[2] };
        -maxima.iter().map(|&z| gev_logpdf((z - mean) / sd, &p)).sum::<f64>()
    };
    let x0 = [(start.mu - mean) / sd, (start.sigma / sd).ln(), start.xi];
    let rescale = |x: &[f64]| GevParams { mu: mean + sd * x[0], sigma: sd * x[1].exp(), xi: x[2] };
    match nelder_mead(nll, &x0, &[0.2, 0.2, 0.1], 1e-11, 500 * 3) {
        Ok(m) => Ok(rescale(&m.x)),
        Err(Error::Estimation { best, iterations }) => {
            let p = rescale(&best);
            Err(Error::Estimation { best: vec![p.mu, p.sigma, p.xi], iterations })
        }
        Err(e) => Err(e),
    }
}

/// Site-wise probability integral transform, clamped to
/// [1e−12, 1 − 1e−12].
pub fn pit_to_uniform(maxima: &ReplicateMatrix, fits: &[GevParams]) -> Result<ReplicateMatrix> {
    if fits.len() != maxima.n_sites() {
        return Err(Error::invalid(format!("{} fits for {} sites", fits.len(), maxima.n_sites())));
    }
    let x = maxima.values();
    let out = DMatrix::from_fn(x.nrows(), x.ncols(), |i, t| gev_cdf(x[(i, t)], &fits[i]).clamp(PIT_CLAMP, 1.0 - PIT_CLAMP));
    ReplicateMatrix::new(out, Scale::UniformU)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Limiting null distribution of A² (Marsaglia and Marsaglia, 2004).
fn ad_inf_cdf(z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z < 2.0 {
        (-1.233_714_1 / z).exp() / z.sqrt()
            * (2.000_12
                + (0.247_105 - (0.064_982_1 - (0.034_796_2 - (0.011_672 - 0.001_686_91 * z) * z) * z) * z) * z)
    } else {
        (-(1.077_6 - (2.306_95 - (0.434_24 - (0.082_433 - (0.008_056 - 0.000_314_6 * z) * z) * z) * z) * z).exp())
            .exp()
    }
}

fn ad_statistic(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    let nf = n as f64;
    let mut s = 0.0;
    for i in 0..n {
        let lo = sorted[i].ln().max(MIN_LN);
        let hi = (-sorted[n - 1 - i]).ln_1p().max(MIN_LN);
        s += (2 * i + 1) as f64 * (lo + hi);
    }
    -nf - s / nf
}

/// Anderson–Darling test of PIT values against Uniform(0, 1).
pub fn anderson_darling_gof(u: &[f64]) -> Result<AdResult> {
    if u.len() < 8 {
        return Err(Error::invalid(format!("Anderson–Darling needs at least 8 values, got {}", u.len())));
    }
    if u.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
        return Err(Error::invalid("PIT values must lie in [0, 1]"));
    }
    let mut sorted = u.to_vec();
    sorted.sort_by(f64::total_cmp);
    let ties = sorted.windows(2).filter(|w| (w[1] - w[0]).abs() < 1e-12).count();
    if ties > 0 {
        log::warn!("{ties} tied PIT values in the Anderson–Darling test");
    }
    let a2 = ad_statistic(&sorted);
    Ok(AdResult { statistic: a2, p_value: (1.0 - ad_inf_cdf(a2)).clamp(0.0, 1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxStabTestResult {
    pub ad_statistic: f64,
    pub p_value: f64,
    pub n_bootstrap: usize,
    pub gumbel_location_hat: f64,
}

/// Closed-form location MLE of a unit-scale Gumbel sample.
fn gumbel_location_mle(y: &[f64]) -> f64 {
    let mut v: Vec<f64> = y.to_vec();
    v.sort_by(f64::total_cmp);
    // ln mean e^{-y}, shifted by the minimum for stability
    let m = v[0];
    let s = v.iter().map(|&yi| (-(yi - m)).exp()).sum::<f64>() / v.len() as f64;
    m - s.ln()
}

fn gumbel_ad(y: &[f64], mu: f64) -> f64 {
    let mut u: Vec<f64> = y.iter().map(|&yi| (-(-(yi - mu)).exp()).exp()).collect();
    u.sort_by(f64::total_cmp);
    ad_statistic(&u)
}

/// Test of the max-stable null on a subset of sites.
///
/// Margins are mapped to unit Fréchet, x = −1/ln u, and the statistic
/// X*_t = max over the subset of ln x_t is compared with a unit-scale
/// Gumbel by the Anderson–Darling distance after fitting its location.
/// The p-value comes from a parametric bootstrap: replicate-size samples
/// drawn from the fitted Gumbel, with the location refitted every time.
pub fn max_stability_test(
    u: &ReplicateMatrix,
    subset: &[usize],
    n_bootstrap: usize,
    seed: u64,
) -> Result<MaxStabTestResult> {
    if n_bootstrap == 0 {
        return Err(Error::invalid("n_bootstrap must be positive"));
    }
    if subset.len() < 2 {
        return Err(Error::invalid("the site subset needs at least two sites"));
    }
    if subset.iter().any(|&i| i >= u.n_sites()) {
        return Err(Error::invalid("site index out of range"));
    }
    let t_len = u.n_replicates();
    if t_len < 20 {
        return Err(Error::invalid(format!("need at least 20 replicates, got {t_len}")));
    }
    let mut clamped = 0;
    let y: Vec<f64> = (0..t_len)
        .map(|t| {
            subset
                .iter()
                .map(|&i| {
                    let mut v = u.get(i, t);
                    if v >= 1.0 - PIT_CLAMP {
                        v = 1.0 - PIT_CLAMP;
                        clamped += 1;
                    }
                    let v = v.max(PIT_CLAMP);
                    // ln x = −ln(−ln u)
                    -(-v.ln()).ln()
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} uniform values at 1 clamped before the Fréchet transform");
    }
    let mu = gumbel_location_mle(&y);
    let a2 = gumbel_ad(&y, mu);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exceed = 0usize;
    let mut yb = vec![0.0; t_len];
    for _ in 0..n_bootstrap {
        for v in yb.iter_mut() {
            let e: f64 = rng.random::<f64>();
            *v = mu - (-(e.max(f64::MIN_POSITIVE)).ln()).ln();
        }
        let mb = gumbel_location_mle(&yb);
        if gumbel_ad(&yb, mb) >= a2 {
            exceed += 1;
        }
    }
    Ok(MaxStabTestResult {
        ad_statistic: a2,
        p_value: exceed as f64 / n_bootstrap as f64,
        n_bootstrap,
        gumbel_location_hat: mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::MaternParams;
    use crate::fields::simulate_lrsm;
    use crate::marginal::{chi_limit, Alpha};
    use crate::sites::sample_uniform_sites;

    fn unif_matrix(n: usize, t: usize, seed: u64) -> ReplicateMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = DMatrix::from_fn(n, t, |_, _| rng.random::<f64>().max(1e-300));
        ReplicateMatrix::new(v, Scale::UniformU).unwrap()
    }

    fn line_sites(n: usize, step: f64) -> SiteSet {
        SiteSet::new((0..n).map(|i| [i as f64 * step, 0.0]).collect()).unwrap()
    }

    #[test]
    fn chi_of_identical_sites_is_one() {
        let base = unif_matrix(1, 200, 1);
        let v = DMatrix::from_fn(4, 200, |_, t| base.get(0, t));
        let u = ReplicateMatrix::new(v, Scale::UniformU).unwrap();
        let c = empirical_chi(&u, &line_sites(4, 0.1), 0.1, 0.01, &[0.5, 0.9, 0.95], 50, 3).unwrap();
        assert_eq!(c.chi_hat, vec![1.0, 1.0, 1.0]);
        assert_eq!(c.n_pairs, 3);
    }

    #[test]
    fn chi_of_independent_sites() {
        let u = unif_matrix(6, 500, 2);
        let c = empirical_chi(&u, &line_sites(6, 0.1), 0.1, 0.01, &[0.8, 0.9], 300, 4).unwrap();
        for k in 0..2 {
            let want = 1.0 - c.u_grid[k];
            assert!(c.ci_low[k] <= want && want <= c.ci_high[k], "{c:?}");
            assert!(c.ci_low[k] <= c.chi_hat[k] && c.chi_hat[k] <= c.ci_high[k]);
        }
    }

    #[test]
    fn chi_errors() {
        let u = unif_matrix(3, 30, 2);
        assert!(empirical_chi(&u, &line_sites(3, 0.1), 0.5, 0.01, &[0.9], 10, 0).is_err());
        let short = unif_matrix(3, 10, 2);
        assert!(empirical_chi(&short, &line_sites(3, 0.1), 0.1, 0.01, &[0.9], 10, 0).is_err());
    }

    #[test]
    fn chi_is_rank_invariant() {
        let u = unif_matrix(5, 100, 7);
        let mut w = u.values().clone();
        w.iter_mut().for_each(|v| *v = (*v * 3.0).exp());
        let x = ReplicateMatrix::new(w, Scale::RawX).unwrap();
        let s = line_sites(5, 0.1);
        let a = empirical_chi(&u, &s, 0.2, 0.01, &[0.7, 0.9], 40, 1).unwrap();
        let b = empirical_chi(&x, &s, 0.2, 0.01, &[0.7, 0.9], 40, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chi_matches_direct_tail_probability_for_dependent_lrsm() {
        // pairs at one lag of a dependent LRSM field; the oracle is the
        // finite-u ratio Pr(both > u)/(1 − u) computed from a large
        // independent bivariate simulation with the exact marginal law
        let alpha = Alpha::new(0.7).unwrap();
        let p = MaternParams::new(0.2, 0.5).unwrap();
        let s = line_sites(2, 0.1);
        let big = simulate_lrsm(&s, &p, alpha, 400_000, 11).unwrap();
        let (mut joint, q) = (0usize, 0.95);
        for t in 0..big.u.n_replicates() {
            joint += (big.u.get(0, t) > q && big.u.get(1, t) > q) as usize;
        }
        let oracle = joint as f64 / (big.u.n_replicates() as f64 * (1.0 - q));
        let sim = simulate_lrsm(&s, &p, alpha, 2000, 12).unwrap();
        let c = empirical_chi(&sim.u, &s, 0.1, 0.001, &[q], 200, 5).unwrap();
        assert!((c.chi_hat[0] - oracle).abs() < 3.0 * c.boot_se[0], "{} {} {}", c.chi_hat[0], oracle, c.boot_se[0]);
        // and the limit is positive
        assert!(chi_limit((-0.5f64).exp(), alpha, 100_000, 1).unwrap().chi > 0.1);
    }

    #[test]
    fn gev_basics() {
        let g = GevParams::new(1.0, 2.0, 0.0).unwrap();
        assert!((gev_cdf(1.0, &g) - (-1.0f64).exp()).abs() < 1e-15);
        let p = GevParams::new(30.0, 2.0, 0.2).unwrap();
        let q = gev_quantile(0.99, &p).unwrap();
        assert!((gev_cdf(q, &p) - 0.99).abs() < 1e-12);
        for xi in [-0.3, -1e-9, 0.0, 0.15, 0.6] {
            let p = GevParams::new(0.5, 1.3, xi).unwrap();
            for k in 1..40 {
                let u = k as f64 / 40.0;
                let z = gev_quantile(u, &p).unwrap();
                assert!((gev_cdf(z, &p) - u).abs() < 1e-10);
            }
        }
        assert_eq!(gev_logpdf(-100.0, &p), f64::NEG_INFINITY);
        assert!(GevParams::new(0.0, 0.0, 0.1).is_err());
        assert!(gev_quantile(1.0, &p).is_err());
    }

    #[test]
    fn gev_branch_continuity() {
        let g0 = GevParams::new(0.0, 1.0, 0.0).unwrap();
        for xi in [1e-8, -1e-8, 1.0000001e-8] {
            let g = GevParams::new(0.0, 1.0, xi).unwrap();
            for k in -30..60 {
                let z = k as f64 / 10.0;
                assert!((gev_cdf(z, &g) - gev_cdf(z, &g0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gev_logpdf_integrates_to_one() {
        let p = GevParams::new(0.0, 1.0, 0.25).unwrap();
        let lo = p.mu - p.sigma / p.xi;
        let (v, _) = crate::quadrature::integrate(
            |z| gev_logpdf(z, &p).exp(),
            lo,
            lo + 1e4,
            &crate::quadrature::QuadratureConfig::default(),
        )
        .unwrap();
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }

    fn gev_sample(p: &GevParams, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| gev_quantile(rng.random::<f64>().max(1e-300), p).unwrap()).collect()
    }

    #[test]
    fn gev_fit_recovers_truth() {
        let truth = GevParams::new(30.0, 2.0, 0.1).unwrap();
        let y = gev_sample(&truth, 10_000, 1);
        let f = gev_fit_mle(&y, None).unwrap();
        // asymptotic standard errors at ξ = 0.1, N = 1e4 are about
        // 0.022 (μ), 0.016 (σ) and 0.007 (ξ)
        assert!((f.mu - 30.0).abs() < 3.0 * 0.022, "{f:?}");
        assert!((f.sigma - 2.0).abs() < 3.0 * 0.016, "{f:?}");
        assert!((f.xi - 0.1).abs() < 3.0 * 0.007, "{f:?}");
    }

    #[test]
    fn gev_fit_equivariance() {
        let y = gev_sample(&GevParams::new(5.0, 1.5, 0.05).unwrap(), 500, 2);
        let f = gev_fit_mle(&y, None).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + 7.0).collect();
        let g = gev_fit_mle(&shifted, None).unwrap();
        assert!((g.mu - f.mu - 7.0).abs() < 1e-3 && (g.sigma - f.sigma).abs() < 1e-3 && (g.xi - f.xi).abs() < 1e-3);
        let scaled: Vec<f64> = y.iter().map(|v| v * 3.0).collect();
        let h = gev_fit_mle(&scaled, None).unwrap();
        assert!((h.mu - 3.0 * f.mu).abs() < 1e-3 * 3.0 * f.mu.abs().max(1.0));
        assert!((h.sigma - 3.0 * f.sigma).abs() < 1e-3 * 3.0);
        assert!((h.xi - f.xi).abs() < 1e-3);
        assert!(gev_fit_mle(&y[..19], None).is_err());
    }

    #[test]
    fn pit_of_exact_gev_is_uniform() {
        let fits = vec![GevParams::new(30.0, 2.0, 0.1).unwrap(), GevParams::new(-1.0, 0.5, -0.2).unwrap()];
        let a = gev_sample(&fits[0], 2000, 3);
        let b = gev_sample(&fits[1], 2000, 4);
        let m = DMatrix::from_fn(2, 2000, |i, t| if i == 0 { a[t] } else { b[t] });
        let x = ReplicateMatrix::new(m, Scale::RawX).unwrap();
        let u = pit_to_uniform(&x, &fits).unwrap();
        let mut pooled: Vec<f64> = u.values().iter().copied().collect();
        pooled.sort_by(f64::total_cmp);
        let n = pooled.len() as f64;
        let d = pooled
            .iter()
            .enumerate()
            .map(|(i, &v)| ((i + 1) as f64 / n - v).abs().max((v - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(d < 1.63 / n.sqrt());
        for t in 0..2000 {
            let back = gev_quantile(u.get(0, t), &fits[0]).unwrap();
            assert!((back - a[t]).abs() < 1e-8 * a[t].abs().max(1.0));
            if t > 0 && a[t] > a[t - 1] {
                assert!(u.get(0, t) >= u.get(0, t - 1));
            }
        }
    }

    #[test]
    fn anderson_darling_cases() {
        assert!(anderson_darling_gof(&[0.5; 7]).is_err());
        let clustered: Vec<f64> = (0..200).map(|i| 0.5 + (i as f64 - 100.0) * 1e-4).collect();
        assert!(anderson_darling_gof(&clustered).unwrap().p_value < 1e-3);
        let mut ok = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
            ok += (anderson_darling_gof(&u).unwrap().p_value > 0.01) as usize;
        }
        assert!(ok >= 98, "{ok}");
        // reference points of the limiting law
        assert!((ad_inf_cdf(2.492) - 0.95).abs() < 1e-3);
        assert!((ad_inf_cdf(3.857) - 0.99).abs() < 1e-3);
    }

    fn frechet_null(t_len: usize, n: usize, seed: u64) -> ReplicateMatrix {
        let base = unif_matrix(1, t_len, seed);
        let v = DMatrix::from_fn(n, t_len, |_, t| base.get(0, t));
        ReplicateMatrix::new(v, Scale::UniformU).unwrap()
    }

    #[test]
    fn max_stability_null_and_contract() {
        let mut rejections = 0;
        for seed in 0..50 {
            let u = frechet_null(100, 5, seed);
            let r = max_stability_test(&u, &[0, 1, 2, 3, 4], 200, seed + 1000).unwrap();
            assert!((0.0..=1.0).contains(&r.p_value));
            rejections += (r.p_value < 0.05) as usize;
        }
        assert!(rejections <= 5, "{rejections}");
        let u = frechet_null(30, 3, 1);
        assert!(max_stability_test(&u, &[0, 1], 0, 1).is_err());
        assert!(max_stability_test(&u, &[0], 10, 1).is_err());
    }

    #[test]
    fn max_stability_invariant_to_replicate_order() {
        let s = sample_uniform_sites(10, 1).unwrap();
        let sim = simulate_lrsm(&s, &MaternParams::new(0.1, 0.5).unwrap(), Alpha::new(0.3).unwrap(), 60, 2).unwrap();
        let idx: Vec<usize> = (0..60).rev().collect();
        let perm = sim.u.select_replicates(&idx).unwrap();
        let all: Vec<usize> = (0..10).collect();
        let a = max_stability_test(&sim.u, &all, 100, 9).unwrap();
        let b = max_stability_test(&perm, &all, 100, 9).unwrap();
        assert_eq!(a, b);
    }
}
