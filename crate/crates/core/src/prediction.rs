//! Posterior-predictive simulation at held-out sites.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::correlation::{assemble, cross_covariance, spherical_taper, MaternParams};
use crate::error::{Error, Result};
use crate::fields::{ReplicateMatrix, Scale};
use crate::inference::{McmcState, PosteriorChain};
use crate::likelihood::{BackendKind, CopulaMargins, LikelihoodBackend};
use crate::linalg::Cholesky;
use crate::marginal::{Alpha, MarginalLaw};
use crate::sites::{knn_to_targets, SiteSet};

/// Default number of posterior draws used for prediction.
pub const DEFAULT_PREDICTIVE_DRAWS: usize = 500;

/// Predictive draws indexed by (target site, replicate, draw).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSamples {
    n_targets: usize,
    n_replicates: usize,
    n_draws: usize,
    values: Vec<f64>,
    scale: Scale,
}

impl PredictiveSamples {
    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn n_replicates(&self) -> usize {
        self.n_replicates
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    fn offset(&self, site: usize, t: usize) -> usize {
        (site * self.n_replicates + t) * self.n_draws
    }

    /// All draws for one target and replicate.
    pub fn draws(&self, site: usize, t: usize) -> &[f64] {
        let o = self.offset(site, t);
        &self.values[o..o + self.n_draws]
    }

    /// Applies a per-site quantile function to every uniform draw.
    pub fn back_transform<F: Fn(usize, f64) -> f64>(&self, quantile: F) -> Self {
        let mut values = self.values.clone();
        for site in 0..self.n_targets {
            let o = self.offset(site, 0);
            for v in &mut values[o..o + self.n_replicates * self.n_draws] {
                *v = quantile(site, *v);
            }
        }
        Self { values, scale: Scale::RawX, ..*self }
    }

    /// CSV with header `site_id,t,draw,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["site_id", "t", "draw", "value"])?;
        for site in 0..self.n_targets {
            for t in 0..self.n_replicates {
                for (d, v) in self.draws(site, t).iter().enumerate() {
                    wr.write_record([site.to_string(), t.to_string(), d.to_string(), format!("{v:?}")])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the format of [`PredictiveSamples::write_csv`]. Rows may come in
    /// any order but every (site, t, draw) cell must appear exactly once.
    pub fn read_csv<R: Read>(r: R, scale: Scale) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["site_id", "t", "draw", "value"] {
            return Err(Error::Data(format!("unexpected predictive header {header:?}")));
        }
        let mut rows = Vec::new();
        let (mut ns, mut nt, mut nd) = (0, 0, 0);
        for rec in rd.records() {
            let rec = rec?;
            let idx = |k: usize| -> Result<usize> {
                rec[k].trim().parse().map_err(|_| Error::Data(format!("bad index {:?}", &rec[k])))
            };
            let (site, t, d) = (idx(0)?, idx(1)?, idx(2)?);
            let v: f64 = rec[3].trim().parse().map_err(|_| Error::Data(format!("bad value {:?}", &rec[3])))?;
            ns = ns.max(site + 1);
            nt = nt.max(t + 1);
            nd = nd.max(d + 1);
            rows.push((site, t, d, v));
        }
        if rows.is_empty() || rows.len() != ns * nt * nd {
            return Err(Error::Data("predictive file is empty or incomplete".into()));
        }
        let mut values = vec![f64::NAN; rows.len()];
        for (site, t, d, v) in rows {
            let k = (site * nt + t) * nd + d;
            if !values[k].is_nan() {
                return Err(Error::Data(format!("duplicate predictive cell ({site}, {t}, {d})")));
            }
            values[k] = v;
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("predictive file has non-finite values".into()));
        }
        Ok(Self { n_targets: ns, n_replicates: nt, n_draws: nd, values, scale })
    }
}

/// Evenly spaced subset of at most `max` post-burn-in stored states.
pub fn thin_states(chain: &PosteriorChain, max: usize) -> Vec<McmcState> {
    let all = chain.stored_states();
    if all.len() <= max || max == 0 {
        return all.into_iter().map(|(_, s)| s).collect();
    }
    (0..max).map(|k| all[k * all.len() / max].1.clone()).collect()
}

/// Gaussian conditional law of the targets given the observed sites for
/// one parameter draw.
enum Conditional {
    /// mean = W z_obs, joint covariance L Lᵀ.
    Joint { w: DMatrix<f64>, chol: DMatrix<f64> },
    /// Each target from its own neighbors: weights and conditional sd.
    Independent { neighbors: Vec<Vec<usize>>, weights: Vec<Vec<f64>>, sd: Vec<f64> },
    /// Through basis coefficients c | z_obs ~ N(V Bᵀ z/τ², V), z* = B* c + τ ε.
    Basis { b_obs: DMatrix<f64>, b_new: DMatrix<f64>, v_chol: DMatrix<f64>, v: DMatrix<f64>, tau2: f64 },
}

fn chol_with_jitter(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = c.nrows();
    for jitter in [0.0, 1e-12, 1e-10, 1e-8] {
        let m = c + DMatrix::identity(n, n) * jitter;
        if let Some(ch) = m.cholesky() {
            return Ok(ch.l());
        }
    }
    Err(Error::Numerical("predictive conditional covariance is not positive semidefinite".into()))
}

fn joint_conditional(c_oo: &DMatrix<f64>, c_no: &DMatrix<f64>, c_nn: &DMatrix<f64>, tag: &'static str) -> Result<Conditional> {
    let ch = Cholesky::new(c_oo, tag)?;
    // W = C_no C_oo⁻¹, row by row
    let mut w = DMatrix::zeros(c_no.nrows(), c_no.ncols());
    for i in 0..c_no.nrows() {
        let row: Vec<f64> = c_no.row(i).iter().copied().collect();
        for (j, v) in ch.solve(&row).into_iter().enumerate() {
            w[(i, j)] = v;
        }
    }
    let cov = c_nn - &w * c_no.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(Conditional::Joint { w, chol: chol_with_jitter(&cov)? })
}

fn build_conditional(
    backend: &LikelihoodBackend,
    s_obs: &SiteSet,
    s_new: &SiteSet,
    p: &MaternParams,
    knn: &[Vec<usize>],
) -> Result<Conditional> {
    match backend.kind() {
        BackendKind::FullGp => {
            let c_oo = assemble(s_obs, p);
            let c_no = cross_covariance(s_new, s_obs, p);
            let c_nn = assemble(s_new, p);
            joint_conditional(&c_oo, &c_no, &c_nn, "full")
        }
        BackendKind::Taper(t) => {
            let taper_dense = |a: &SiteSet, b: &SiteSet, c: DMatrix<f64>| {
                DMatrix::from_fn(a.len(), b.len(), |i, j| {
                    let (x, y) = (a.get(i), b.get(j));
                    c[(i, j)] * spherical_taper(((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt(), t)
                })
            };
            let c_oo = taper_dense(s_obs, s_obs, assemble(s_obs, p));
            let c_no = taper_dense(s_new, s_obs, cross_covariance(s_new, s_obs, p));
            let c_nn = taper_dense(s_new, s_new, assemble(s_new, p));
            joint_conditional(&c_oo, &c_no, &c_nn, "taper")
        }
        BackendKind::Vecchia(_) => {
            let mut weights = Vec::with_capacity(s_new.len());
            let mut sd = Vec::with_capacity(s_new.len());
            for (k, nb) in knn.iter().enumerate() {
                if nb.is_empty() {
                    weights.push(Vec::new());
                    sd.push(1.0);
                    continue;
                }
                let sub = s_obs.subset(nb)?;
                let ch = Cholesky::new(&assemble(&sub, p), "vecchia")?;
                let target = s_new.subset(&[k])?;
                let c: Vec<f64> = cross_covariance(&target, &sub, p).row(0).iter().copied().collect();
                let b = ch.solve(&c);
                let var = 1.0 - c.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
                if var < -1e-10 {
                    return Err(Error::Numerical("negative Vecchia predictive variance".into()));
                }
                weights.push(b);
                sd.push(var.max(0.0).sqrt());
            }
            Ok(Conditional::Independent { neighbors: knn.to_vec(), weights, sd })
        }
        BackendKind::LowRank(basis) => {
            let b_obs = basis.b.clone();
            let b_new = basis.extend(s_new)?;
            let tau2 = basis.nugget_tau2;
            if !(tau2 > 0.0) {
                return Err(Error::Numerical("low-rank prediction needs a positive nugget".into()));
            }
            let k = b_obs.ncols();
            let prec = DMatrix::identity(k, k) + b_obs.transpose() * &b_obs / tau2;
            let ch = prec
                .cholesky()
                .ok_or_else(|| Error::Numerical("basis coefficient precision is not positive definite".into()))?;
            let v = ch.inverse();
            let v = (&v + v.transpose()) * 0.5;
            let v_chol = chol_with_jitter(&v)?;
            Ok(Conditional::Basis { b_obs, b_new, v_chol, v, tau2 })
        }
    }
}

fn sample_targets(cond: &Conditional, z_obs: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let mut eps = |n: usize| DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    match cond {
        Conditional::Joint { w, chol } => {
            let z = DVector::from_column_slice(z_obs);
            let draw = w * z + chol * eps(out.len());
            out.copy_from_slice(draw.as_slice());
        }
        Conditional::Independent { neighbors, weights, sd } => {
            let e = eps(out.len());
            for k in 0..out.len() {
                let mean: f64 = neighbors[k].iter().zip(&weights[k]).map(|(&j, &b)| b * z_obs[j]).sum();
                out[k] = mean + sd[k] * e[k];
            }
        }
        Conditional::Basis { b_obs, b_new, v_chol, v, tau2 } => {
            let z = DVector::from_column_slice(z_obs);
            let mean_c = v * (b_obs.transpose() * z) / *tau2;
            let c = mean_c + v_chol * eps(v.nrows());
            let draw = b_new * c + eps(out.len()) * tau2.sqrt();
            out.copy_from_slice(draw.as_slice());
        }
    }
}

/// Posterior-predictive draws of the uniform-scale field at `s_new`.
///
/// For each retained posterior state (α, ρ, R_1..R_T) the observed data are
/// mapped to the latent scale, the latent field at the targets is drawn
/// from its Gaussian conditional law under the backend's covariance, and
/// mapped back with u* = h(z*; R_t, α). `m` draws are taken per state and at
/// most `max_states` evenly thinned states are used.
#[allow(clippy::too_many_arguments)]
pub fn conditional_simulate(
    u_obs: &ReplicateMatrix,
    s_obs: &SiteSet,
    s_new: &SiteSet,
    chain: &PosteriorChain,
    backend: &LikelihoodBackend,
    nu: f64,
    m: usize,
    max_states: usize,
    seed: u64,
) -> Result<PredictiveSamples> {
    if m == 0 {
        return Err(Error::invalid("need at least one draw per posterior state"));
    }
    if u_obs.n_sites() != s_obs.len() {
        return Err(Error::invalid("observed data and sites disagree"));
    }
    if s_new.coords().iter().any(|c| s_obs.coords().contains(c)) {
        return Err(Error::invalid("target sites must be disjoint from the observed sites"));
    }
    let states = thin_states(chain, max_states);
    if states.is_empty() {
        return Err(Error::invalid("the chain has no post-burn-in stored states"));
    }
    let t_len = u_obs.n_replicates();
    if states[0].r.len() != t_len {
        return Err(Error::invalid("chain and data have different replicate counts"));
    }
    let knn = match backend.kind() {
        BackendKind::Vecchia(plan) => knn_to_targets(s_obs, s_new, plan.m.min(s_obs.len()))?,
        _ => Vec::new(),
    };
    let n_new = s_new.len();
    let n_obs = s_obs.len();
    let n_draws = states.len() * m;
    let mut values = vec![0.0; n_new * t_len * n_draws];
    let mut z_obs = vec![0.0; n_obs];
    let mut z_new = vec![0.0; n_new];
    for (d, st) in states.iter().enumerate() {
        let alpha = Alpha::new(st.alpha)?;
        let p = MaternParams::new(st.rho, nu)?;
        let margins = CopulaMargins::new(u_obs, alpha)?;
        let law = MarginalLaw::new(alpha);
        let cond = build_conditional(backend, s_obs, s_new, &p, &knn)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(d as u64);
        for t in 0..t_len {
            margins.transform_into(t, st.r[t], &mut z_obs);
            for j in 0..m {
                sample_targets(&cond, &z_obs, &mut rng, &mut z_new);
                for (k, &z) in z_new.iter().enumerate() {
                    let u = law.h(z, st.r[t]).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                    values[(k * t_len + t) * n_draws + d * m + j] = u;
                }
            }
        }
    }
    Ok(PredictiveSamples { n_targets: n_new, n_replicates: t_len, n_draws, values, scale: Scale::UniformU })
}

/// One predictive distribution paired with its realized value.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredUnit<'a> {
    pub site: usize,
    pub t: usize,
    pub samples: &'a [f64],
    pub truth: f64,
}

/// Pairs every (target, replicate) sample set with the held-out value.
pub fn twcrps_inputs<'a>(pred: &'a PredictiveSamples, truth: &ReplicateMatrix) -> Result<Vec<ScoredUnit<'a>>> {
    if truth.n_sites() != pred.n_targets || truth.n_replicates() != pred.n_replicates {
        return Err(Error::invalid(format!(
            "truth is {}×{}, predictions are {}×{}",
            truth.n_sites(),
            truth.n_replicates(),
            pred.n_targets,
            pred.n_replicates
        )));
    }
    let mut out = Vec::with_capacity(pred.n_targets * pred.n_replicates);
    for site in 0..pred.n_targets {
        for t in 0..pred.n_replicates {
            out.push(ScoredUnit { site, t, samples: pred.draws(site, t), truth: truth.get(site, t) });
        }
    }
    Ok(out)
}
