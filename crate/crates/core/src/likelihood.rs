//! Copula log-likelihood of uniform-scale replicates under the LRSM.
//!
//! Each replicate u_t is mapped to the latent Gaussian scale with
//! z = h⁻¹(u; R_t, α); the log-density is the Gaussian log-density of z_t plus
//! the log-Jacobian of the map. The Gaussian part is evaluated by one of four
//! backends: the exact dense likelihood, Vecchia, a tapered covariance or a
//! low-rank basis model.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::correlation::{assemble, tapered_unchecked, BasisExpansion, MaternParams, TaperSpec};
use crate::error::{Error, Result};
use crate::fields::{LevyDraws, ReplicateMatrix, Scale};
use crate::linalg::Cholesky;
use crate::marginal::{latent_from_log_x, log_jacobian_from_log_x, Alpha, MarginalLaw};
use crate::sites::{SiteSet, VecchiaPlan};
use crate::special::{norm_log_pdf, norm_quantile};

/// Uniform inputs are clamped to [U_CLAMP, 1 − U_CLAMP].
pub const U_CLAMP: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian approximation used for the latent field.
#[derive(Debug, Clone)]
pub enum BackendKind {
    FullGp,
    Vecchia(VecchiaPlan),
    Taper(TaperSpec),
    LowRank(BasisExpansion),
}

/// A backend with a cache of its most recent factorization.
#[derive(Debug)]
pub struct LikelihoodBackend {
    kind: BackendKind,
    cache: Mutex<Option<(MaternParams, Arc<GaussianFactor>)>>,
}

impl Clone for LikelihoodBackend {
    fn clone(&self) -> Self {
        Self::new(self.kind.clone())
    }
}

impl LikelihoodBackend {
    pub fn new(kind: BackendKind) -> Self {
        Self { kind, cache: Mutex::new(None) }
    }

    pub fn full() -> Self {
        Self::new(BackendKind::FullGp)
    }

    pub fn vecchia(plan: VecchiaPlan) -> Self {
        Self::new(BackendKind::Vecchia(plan))
    }

    pub fn taper(spec: TaperSpec) -> Self {
        Self::new(BackendKind::Taper(spec))
    }

    pub fn low_rank(basis: BasisExpansion) -> Self {
        Self::new(BackendKind::LowRank(basis))
    }

    pub fn kind(&self) -> &BackendKind {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            BackendKind::FullGp => "full",
            BackendKind::Vecchia(_) => "vecchia",
            BackendKind::Taper(_) => "taper",
            BackendKind::LowRank(_) => "lowrank",
        }
    }

    /// Whether the Gaussian part depends on the Matérn parameters. The
    /// low-rank basis is fixed in advance, so it does not.
    pub fn depends_on_range(&self) -> bool {
        !matches!(self.kind, BackendKind::LowRank(_))
    }

    /// Factorization for θ, built without touching the cache.
    pub fn factor(&self, s: &SiteSet, p: &MaternParams) -> Result<GaussianFactor> {
        match &self.kind {
            BackendKind::FullGp => GaussianFactor::dense(&assemble(s, p), "full"),
            BackendKind::Taper(t) => GaussianFactor::dense(&tapered_unchecked(s, p, t).to_dense(), "taper"),
            BackendKind::Vecchia(plan) => GaussianFactor::vecchia(s, p, plan),
            BackendKind::LowRank(basis) => GaussianFactor::low_rank(basis, s.len()),
        }
    }

    /// Factorization for θ, reusing the cached one when θ is unchanged.
    pub fn factor_cached(&self, s: &SiteSet, p: &MaternParams) -> Result<Arc<GaussianFactor>> {
        let mut guard = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((key, f)) = guard.as_ref() {
            if key == p || !self.depends_on_range() {
                return Ok(f.clone());
            }
        }
        let f = Arc::new(self.factor(s, p)?);
        *guard = Some((*p, f.clone()));
        Ok(f)
    }
}

/// Per-θ factorization of the latent Gaussian law.
#[derive(Debug, Clone)]
pub enum GaussianFactor {
    Dense {
        chol: Cholesky,
        log_det: f64,
    },
    Vecchia {
        order: Vec<usize>,
        offsets: Vec<usize>,
        neighbors: Vec<usize>,
        coef: Vec<f64>,
        cond_var: Vec<f64>,
    },
    LowRank {
        b: DMatrix<f64>,
        eigvecs: DMatrix<f64>,
        inv_shifted: Vec<f64>,
        tau2: f64,
        log_det: f64,
    },
}

impl GaussianFactor {
    fn dense(c: &DMatrix<f64>, backend: &'static str) -> Result<Self> {
        let chol = Cholesky::new(c, backend)?;
        let log_det = chol.log_det();
        Ok(Self::Dense { chol, log_det })
    }

    fn vecchia(s: &SiteSet, p: &MaternParams, plan: &VecchiaPlan) -> Result<Self> {
        if plan.len() != s.len() {
            return Err(Error::invalid(format!("Vecchia plan covers {} sites, data have {}", plan.len(), s.len())));
        }
        let n = s.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut coef = Vec::new();
        let mut cond_var = Vec::with_capacity(n);
        offsets.push(0);
        for (i, nb) in plan.neighbors.iter().enumerate() {
            let site = plan.ordering[i];
            let nb_sites: Vec<usize> = nb.iter().map(|&j| plan.ordering[j]).collect();
            if nb_sites.is_empty() {
                cond_var.push(1.0);
            } else {
                let sub = s.subset(&nb_sites)?;
                let c_nn = assemble(&sub, p);
                let c_ni: Vec<f64> = nb_sites
                    .iter()
                    .map(|&j| crate::correlation::matern_unchecked(s.distance(site, j), p))
                    .collect();
                let chol = Cholesky::new(&c_nn, "vecchia").map_err(|_| Error::Factorization {
                    backend: "vecchia",
                    minor: i + 1,
                })?;
                let b = chol.solve(&c_ni);
                let d = 1.0 - c_ni.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
                if !(d > 0.0) {
                    return Err(Error::Factorization { backend: "vecchia", minor: i + 1 });
                }
                cond_var.push(d);
                coef.extend_from_slice(&b);
                neighbors.extend_from_slice(&nb_sites);
            }
            offsets.push(neighbors.len());
        }
        Ok(Self::Vecchia { order: plan.ordering.clone(), offsets, neighbors, coef, cond_var })
    }

    fn low_rank(basis: &BasisExpansion, n: usize) -> Result<Self> {
        let b = basis.b.clone();
        if b.nrows() != n {
            return Err(Error::invalid(format!("basis has {} rows, data have {n} sites", b.nrows())));
        }
        let k = b.ncols();
        let tau2 = basis.nugget_tau2;
        if !(tau2 > 0.0) {
            return Err(Error::Factorization { backend: "lowrank", minor: k.min(n) + 1 });
        }
        let eig = SymmetricEigen::try_new(b.transpose() * &b, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numerical("eigen-decomposition of BᵀB did not converge".into()))?;
        let lambda: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        // matrix determinant lemma
        let log_det = (n - k) as f64 * tau2.ln() + lambda.iter().map(|l| (l + tau2).ln()).sum::<f64>();
        let inv_shifted = lambda.iter().map(|l| 1.0 / (l + tau2)).collect();
        Ok(Self::LowRank { b, eigvecs: eig.eigenvectors, inv_shifted, tau2, log_det })
    }

    /// Log-density of N(0, Σ_θ) (or its approximation) at z.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let n = z.len() as f64;
        match self {
            Self::Dense { chol, log_det } => -0.5 * (n * LN_2PI + log_det + chol.quad_form(z)),
            Self::Vecchia { order, offsets, neighbors, coef, cond_var } => {
                let mut acc = 0.0;
                for (i, &site) in order.iter().enumerate() {
                    let (a, b) = (offsets[i], offsets[i + 1]);
                    let mean: f64 = neighbors[a..b].iter().zip(&coef[a..b]).map(|(&j, &c)| c * z[j]).sum();
                    let r = z[site] - mean;
                    let d = cond_var[i];
                    acc += d.ln() + r * r / d;
                }
                -0.5 * (n * LN_2PI + acc)
            }
            Self::LowRank { b, eigvecs, inv_shifted, tau2, log_det } => {
                let zv = DVector::from_column_slice(z);
                // c = (BᵀB + τ²I)⁻¹ Bᵀ z, then zᵀΣ⁻¹z = ‖z − Bc‖²/τ² + ‖c‖²
                let mut w = eigvecs.tr_mul(&b.tr_mul(&zv));
                for (wj, s) in w.iter_mut().zip(inv_shifted) {
                    *wj *= s;
                }
                let c = eigvecs * w;
                let resid = &zv - b * &c;
                let quad = resid.norm_squared() / tau2 + c.norm_squared();
                -0.5 * (n * LN_2PI + log_det + quad)
            }
        }
    }

    /// Dense covariance implied by the factor (for testing and prediction).
    pub fn implied_covariance(&self) -> Option<DMatrix<f64>> {
        match self {
            Self::Dense { chol, .. } => Some(chol.lower() * chol.lower().transpose()),
            Self::LowRank { b, tau2, .. } => {
                let n = b.nrows();
                Some(b * b.transpose() + DMatrix::identity(n, n) * *tau2)
            }
            Self::Vecchia { .. } => None,
        }
    }
}

/// Latent vector of one replicate with its log-Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub z: Vec<f64>,
    pub log_jacobian: f64,
}

/// z_i = h⁻¹(u_i; R, α) and Σ_i ln ∂z_i/∂u_i, evaluated point by point.
pub fn transform_replicate(u_t: &[f64], r_t: f64, alpha: Alpha) -> Result<Transformed> {
    if !(r_t > 0.0 && r_t.is_finite()) {
        return Err(Error::invalid(format!("Lévy scale must be positive, got {r_t}")));
    }
    let law = MarginalLaw::new(alpha);
    let log_ra = alpha.value() * r_t.ln();
    let mut z = Vec::with_capacity(u_t.len());
    let mut lj = 0.0;
    for &u in u_t {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::invalid(format!("uniform value {u} is outside (0, 1)")));
        }
        if alpha.value() == 0.0 {
            let zi = norm_quantile(u);
            lj -= norm_log_pdf(zi);
            z.push(zi);
        } else {
            let y = law.quantile_log(u)?;
            z.push(latent_from_log_x(y, log_ra));
            lj += log_jacobian_from_log_x(y, law.log_pdf_log(y), log_ra);
        }
    }
    Ok(Transformed { z, log_jacobian: lj })
}

/// The α-dependent part of the transform for a whole data set:
/// ln F_X⁻¹(u) and ln f_X(F_X⁻¹(u)) for every entry, from a quantile table.
/// Changing R_t then only needs the cheap final step.
#[derive(Debug, Clone)]
pub struct CopulaMargins {
    alpha: Alpha,
    n: usize,
    y: Vec<f64>,
    log_pdf: Vec<f64>,
    clamped: usize,
}

impl CopulaMargins {
    pub fn new(u: &ReplicateMatrix, alpha: Alpha) -> Result<Self> {
        if u.scale() != Scale::UniformU {
            return Err(Error::invalid("the copula likelihood needs uniform-scale data"));
        }
        let vals = u.values().as_slice();
        let mut clamped = 0;
        let clamp = |v: f64, clamped: &mut usize| {
            let c = v.clamp(U_CLAMP, 1.0 - U_CLAMP);
            if c != v {
                *clamped += 1;
            }
            c
        };
        let mut y = Vec::with_capacity(vals.len());
        let mut log_pdf = Vec::new();
        if alpha.value() == 0.0 {
            // store z = Φ⁻¹(u) directly
            for &v in vals {
                y.push(norm_quantile(clamp(v, &mut clamped)));
            }
        } else {
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min).clamp(U_CLAMP, 1.0 - U_CLAMP);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max).clamp(U_CLAMP, 1.0 - U_CLAMP);
            let table = MarginalLaw::new(alpha).quantile_table(lo, hi)?;
            log_pdf.reserve(vals.len());
            for &v in vals {
                let (yi, lf) = table.lookup(clamp(v, &mut clamped))?;
                y.push(yi);
                log_pdf.push(lf);
            }
        }
        if clamped > 0 {
            log::warn!("{clamped} uniform values clamped to [{U_CLAMP:e}, 1 - {U_CLAMP:e}]");
        }
        Ok(Self { alpha, n: u.n_sites(), y, log_pdf, clamped })
    }

    pub fn alpha(&self) -> Alpha {
        self.alpha
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn n_replicates(&self) -> usize {
        self.y.len() / self.n
    }

    /// Number of inputs moved onto the clamp bounds.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    /// Writes z_t into `z` and returns the log-Jacobian of replicate t.
    pub fn transform_into(&self, t: usize, r: f64, z: &mut [f64]) -> f64 {
        let range = t * self.n..(t + 1) * self.n;
        let y = &self.y[range.clone()];
        if self.alpha.value() == 0.0 {
            z.copy_from_slice(y);
            return y.iter().map(|&zi| -norm_log_pdf(zi)).sum();
        }
        let log_ra = self.alpha.value() * r.ln();
        let lf = &self.log_pdf[range];
        let mut lj = 0.0;
        for i in 0..self.n {
            z[i] = latent_from_log_x(y[i], log_ra);
            lj += log_jacobian_from_log_x(y[i], lf[i], log_ra);
        }
        lj
    }

    pub fn transform(&self, t: usize, r: f64) -> Transformed {
        let mut z = vec![0.0; self.n];
        let log_jacobian = self.transform_into(t, r, &mut z);
        Transformed { z, log_jacobian }
    }
}

/// Latent Gaussian log-density of one replicate.
pub fn gaussian_logdensity(z_t: &[f64], backend: &LikelihoodBackend, s: &SiteSet, p: &MaternParams) -> Result<f64> {
    if z_t.len() != s.len() {
        return Err(Error::invalid(format!("replicate has {} values for {} sites", z_t.len(), s.len())));
    }
    Ok(backend.factor_cached(s, p)?.log_density(z_t))
}

/// Total log-likelihood with its Gaussian and Jacobian parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikResult {
    pub loglik: f64,
    pub gaussian_part: f64,
    pub jacobian_part: f64,
    /// Inputs that had to be clamped away from 0 or 1.
    pub clamped: usize,
}

/// log f_U(u | R, α, θ) summed over replicates.
pub fn loglik_full(
    u: &ReplicateMatrix,
    r: &LevyDraws,
    alpha: Alpha,
    s: &SiteSet,
    p: &MaternParams,
    backend: &LikelihoodBackend,
) -> Result<LogLikResult> {
    if u.n_sites() != s.len() {
        return Err(Error::invalid(format!("data have {} sites, site set has {}", u.n_sites(), s.len())));
    }
    if u.n_replicates() != r.len() {
        return Err(Error::invalid(format!("{} replicates but {} Lévy scales", u.n_replicates(), r.len())));
    }
    let margins = CopulaMargins::new(u, alpha)?;
    let factor = backend.factor_cached(s, p)?;
    let mut z = vec![0.0; s.len()];
    let (mut gp, mut jac) = (0.0, 0.0);
    for (t, &rt) in r.as_slice().iter().enumerate() {
        jac += margins.transform_into(t, rt, &mut z);
        gp += factor.log_density(&z);
    }
    Ok(LogLikResult { loglik: gp + jac, gaussian_part: gp, jacobian_part: jac, clamped: margins.clamped() })
}

/// Stand-alone multivariate normal log-density from a dense covariance,
/// used as an oracle and by the predictor.
pub fn dense_normal_logdensity(cov: &DMatrix<f64>, z: &[f64]) -> Result<f64> {
    let chol = Cholesky::new(cov, "dense")?;
    let n = z.len() as f64;
    Ok(-0.5 * (n * (2.0 * PI).ln() + chol.log_det() + chol.quad_form(z)))
}
