//! Matérn correlation, covariance assembly, the spherical taper and the
//! low-rank eigenbasis.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::sites::SiteSet;
use crate::special::matern_shape;

/// Matérn range and smoothness.
///
/// The kernel is evaluated at h/ρ without the √(2ν) rescaling, so for ν = 1.5
/// the correlation at h is (1 + h/ρ) e^{−h/ρ}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub rho: f64,
    pub nu: f64,
}

impl MaternParams {
    pub fn new(rho: f64, nu: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::invalid(format!("Matérn range must be positive, got {rho}")));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::invalid(format!("Matérn smoothness must be positive, got {nu}")));
        }
        Ok(Self { rho, nu })
    }
}

/// Matérn correlation at distance h.
pub fn matern(h: f64, p: &MaternParams) -> Result<f64> {
    if !h.is_finite() || h < 0.0 {
        return Err(Error::invalid(format!("distance must be finite and non-negative, got {h}")));
    }
    Ok(matern_unchecked(h, p))
}

pub(crate) fn matern_unchecked(h: f64, p: &MaternParams) -> f64 {
    let u = h / p.rho;
    if p.nu == 0.5 {
        (-u).exp()
    } else if p.nu == 1.5 {
        (1.0 + u) * (-u).exp()
    } else if p.nu == 2.5 {
        (1.0 + u + u * u / 3.0) * (-u).exp()
    } else {
        matern_shape(p.nu, u)
    }
}

/// Dense correlation matrix without a definiteness check.
pub(crate) fn assemble(s: &SiteSet, p: &MaternParams) -> DMatrix<f64> {
    let n = s.len();
    let mut c = DMatrix::identity(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = matern_unchecked(s.distance(i, j), p);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Correlation matrix of the sites, verified positive definite.
pub fn covariance_matrix(s: &SiteSet, p: &MaternParams) -> Result<DMatrix<f64>> {
    let c = assemble(s, p);
    Cholesky::new(&c, "full")?;
    Ok(c)
}

/// Cross-correlations between two site sets (rows: `a`, columns: `b`).
pub fn cross_covariance(a: &SiteSet, b: &SiteSet, p: &MaternParams) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        let (x, y) = (a.get(i), b.get(j));
        matern_unchecked((x[0] - y[0]).hypot(x[1] - y[1]), p)
    })
}

/// Spherical taper range ψ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaperSpec {
    pub psi: f64,
}

impl TaperSpec {
    pub fn new(psi: f64) -> Result<Self> {
        if !(psi > 0.0) || psi.is_nan() {
            return Err(Error::invalid(format!("taper range must be positive, got {psi}")));
        }
        Ok(Self { psi })
    }
}

/// (1 − h/ψ)² (1 + h/(2ψ)) for h < ψ, else 0.
pub fn spherical_taper(h: f64, t: &TaperSpec) -> f64 {
    if h >= t.psi {
        return 0.0;
    }
    let r = h / t.psi;
    (1.0 - r) * (1.0 - r) * (1.0 + 0.5 * r)
}

/// Symmetric matrix in compressed-column form; both triangles are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of column j as (row, value) pairs, rows ascending.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        match self.row_idx[r.clone()].binary_search(&i) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for (i, v) in self.column(j) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// Fraction of off-diagonal entries that are structural zeros.
    pub fn zero_fraction(&self) -> f64 {
        let n = self.n;
        if n < 2 {
            return 0.0;
        }
        let off = (n * (n - 1)) as f64;
        let stored_off = (self.nnz() - n) as f64;
        (off - stored_off) / off
    }
}

/// Tapered correlation C ∘ T_ψ; pairs at distance ≥ ψ are not stored.
pub fn tapered_covariance(s: &SiteSet, p: &MaternParams, t: &TaperSpec) -> Result<SparseMatrix> {
    let m = tapered_unchecked(s, p, t);
    Cholesky::new(&m.to_dense(), "taper")?;
    Ok(m)
}

pub(crate) fn tapered_unchecked(s: &SiteSet, p: &MaternParams, t: &TaperSpec) -> SparseMatrix {
    let n = s.len();
    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::new();
    let mut values = Vec::new();
    col_ptr.push(0);
    for j in 0..n {
        for i in 0..n {
            if i == j {
                row_idx.push(i);
                values.push(1.0);
                continue;
            }
            let h = s.distance(i, j);
            if h < t.psi {
                row_idx.push(i);
                values.push(matern_unchecked(h, p) * spherical_taper(h, t));
            }
        }
        col_ptr.push(row_idx.len());
    }
    SparseMatrix { n, col_ptr, row_idx, values }
}

/// Taper range whose zero fraction is as close as possible to `target`.
///
/// ψ is the order statistic of the off-diagonal distances that leaves
/// round((1 − target) · #pairs) pairs strictly inside the range. With tied
/// distances the achieved fraction jumps across the tie.
pub fn taper_range_for_sparsity(s: &SiteSet, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::invalid(format!("target sparsity must lie in (0, 1), got {target}")));
    }
    let n = s.len();
    if n < 2 {
        return Err(Error::invalid("taper range needs at least two sites"));
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for j in 0..n {
        for i in (j + 1)..n {
            d.push(s.distance(i, j));
        }
    }
    d.sort_by(f64::total_cmp);
    let keep = ((1.0 - target) * d.len() as f64).round() as usize;
    if keep >= d.len() {
        return Ok(next_up(d[d.len() - 1]));
    }
    Ok(d[keep])
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

/// Range and smoothness of the reference kernel used to build the eigenbasis.
pub const REFERENCE_BASIS_KERNEL: MaternParams = MaternParams { rho: 0.5, nu: 0.5 };
/// Default nugget variance of the low-rank model.
pub const DEFAULT_NUGGET: f64 = 1e-6;

/// Row-normalized eigenbasis B (n × k) with nugget τ².
///
/// The low-rank covariance is B Bᵀ + τ² I, so every site has variance 1 + τ².
#[derive(Debug, Clone)]
pub struct BasisExpansion {
    pub b: DMatrix<f64>,
    pub nugget_tau2: f64,
    sites: SiteSet,
    reference: MaternParams,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

impl BasisExpansion {
    pub fn rank(&self) -> usize {
        self.b.ncols()
    }

    pub fn with_nugget(mut self, tau2: f64) -> Result<Self> {
        if !(tau2 >= 0.0) || !tau2.is_finite() {
            return Err(Error::invalid(format!("nugget must be finite and non-negative, got {tau2}")));
        }
        self.nugget_tau2 = tau2;
        Ok(self)
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    /// Basis rows at new sites by the Nyström extension
    /// φ_j(s) = λ_j⁻¹ Σ_i C(s, s_i) v_ij, then normalized to unit length.
    pub fn extend(&self, targets: &SiteSet) -> Result<DMatrix<f64>> {
        let cross = cross_covariance(targets, &self.sites, &self.reference);
        let mut phi = cross * &self.eigenvectors;
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            phi.column_mut(j).scale_mut(1.0 / lam);
        }
        normalize_rows(&mut phi)?;
        Ok(phi)
    }
}

/// Leading `k` eigenpairs of the reference correlation, eigenvalues descending.
pub fn leading_eigenvectors(s: &SiteSet, k: usize, reference: &MaternParams) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = s.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("basis rank must lie in 1..={n}, got {k}")));
    }
    let c = assemble(s, reference);
    let eig = SymmetricEigen::try_new(c, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("eigen-decomposition of the reference kernel did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order[..k].iter().map(|&j| eig.eigenvalues[j]).collect();
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Numerical("reference kernel has non-positive leading eigenvalues".into()));
    }
    let mut vecs = DMatrix::zeros(n, k);
    for (c, &j) in order[..k].iter().enumerate() {
        let mut col = eig.eigenvectors.column(j).into_owned();
        // fix the sign so the largest-magnitude entry is positive
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        vecs.set_column(c, &col);
    }
    Ok((values, vecs))
}

fn normalize_rows(m: &mut DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let norm = m.row(i).norm();
        if !(norm > 1e-300) {
            return Err(Error::Numerical(format!("basis row {i} vanishes; increase the rank")));
        }
        m.row_mut(i).scale_mut(1.0 / norm);
    }
    Ok(())
}

/// Eigenbasis from the leading `k` eigenvectors of the reference kernel,
/// rows rescaled to unit Euclidean norm, with the default nugget.
pub fn eigenbasis(s: &SiteSet, k: usize, reference: &MaternParams) -> Result<BasisExpansion> {
    let (eigenvalues, eigenvectors) = leading_eigenvectors(s, k, reference)?;
    let mut b = eigenvectors.clone();
    normalize_rows(&mut b)?;
    Ok(BasisExpansion {
        b,
        nugget_tau2: DEFAULT_NUGGET,
        sites: s.clone(),
        reference: *reference,
        eigenvalues,
        eigenvectors,
    })
}
