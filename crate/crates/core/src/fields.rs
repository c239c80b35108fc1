//! Simulation of Lévy scales, Gaussian fields and LRSM replicates.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::correlation::{assemble, MaternParams};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::marginal::{Alpha, MarginalLaw};
use crate::sites::SiteSet;
use crate::special::norm_quantile_upper;

/// Scale on which replicate values are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Uniform margins, values in (0, 1).
    UniformU,
    /// Latent standard Gaussian scale.
    GaussianZ,
    /// LRSM scale X = R^α g(Z), or any raw data scale.
    RawX,
}

/// n × T matrix of replicates; column t is replicate t.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateMatrix {
    values: DMatrix<f64>,
    scale: Scale,
}

impl ReplicateMatrix {
    pub fn new(values: DMatrix<f64>, scale: Scale) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid("replicate matrix must be non-empty"));
        }
        for (k, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("replicate entry {k} is not finite")));
            }
            if scale == Scale::UniformU && !(v > 0.0 && v < 1.0) {
                let (i, t) = (k % values.nrows(), k / values.nrows());
                return Err(Error::invalid(format!("uniform-scale entry (site {i}, t {t}) = {v} is outside (0, 1)")));
            }
        }
        Ok(Self { values, scale })
    }

    pub fn n_sites(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_replicates(&self) -> usize {
        self.values.ncols()
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Replicate t as a contiguous slice over sites.
    pub fn column(&self, t: usize) -> &[f64] {
        let n = self.n_sites();
        &self.values.as_slice()[t * n..(t + 1) * n]
    }

    pub fn get(&self, site: usize, t: usize) -> f64 {
        self.values[(site, t)]
    }

    /// Rows for the given sites, in that order.
    pub fn select_sites(&self, idx: &[usize]) -> Result<Self> {
        let m = DMatrix::from_fn(idx.len(), self.n_replicates(), |i, t| self.values[(idx[i], t)]);
        Self::new(m, self.scale)
    }

    /// Columns for the given replicates, in that order.
    pub fn select_replicates(&self, idx: &[usize]) -> Result<Self> {
        let m = DMatrix::from_fn(self.n_sites(), idx.len(), |i, t| self.values[(i, idx[t])]);
        Self::new(m, self.scale)
    }

    /// Writes `site_id,t,value`, replicate-major.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["site_id", "t", "value"])?;
        for t in 0..self.n_replicates() {
            for i in 0..self.n_sites() {
                wtr.write_record([i.to_string(), t.to_string(), format!("{:?}", self.values[(i, t)])])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads `site_id,t,value`; every (site, t) cell must appear exactly once.
    pub fn read_csv<R: Read>(r: R, scale: Scale) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["site_id", "t", "value"] {
            return Err(Error::Data(format!("replicate CSV header must be `site_id,t,value`, found {headers:?}")));
        }
        let mut cells = Vec::new();
        let (mut n, mut nt) = (0usize, 0usize);
        for rec in rdr.records() {
            let rec = rec?;
            let bad = |what: &str, s: &str| Error::Data(format!("bad {what} {s:?} in replicate CSV"));
            let i: usize = rec[0].trim().parse().map_err(|_| bad("site_id", &rec[0]))?;
            let t: usize = rec[1].trim().parse().map_err(|_| bad("t", &rec[1]))?;
            let v: f64 = rec[2].trim().parse().map_err(|_| bad("value", &rec[2]))?;
            n = n.max(i + 1);
            nt = nt.max(t + 1);
            cells.push((i, t, v));
        }
        if cells.len() != n * nt {
            return Err(Error::Data(format!("replicate CSV has {} rows, expected {n} × {nt}", cells.len())));
        }
        let mut m = DMatrix::from_element(n, nt, f64::NAN);
        for (i, t, v) in cells {
            if !m[(i, t)].is_nan() {
                return Err(Error::Data(format!("duplicate cell (site {i}, t {t}) in replicate CSV")));
            }
            m[(i, t)] = v;
        }
        Self::new(m, scale).map_err(|e| Error::Data(e.to_string()))
    }
}

/// Sidecar metadata written next to a replicate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMeta {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub alpha: f64,
    pub rho: f64,
    pub nu: f64,
    pub seed: u64,
    pub scale: Scale,
}

/// Lévy(0, 1/2) scale draws, one per replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyDraws {
    r: Vec<f64>,
}

impl LevyDraws {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        if r.is_empty() {
            return Err(Error::invalid("need at least one Lévy draw"));
        }
        if let Some((t, v)) = r.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("Lévy draw {t} = {v} is not positive and finite")));
        }
        Ok(Self { r })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.r
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// Stream ids so that the pieces of one simulation never share random numbers.
const STREAM_LEVY: u64 = 1;
const STREAM_GP: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_levy<R: Rng>(rng: &mut R, t: usize) -> Vec<f64> {
    (0..t)
        .map(|_| {
            // R = 1/(2Q²) with Q = |W| drawn by inversion of the half-normal law
            let u: f64 = 1.0 - rng.random::<f64>();
            let q = norm_quantile_upper(0.5 * u);
            1.0 / (2.0 * q * q)
        })
        .collect()
}

/// T independent Lévy(0, 1/2) draws; the population median is 1.0990.
pub fn sample_levy(t: usize, seed: u64) -> Result<LevyDraws> {
    if t == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    LevyDraws::new(draw_levy(&mut rng_for(seed, STREAM_LEVY), t))
}

fn draw_gp<R: Rng>(rng: &mut R, chol: &Cholesky, t: usize) -> DMatrix<f64> {
    let n = chol.dim();
    let mut out = DMatrix::zeros(n, t);
    let mut w = vec![0.0; n];
    for j in 0..t {
        for v in w.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let col = chol.mul_lower(&w);
        out.column_mut(j).copy_from_slice(&col);
    }
    out
}

/// T replicates of the unit-variance Matérn Gaussian process.
pub fn sample_gp(s: &SiteSet, p: &MaternParams, t: usize, seed: u64) -> Result<ReplicateMatrix> {
    if t == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    let chol = Cholesky::new(&assemble(s, p), "full")?;
    ReplicateMatrix::new(draw_gp(&mut rng_for(seed, STREAM_GP), &chol, t), Scale::GaussianZ)
}

/// A simulated LRSM data set with its latent truth.
#[derive(Debug, Clone)]
pub struct LrsmSample {
    pub u: ReplicateMatrix,
    pub r: LevyDraws,
    pub z: ReplicateMatrix,
}

/// Simulates U_t(s_i) = h(Z_t(s_i); R_t, α).
///
/// Values that round to 0 or 1 are moved to the nearest representable
/// interior point.
pub fn simulate_lrsm(s: &SiteSet, p: &MaternParams, alpha: Alpha, t: usize, seed: u64) -> Result<LrsmSample> {
    let r = sample_levy(t, seed)?;
    let z = sample_gp(s, p, t, seed)?;
    let law = MarginalLaw::new(alpha);
    let n = s.len();
    let mut u = DMatrix::zeros(n, t);
    for j in 0..t {
        let rj = r.as_slice()[j];
        for i in 0..n {
            let v = law.h(z.get(i, j), rj);
            u[(i, j)] = v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        }
    }
    Ok(LrsmSample { u: ReplicateMatrix::new(u, Scale::UniformU)?, r, z })
}
