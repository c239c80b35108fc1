//! Dense Cholesky helpers shared by the likelihood backends, the field
//! simulator and the predictor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor L with A = L Lᵀ.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factorizes a symmetric matrix, reading only its lower triangle.
    ///
    /// On failure the error names the first leading minor that is not
    /// positive definite.
    pub fn new(a: &DMatrix<f64>, backend: &'static str) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::invalid("Cholesky factorization needs a square matrix"));
        }
        let mut l = a.clone();
        for j in 0..n {
            let mut d = l[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Factorization { backend, minor: j + 1 });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            // Column j below the diagonal; the row-major access pattern over k
            // is fine at the sizes used here.
            for i in (j + 1)..n {
                let mut s = l[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        for j in 0..n {
            for i in 0..j {
                l[(i, j)] = 0.0;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// log det A = 2 Σ log L_ii.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves L y = b.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            let row = self.l.row(i);
            for k in 0..i {
                s -= row[k] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Solves Lᵀ x = y.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// Solves A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// bᵀ A⁻¹ b.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        self.solve_lower(b).iter().map(|v| v * v).sum()
    }

    /// L w, used to colour white noise.
    pub fn mul_lower(&self, w: &[f64]) -> Vec<f64> {
        let v = &self.l * DVector::from_column_slice(w);
        v.as_slice().to_vec()
    }
}

/// Multivariate normal log-density N(0, A) at z from a factorization of A.
pub fn mvn_log_density(chol: &Cholesky, z: &[f64]) -> f64 {
    let n = z.len() as f64;
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + chol.log_det() + chol.quad_form(z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_reproduces_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.4, 2.0, 3.0, 0.5, 0.4, 0.5, 2.0]);
        let c = Cholesky::new(&a, "test").unwrap();
        let back = c.lower() * c.lower().transpose();
        assert!((back - &a).abs().max() < 1e-14);
        let x = c.solve(&[1.0, -2.0, 0.5]);
        let ax = &a * DVector::from_column_slice(&x);
        assert!((ax[0] - 1.0).abs() < 1e-13 && (ax[1] + 2.0).abs() < 1e-13);
        let det = a.determinant();
        assert!((c.log_det() - det.ln()).abs() < 1e-13);
    }

    #[test]
    fn reports_failing_minor() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 2.0, 1.0]);
        match Cholesky::new(&a, "full") {
            Err(Error::Factorization { backend, minor }) => {
                assert_eq!(backend, "full");
                assert_eq!(minor, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
