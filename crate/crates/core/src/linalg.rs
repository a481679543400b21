//! Dense symmetric positive-definite kernels: Cholesky factorization with
//! jitter escalation and triangular solves.
//!
//! Matrices here are small (subset precisions, Woodbury kernels), so a plain
//! row-oriented factorization with contiguous-slice inner products is all the
//! machinery required.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Relative jitter ladder applied when a factorization hits a non-positive
/// pivot: `jitter = rel * mean(diag)`, escalating tenfold per attempt.
const JITTER_LADDER: [f64; 7] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: Array2<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    /// Factors `a` without modification. Fails on any non-positive pivot.
    pub fn new(a: &Array2<f64>) -> Result<Self> {
        Self::factor_shifted(a, 0.0)
    }

    /// Factors `a`, escalating a diagonal jitter of
    /// `1e-10 * mean(diag)` by factors of ten up to `1e-4 * mean(diag)`
    /// before giving up.
    pub fn with_jitter(a: &Array2<f64>) -> Result<Self> {
        if let Ok(f) = Self::factor_shifted(a, 0.0) {
            return Ok(f);
        }
        let n = a.nrows();
        let mean_diag = (0..n).map(|i| a[[i, i]]).sum::<f64>() / n as f64;
        let scale = if mean_diag.is_finite() && mean_diag > 0.0 {
            mean_diag
        } else {
            1.0
        };
        for rel in JITTER_LADDER {
            if let Ok(f) = Self::factor_shifted(a, rel * scale) {
                return Ok(f);
            }
        }
        Err(Error::Numeric(format!(
            "Cholesky failed on {n}x{n} matrix after jitter escalation to {:.1e} * mean diagonal",
            JITTER_LADDER[JITTER_LADDER.len() - 1]
        )))
    }

    fn factor_shifted(a: &Array2<f64>, shift: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "Cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[[i, j]];
                if i == j {
                    s += shift;
                }
                // Rows of `l` are contiguous; this inner product is the hot loop.
                let (ri, rj) = (l.row(i), l.row(j));
                let ri = ri.as_slice().expect("row-major layout");
                let rj = rj.as_slice().expect("row-major layout");
                for k in 0..j {
                    s -= ri[k] * rj[k];
                }
                if i == j {
                    if !(s.is_finite() && s > 0.0) {
                        return Err(Error::Numeric(format!(
                            "non-positive pivot {s:.3e} at index {i}"
                        )));
                    }
                    l[[i, i]] = s.sqrt();
                } else {
                    l[[i, j]] = s / l[[j, j]];
                }
            }
        }
        Ok(Self { l, jitter: shift })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Diagonal shift that was required to factor, zero if none.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Solves `A x = b` using the stored factor.
    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }

    /// In-place solve of `A x = b`.
    pub fn solve_in_place(&self, b: &mut Array1<f64>) {
        let n = self.dim();
        assert_eq!(b.len(), n, "rhs length mismatch");
        let x = b.as_slice_mut().expect("contiguous rhs");
        // Forward: L y = b.
        for i in 0..n {
            let row = self.l.row(i);
            let row = row.as_slice().expect("row-major layout");
            let mut s = x[i];
            for k in 0..i {
                s -= row[k] * x[k];
            }
            x[i] = s / row[i];
        }
        // Backward: L^T x = y, consuming row i of L against entries below i.
        for i in (0..n).rev() {
            let row = self.l.row(i);
            let row = row.as_slice().expect("row-major layout");
            x[i] /= row[i];
            let xi = x[i];
            for k in 0..i {
                x[k] -= row[k] * xi;
            }
        }
    }

    /// Solves `A X = B` column by column.
    pub fn solve_mat(&self, b: &Array2<f64>) -> Array2<f64> {
        let mut out = b.clone();
        for mut col in out.columns_mut() {
            let mut v = col.to_owned();
            self.solve_in_place(&mut v);
            col.assign(&v);
        }
        out
    }

    /// Quadratic form `b^T A^{-1} b`.
    pub fn quad_form(&self, b: &Array1<f64>) -> f64 {
        self.solve(b).dot(b)
    }
}

/// Copies the lower triangle onto the upper one, making `m` exactly symmetric.
pub fn mirror_lower(m: &mut Array2<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in 0..i {
            m[[j, i]] = m[[i, j]];
        }
    }
}

/// Maximum absolute entry difference from exact symmetry.
pub fn asymmetry(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}
