//! Gauss-Newton Laplace posteriors held implicitly through the weighted
//! training Jacobian.
//!
//! The precision is `Omega = J^T J + V` with one weighted gradient row per
//! training point and `V` the diagonal prior precision. Full predictive
//! variances go through the Woodbury identity on the `N x N` kernel
//! `I + J V^{-1} J^T`; subset variances materialize only the `k x k`
//! principal submatrix.

use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::linalg::{mirror_lower, CholeskyFactor};
use crate::net::MlpModel;
use crate::select::SubsetSelection;

/// Largest principal submatrix the dense path will materialize.
pub const SUBSET_DIM_GUARD: usize = 20_000;

/// Observation model behind the weighted Jacobian rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Likelihood {
    /// Gaussian noise; row n is `g(x_n) / sigma_0`.
    Regression,
    /// Bernoulli logits; row n is `sqrt(p_n (1 - p_n)) * g(x_n)`.
    BinaryClassification,
}

/// Predictive variance split into its epistemic part and the reported total.
///
/// For regression the total adds the observation noise; for binary
/// classification the variance lives on the log-odds scale and has no
/// additive noise term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveVariance {
    pub epistemic: f64,
    pub total: f64,
}

impl PredictiveVariance {
    /// Standard deviation of the reported total variance.
    pub fn std(&self) -> f64 {
        self.total.sqrt()
    }
}

/// Implicit representation of the Gauss-Newton precision.
#[derive(Debug)]
pub struct LaplaceSystem {
    j: Array2<f64>,
    prior_diag: Array1<f64>,
    noise_var: f64,
    likelihood: Likelihood,
    kernel: OnceLock<std::result::Result<CholeskyFactor, String>>,
}

fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

impl LaplaceSystem {
    /// Wraps an already-weighted Jacobian.
    pub fn from_weighted_jacobian(
        j: Array2<f64>,
        prior_diag: Array1<f64>,
        noise_var: f64,
        likelihood: Likelihood,
    ) -> Result<Self> {
        if prior_diag.len() != j.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "prior_diag has {} entries for p = {}",
                prior_diag.len(),
                j.ncols()
            )));
        }
        if prior_diag.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::InvalidArgument(
                "prior_diag entries must be positive".into(),
            ));
        }
        if !(noise_var.is_finite() && noise_var > 0.0) {
            return Err(Error::InvalidArgument("noise_var must be positive".into()));
        }
        Ok(Self {
            j,
            prior_diag,
            noise_var,
            likelihood,
            kernel: OnceLock::new(),
        })
    }

    /// Assembles the system row by row from per-sample model gradients,
    /// applying the likelihood-specific row weight.
    pub fn build(
        model: &MlpModel,
        x: &Array2<f64>,
        likelihood: Likelihood,
        noise_var: f64,
        prior_diag: Array1<f64>,
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        let p = model.p();
        let mut j = Array2::<f64>::zeros((n, p));
        let mut ws = model.gradient_workspace();
        let inv_sigma = 1.0 / noise_var.sqrt();
        for (idx, xi) in x.rows().into_iter().enumerate() {
            let mut row = j.row_mut(idx);
            let f = model.output_and_gradient(&mut ws, xi, row.as_slice_mut().unwrap())?;
            let weight = match likelihood {
                Likelihood::Regression => inv_sigma,
                Likelihood::BinaryClassification => {
                    let pn = sigmoid(f);
                    (pn * (1.0 - pn)).sqrt()
                }
            };
            row.mapv_inplace(|g| g * weight);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { index: idx });
            }
        }
        Self::from_weighted_jacobian(j, prior_diag, noise_var, likelihood)
    }

    pub fn n(&self) -> usize {
        self.j.nrows()
    }

    pub fn p(&self) -> usize {
        self.j.ncols()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    pub fn prior_diag(&self) -> &Array1<f64> {
        &self.prior_diag
    }

    /// Weighted Jacobian rows (one per training point).
    pub fn jacobian(&self) -> &Array2<f64> {
        &self.j
    }

    /// `diag(Omega)` without materializing the full matrix.
    pub fn diag_precision(&self) -> Array1<f64> {
        let mut d = self.prior_diag.clone();
        for row in self.j.rows() {
            for (di, &v) in d.iter_mut().zip(row.iter()) {
                *di += v * v;
            }
        }
        d
    }

    fn kernel_factor(&self) -> Result<&CholeskyFactor> {
        let entry = self.kernel.get_or_init(|| {
            // K = I_N + J V^{-1} J^T
            let inv_v = self.prior_diag.mapv(|v| 1.0 / v);
            let scaled = &self.j * &inv_v; // broadcast over rows
            let mut k = scaled.dot(&self.j.t());
            for i in 0..k.nrows() {
                k[[i, i]] += 1.0;
            }
            mirror_lower(&mut k);
            CholeskyFactor::with_jitter(&k).map_err(|e| e.to_string())
        });
        entry
            .as_ref()
            .map_err(|msg| Error::Numeric(format!("Woodbury kernel: {msg}")))
    }

    fn total_from_epistemic(&self, epistemic: f64) -> PredictiveVariance {
        let total = match self.likelihood {
            Likelihood::Regression => self.noise_var + epistemic,
            Likelihood::BinaryClassification => epistemic,
        };
        PredictiveVariance { epistemic, total }
    }

    /// `g*^T Omega^{-1} g*` through the Woodbury identity; never touches a
    /// `p x p` matrix.
    pub fn full_predictive_variance(
        &self,
        g_star: ArrayView1<'_, f64>,
    ) -> Result<PredictiveVariance> {
        if g_star.len() != self.p() {
            return Err(Error::ShapeMismatch(format!(
                "gradient has {} entries for p = {}",
                g_star.len(),
                self.p()
            )));
        }
        let g_tilde = &g_star / &self.prior_diag;
        let q1 = g_star.dot(&g_tilde);
        let w = self.j.dot(&g_tilde);
        let z = self.kernel_factor()?.solve(&w);
        let epistemic = (q1 - w.dot(&z)).max(0.0);
        Ok(self.total_from_epistemic(epistemic))
    }

    /// Predictive variance of the sub-network surrogate for subset `s`.
    ///
    /// Realized as `g_S^T Omega_SS^{-1} g_S`, which matches the Moore-Penrose
    /// pseudoinverse of the zero-padded surrogate exactly: that pseudoinverse
    /// embeds `Omega_SS^{-1}` on `S` and is zero elsewhere.
    pub fn subset_predictive_variance(
        &self,
        s: &SubsetSelection,
        g_star: ArrayView1<'_, f64>,
    ) -> Result<PredictiveVariance> {
        SubsetPosterior::new(self, s.indices())?.predictive_variance(g_star)
    }

    /// Dense `k x k` principal submatrix of `Omega`, exactly symmetric.
    pub fn subset_precision(&self, indices: &[usize]) -> Result<Array2<f64>> {
        if indices.len() > SUBSET_DIM_GUARD {
            return Err(Error::Capacity(format!(
                "requested {} x {} submatrix exceeds the {} guard",
                indices.len(),
                indices.len(),
                SUBSET_DIM_GUARD
            )));
        }
        validate_indices(indices, self.p())?;
        let g = self.j.select(Axis(1), indices);
        let mut omega = g.t().dot(&g);
        for (r, &idx) in indices.iter().enumerate() {
            omega[[r, r]] += self.prior_diag[idx];
        }
        mirror_lower(&mut omega);
        Ok(omega)
    }
}

/// Checks that a subset index list is nonempty, in-range, and duplicate-free.
pub(crate) fn validate_indices(indices: &[usize], p: usize) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::Selection("subset is empty".into()));
    }
    let mut seen = vec![false; p];
    for &i in indices {
        if i >= p {
            return Err(Error::Selection(format!(
                "index {i} out of range for p = {p}"
            )));
        }
        if seen[i] {
            return Err(Error::Selection(format!("duplicate index {i}")));
        }
        seen[i] = true;
    }
    Ok(())
}

/// A factored subset posterior, reusable across many query points.
#[derive(Debug)]
pub struct SubsetPosterior {
    indices: Vec<usize>,
    chol: CholeskyFactor,
    noise_var: f64,
    likelihood: Likelihood,
}

impl SubsetPosterior {
    pub fn new(sys: &LaplaceSystem, indices: &[usize]) -> Result<Self> {
        let omega_ss = sys.subset_precision(indices)?;
        let chol = CholeskyFactor::with_jitter(&omega_ss)?;
        Ok(Self {
            indices: indices.to_vec(),
            chol,
            noise_var: sys.noise_var(),
            likelihood: sys.likelihood(),
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Variance for a full-length query gradient; entries outside the subset
    /// are ignored per the pseudoinverse semantics.
    pub fn predictive_variance(&self, g_star: ArrayView1<'_, f64>) -> Result<PredictiveVariance> {
        let g_s: Array1<f64> = self.indices.iter().map(|&i| g_star[i]).collect();
        let epistemic = self.chol.quad_form(&g_s).max(0.0);
        let total = match self.likelihood {
            Likelihood::Regression => self.noise_var + epistemic,
            Likelihood::BinaryClassification => epistemic,
        };
        Ok(PredictiveVariance { epistemic, total })
    }
}

/// Plug-in observation-noise estimate: residual mean squared error of the
/// model on `(x, y)`, floored at `1e-3`.
pub fn estimate_noise_var(model: &MlpModel, x: &Array2<f64>, y: &Array1<f64>) -> Result<f64> {
    Ok(crate::net::mean_squared_error(model, x, y)?.max(1e-3))
}
