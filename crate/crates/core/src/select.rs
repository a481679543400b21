//! Parameter-subset selection strategies.
//!
//! Gradient-driven screening ranks parameters by their mean squared output
//! gradient over a reference dataset; the greedy refquery eliminates from a
//! candidate pool by repeatedly taking the largest diagonal of the evolving
//! precision and applying a Schur-complement update. The architectural
//! baselines (last-k, last-layer, smallest-diagonal) share the same
//! tie-breaking contract: ascending parameter index.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::laplace::LaplaceSystem;
use crate::net::MlpModel;

/// Pivot threshold below which greedy elimination reports degeneracy.
const GREEDY_PIVOT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMethod {
    GradientLaplace,
    GreedyLaplace,
    SubnetDiagonal,
    LastK,
    NeuralLinear,
    Explicit,
}

impl std::fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SelectionMethod::GradientLaplace => "gradient-laplace",
            SelectionMethod::GreedyLaplace => "greedy-laplace",
            SelectionMethod::SubnetDiagonal => "subnet-diagonal",
            SelectionMethod::LastK => "last-k",
            SelectionMethod::NeuralLinear => "neural-linear",
            SelectionMethod::Explicit => "explicit",
        };
        f.write_str(s)
    }
}

/// Candidate-pool sizing for greedy selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolPolicy {
    /// `min(2k, p)`.
    #[default]
    Default,
    /// `min(2k + 1000, p - 1, 30000)`, clamped to at least `k`.
    Extended,
}

impl PoolPolicy {
    pub fn pool_size(self, k: usize, p: usize) -> usize {
        let raw = match self {
            PoolPolicy::Default => (2 * k).min(p),
            PoolPolicy::Extended => (2 * k + 1000).min(p.saturating_sub(1)).min(30_000),
        };
        raw.clamp(k, p)
    }
}

impl std::fmt::Display for PoolPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolPolicy::Default => "default",
            PoolPolicy::Extended => "extended",
        })
    }
}

/// An ordered set of distinct parameter indices with provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetSelection {
    indices: Vec<usize>,
    method: SelectionMethod,
    k: usize,
}

impl SubsetSelection {
    fn new(indices: Vec<usize>, method: SelectionMethod) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Selection("selection is empty".into()));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Selection("selection contains duplicates".into()));
        }
        let k = indices.len();
        Ok(Self { indices, method, k })
    }

    /// Wraps a caller-supplied index list.
    pub fn explicit(indices: Vec<usize>) -> Result<Self> {
        Self::new(indices, SelectionMethod::Explicit)
    }

    /// Indices in canonical order (ascending for every method except
    /// greedy, which preserves its selection order).
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Ascending view regardless of provenance.
    pub fn sorted_indices(&self) -> Vec<usize> {
        let mut v = self.indices.clone();
        v.sort_unstable();
        v
    }

    pub fn method(&self) -> SelectionMethod {
        self.method
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Writes the selection as one global index per line, preceded by a
    /// header comment recording provenance.
    pub fn export<W: Write>(&self, w: &mut W, seed: u64, pool: PoolPolicy) -> Result<()> {
        writeln!(
            w,
            "# method={} k={} seed={} pool={}",
            self.method, self.k, seed, pool
        )?;
        for i in &self.indices {
            writeln!(w, "{i}")?;
        }
        Ok(())
    }
}

/// Componentwise mean squared gradient over a reference dataset.
#[derive(Debug, Clone)]
pub struct GradientSummary {
    tilde_g: Array1<f64>,
}

impl GradientSummary {
    /// Wraps raw summary values (all entries must be nonnegative).
    pub fn from_values(tilde_g: Array1<f64>) -> Result<Self> {
        if tilde_g.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "summary entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { tilde_g })
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.tilde_g
    }

    pub fn p(&self) -> usize {
        self.tilde_g.len()
    }
}

/// Exact componentwise mean of squared per-sample gradients over `reference`.
pub fn gradient_summary(model: &MlpModel, reference: &Array2<f64>) -> Result<GradientSummary> {
    let n = reference.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("reference dataset is empty".into()));
    }
    let mut acc = Array1::<f64>::zeros(model.p());
    let mut grad = vec![0.0; model.p()];
    let mut ws = model.gradient_workspace();
    for x in reference.rows() {
        model.output_and_gradient(&mut ws, x, &mut grad)?;
        for (a, &g) in acc.iter_mut().zip(grad.iter()) {
            *a += g * g;
        }
    }
    acc /= n as f64;
    GradientSummary::from_values(acc)
}

/// Indices of the `k` largest (or smallest) entries; ties broken by
/// ascending index; result sorted ascending.
fn rank_k(values: ArrayView1<'_, f64>, k: usize, largest: bool) -> Result<Vec<usize>> {
    let p = values.len();
    if k == 0 || k > p {
        return Err(Error::Selection(format!(
            "k = {k} out of range for p = {p}"
        )));
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_unstable_by(|&a, &b| {
        let cmp = values[a].partial_cmp(&values[b]).expect("finite summary");
        let cmp = if largest { cmp.reverse() } else { cmp };
        cmp.then_with(|| a.cmp(&b))
    });
    let mut picked: Vec<usize> = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// The `k` indices with the largest mean squared gradients.
pub fn select_gradient_laplace(summary: &GradientSummary, k: usize) -> Result<SubsetSelection> {
    let picked = rank_k(summary.tilde_g.view(), k, true)?;
    SubsetSelection::new(picked, SelectionMethod::GradientLaplace)
}

/// The `k` indices with the smallest precision diagonal.
pub fn select_subnet_diagonal(diag: ArrayView1<'_, f64>, k: usize) -> Result<SubsetSelection> {
    let picked = rank_k(diag, k, false)?;
    SubsetSelection::new(picked, SelectionMethod::SubnetDiagonal)
}

/// The final `k` parameters under the frozen flattening order.
pub fn select_last_k(model: &MlpModel, k: usize) -> Result<SubsetSelection> {
    let p = model.p();
    if k == 0 || k > p {
        return Err(Error::Selection(format!(
            "k = {k} out of range for p = {p}"
        )));
    }
    SubsetSelection::new((p - k..p).collect(), SelectionMethod::LastK)
}

/// Exactly the last layer's weight and bias indices; `k` is implied by the
/// architecture.
pub fn select_neural_linear(model: &MlpModel) -> SubsetSelection {
    let last = model.layers().len() - 1;
    let r = model.layer_param_range(last);
    SubsetSelection::new(r.collect(), SelectionMethod::NeuralLinear)
        .expect("last layer is nonempty")
}

/// Step-by-step record of a greedy elimination run on a dense pool matrix.
#[derive(Debug, Clone)]
pub struct GreedyTrace {
    /// Pool-local pivot positions in selection order.
    pub order: Vec<usize>,
    /// The remaining-variable precision after each elimination.
    pub steps: Vec<Array2<f64>>,
    /// Matrix entries touched, for complexity accounting.
    pub ops: u64,
}

fn greedy_core(
    pool: &Array2<f64>,
    k: usize,
    mut observer: impl FnMut(&Array2<f64>),
) -> Result<(Vec<usize>, u64)> {
    let m0 = pool.nrows();
    if pool.ncols() != m0 {
        return Err(Error::ShapeMismatch("pool matrix must be square".into()));
    }
    if k == 0 || k > m0 {
        return Err(Error::Selection(format!(
            "k = {k} out of range for pool of size {m0}"
        )));
    }
    let mut mat = pool.clone();
    // active[i] = pool-local index of row/col i of `mat`; stays ascending, so
    // scanning for the max diagonal breaks ties toward the smallest index.
    let mut active: Vec<usize> = (0..m0).collect();
    let mut order = Vec::with_capacity(k);
    let mut ops: u64 = 0;

    for _ in 0..k {
        let m = mat.nrows();
        let mut q = 0;
        for i in 1..m {
            if mat[[i, i]] > mat[[q, q]] {
                q = i;
            }
        }
        ops += m as u64;
        let pivot = mat[[q, q]];
        if !(pivot.is_finite() && pivot > GREEDY_PIVOT_FLOOR) {
            return Err(Error::Numeric(format!(
                "degenerate greedy pivot {pivot:.3e} at pool index {}",
                active[q]
            )));
        }
        order.push(active.remove(q));

        let mut next = Array2::<f64>::zeros((m - 1, m - 1));
        for r in 0..m - 1 {
            let rr = if r < q { r } else { r + 1 };
            for s in 0..m - 1 {
                let ss = if s < q { s } else { s + 1 };
                next[[r, s]] = mat[[rr, ss]] - mat[[rr, q]] * mat[[q, ss]] / pivot;
            }
        }
        ops += ((m - 1) * (m - 1)) as u64;
        mat = next;
        observer(&mat);
    }
    Ok((order, ops))
}

/// Greedy elimination order on an explicit pool precision, without keeping
/// intermediate matrices.
pub fn greedy_order(pool: &Array2<f64>, k: usize) -> Result<Vec<usize>> {
    greedy_core(pool, k, |_| {}).map(|(order, _)| order)
}

/// Runs greedy elimination on an explicit pool precision, keeping every
/// intermediate matrix. Intended for verification and diagnostics.
pub fn greedy_elimination_trace(pool: &Array2<f64>, k: usize) -> Result<GreedyTrace> {
    let mut steps = Vec::with_capacity(k);
    let (order, ops) = greedy_core(pool, k, |m| steps.push(m.clone()))?;
    Ok(GreedyTrace { order, steps, ops })
}

/// Greedy selection: gradient-based screening to a candidate pool of size
/// `pool.pool_size(k, p)`, then `k` rounds of largest-diagonal pivoting with
/// Schur-complement updates. The returned indices are in selection order.
pub fn select_greedy_laplace(
    sys: &LaplaceSystem,
    summary: &GradientSummary,
    k: usize,
    pool: PoolPolicy,
) -> Result<SubsetSelection> {
    let p = sys.p();
    if summary.p() != p {
        return Err(Error::ShapeMismatch(format!(
            "summary has {} entries for p = {p}",
            summary.p()
        )));
    }
    if k == 0 || k > p {
        return Err(Error::Selection(format!(
            "k = {k} out of range for p = {p}"
        )));
    }
    let pool_size = pool.pool_size(k, p);
    let candidates = select_gradient_laplace(summary, pool_size)?;
    let omega_pool = sys.subset_precision(candidates.indices())?;
    let (local_order, _) = greedy_core(&omega_pool, k, |_| {})?;
    let global: Vec<usize> = local_order
        .iter()
        .map(|&i| candidates.indices()[i])
        .collect();
    SubsetSelection::new(global, SelectionMethod::GreedyLaplace)
}
