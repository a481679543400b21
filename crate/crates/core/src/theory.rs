//! Idealized predictive variance over a population second-moment matrix, and
//! brute-force verification of its ordering guarantees on small instances.
//!
//! `ipv` evaluates the trace form
//! `(sigma0^2 / N) * tr((Lambda_SS + (sigma0^2/N) V_SS)^{-1} Lambda_SS)`,
//! which equals the expectation form of the metric for population gradients
//! with second moment `Lambda`. The discrepancy `dis(S)` is the gap to the
//! full-index value, nonnegative for every subset and monotone under
//! nesting; the verifiers below enumerate subsets exhaustively and report
//! worst margins.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, CholeskyFactor};
use crate::rng::{derive_seed, rng_from_seed};
use crate::select::{select_gradient_laplace, GradientSummary};

/// Ordering assertions use this absolute slack.
const ORDER_TOL: f64 = 1e-10;

/// Enumeration guard: the power set must stay small.
pub const ENUM_MAX_P: usize = 12;

/// A population instance: second-moment matrix, prior, noise, sample count.
#[derive(Debug, Clone)]
pub struct IpvInstance {
    lambda: Array2<f64>,
    prior_diag: Array1<f64>,
    noise_var: f64,
    n: u64,
}

impl IpvInstance {
    pub fn new(
        lambda: Array2<f64>,
        prior_diag: Array1<f64>,
        noise_var: f64,
        n: u64,
    ) -> Result<Self> {
        let p = lambda.nrows();
        if p == 0 || lambda.ncols() != p {
            return Err(Error::ShapeMismatch(format!(
                "population matrix must be square and nonempty, got {}x{}",
                p,
                lambda.ncols()
            )));
        }
        if asymmetry(&lambda) > 1e-12 {
            return Err(Error::InvalidArgument(
                "population matrix is not symmetric to 1e-12".into(),
            ));
        }
        // Eigenvalues >= -1e-10 iff Lambda + 1e-10 I is PSD; the jittered
        // factorization of the shifted matrix certifies it.
        let mut shifted = lambda.clone();
        for i in 0..p {
            shifted[[i, i]] += 1e-10;
        }
        if CholeskyFactor::with_jitter(&shifted).is_err() {
            return Err(Error::InvalidArgument(
                "population matrix has eigenvalues below -1e-10".into(),
            ));
        }
        if prior_diag.len() != p {
            return Err(Error::ShapeMismatch("prior_diag length mismatch".into()));
        }
        if prior_diag.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::InvalidArgument("prior_diag must be positive".into()));
        }
        if !(noise_var.is_finite() && noise_var > 0.0) {
            return Err(Error::InvalidArgument("noise_var must be positive".into()));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        Ok(Self {
            lambda,
            prior_diag,
            noise_var,
            n,
        })
    }

    pub fn p(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn lambda(&self) -> &Array2<f64> {
        &self.lambda
    }

    pub fn prior_diag(&self) -> &Array1<f64> {
        &self.prior_diag
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Same instance with a different sample count.
    pub fn with_n(&self, n: u64) -> Self {
        Self { n, ..self.clone() }
    }
}

fn submatrix(m: &Array2<f64>, s: &[usize]) -> Array2<f64> {
    let k = s.len();
    Array2::from_shape_fn((k, k), |(a, b)| m[[s[a], s[b]]])
}

/// Shared trace kernel: `outer_scale * tr((L_SS + prior_scale V_SS)^{-1} M_SS)`.
fn weighted_trace(
    lambda: &Array2<f64>,
    cross: &Array2<f64>,
    prior_diag: &Array1<f64>,
    prior_scale: f64,
    outer_scale: f64,
    s: &[usize],
) -> Result<f64> {
    crate::laplace::validate_indices(s, lambda.nrows())?;
    let mut m = submatrix(lambda, s);
    for (r, &i) in s.iter().enumerate() {
        m[[r, r]] += prior_scale * prior_diag[i];
    }
    let chol = CholeskyFactor::with_jitter(&m)?;
    let x = chol.solve_mat(&submatrix(cross, s));
    let trace: f64 = (0..s.len()).map(|i| x[[i, i]]).sum();
    Ok((outer_scale * trace).max(0.0))
}

/// Idealized predictive variance of the subset `s`.
pub fn ipv(inst: &IpvInstance, s: &[usize]) -> Result<f64> {
    let c = inst.noise_var / inst.n as f64;
    weighted_trace(&inst.lambda, &inst.lambda, &inst.prior_diag, c, c, s)
}

/// IPV of the full index set.
pub fn ipv_full(inst: &IpvInstance) -> Result<f64> {
    let all: Vec<usize> = (0..inst.p()).collect();
    ipv(inst, &all)
}

/// Discrepancy `ipv_full - ipv(S)`; nonnegative for every subset.
pub fn dis(inst: &IpvInstance, s: &[usize]) -> Result<f64> {
    let d = ipv_full(inst)? - ipv(inst, s)?;
    debug_assert!(d >= -ORDER_TOL, "discrepancy {d} below tolerance");
    Ok(d.max(0.0))
}

/// Classification analogue: carries the Bernoulli-variance-weighted second
/// moment and a (possibly equal) supplied cross-moment.
#[derive(Debug, Clone)]
pub struct ClassificationIpvInstance {
    lambda_c: Array2<f64>,
    cross_moment: Array2<f64>,
    prior_diag: Array1<f64>,
    n: u64,
}

fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

/// Empirical `mean_i u_i g_i g_i^T` over gradient rows, with `u_i` the
/// Bernoulli variance at logit `f_i`.
pub fn empirical_weighted_moment(
    gradients: &Array2<f64>,
    logits: &Array1<f64>,
) -> Result<Array2<f64>> {
    let n = gradients.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("no gradient samples".into()));
    }
    if logits.len() != n {
        return Err(Error::ShapeMismatch(
            "one logit per gradient row required".into(),
        ));
    }
    let p = gradients.ncols();
    let mut m = Array2::<f64>::zeros((p, p));
    for (row, &f) in gradients.rows().into_iter().zip(logits.iter()) {
        let pr = sigmoid(f);
        let u = pr * (1.0 - pr);
        for a in 0..p {
            let ua = u * row[a];
            for b in 0..p {
                m[[a, b]] += ua * row[b];
            }
        }
    }
    m /= n as f64;
    Ok(m)
}

impl ClassificationIpvInstance {
    pub fn new(
        lambda_c: Array2<f64>,
        cross_moment: Array2<f64>,
        prior_diag: Array1<f64>,
        n: u64,
    ) -> Result<Self> {
        let p = lambda_c.nrows();
        if cross_moment.dim() != (p, p) {
            return Err(Error::ShapeMismatch(
                "cross moment must match population matrix shape".into(),
            ));
        }
        // Shape/PSD/prior validation reuses the regression instance checks.
        IpvInstance::new(lambda_c.clone(), prior_diag.clone(), 1.0, n.max(1))?;
        Ok(Self {
            lambda_c,
            cross_moment,
            prior_diag,
            n,
        })
    }

    /// Canonical instance: the cross moment equals the weighted second
    /// moment computed from the supplied sample set.
    pub fn from_samples(
        gradients: &Array2<f64>,
        logits: &Array1<f64>,
        prior_diag: Array1<f64>,
        n: u64,
    ) -> Result<Self> {
        let m = empirical_weighted_moment(gradients, logits)?;
        Self::new(m.clone(), m, prior_diag, n)
    }

    pub fn p(&self) -> usize {
        self.lambda_c.nrows()
    }
}

/// Classification IPV: `(1/N) tr((Lambda^C_SS + (1/N) V_SS)^{-1} M^C_SS)`.
pub fn ipv_classification(inst: &ClassificationIpvInstance, s: &[usize]) -> Result<f64> {
    let c = 1.0 / inst.n as f64;
    weighted_trace(
        &inst.lambda_c,
        &inst.cross_moment,
        &inst.prior_diag,
        c,
        c,
        s,
    )
}

/// `D + a I + b 11^T` for a positive diagonal `d`.
pub fn cpi_lambda(d: &Array1<f64>, a: f64, b: f64) -> Array2<f64> {
    let p = d.len();
    let mut m = Array2::from_elem((p, p), b);
    for i in 0..p {
        m[[i, i]] += d[i] + a;
    }
    m
}

/// Seeded instance in the diagonal-plus-permutation-invariant class:
/// `Lambda = D + a I + b 11^T` with `D` spread by `diag_spread`, `V = I`.
pub fn make_cpi_instance(p: usize, seed: u64, diag_spread: f64) -> Result<IpvInstance> {
    if p < 2 {
        return Err(Error::Construction("need p >= 2".into()));
    }
    if !(diag_spread.is_finite() && diag_spread >= 0.0) {
        return Err(Error::Construction("diag_spread must be >= 0".into()));
    }
    let mut rng = rng_from_seed(seed);
    let d = Array1::from_shape_fn(p, |_| 1.0 + diag_spread * rng.gen::<f64>());
    let a: f64 = rng.gen::<f64>();
    let b: f64 = rng.gen::<f64>();
    IpvInstance::new(cpi_lambda(&d, a, b), Array1::ones(p), 1.0, 1)
}

/// Seeded epsilon-diagonally-dominant instance whose sorted diagonal decays
/// geometrically by `(1+eps)/(1-eps) * (1+ratio_margin)` per rank, so the
/// diagonal-ratio conditions hold at every cut. Off-diagonals are random and
/// scaled so each row's absolute off-diagonal sum stays below `0.9 * eps`
/// times its diagonal.
pub fn make_dd_instance(
    p: usize,
    epsilon: f64,
    ratio_margin: f64,
    seed: u64,
) -> Result<IpvInstance> {
    if p < 2 {
        return Err(Error::Construction("need p >= 2".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Construction("epsilon must lie in (0, 1)".into()));
    }
    if !(ratio_margin.is_finite() && ratio_margin >= 0.0) {
        return Err(Error::Construction("ratio_margin must be >= 0".into()));
    }
    let base = (1.0 + epsilon) / (1.0 - epsilon) * (1.0 + ratio_margin);
    let top = base.powi(p as i32 - 1);
    if !top.is_finite() {
        return Err(Error::Construction(format!(
            "diagonal range {base}^{} overflows",
            p - 1
        )));
    }
    let mut rng = rng_from_seed(seed);
    // Descending diagonal values assigned to a seeded permutation of slots.
    let mut slots: Vec<usize> = (0..p).collect();
    for i in (1..p).rev() {
        slots.swap(i, rng.gen_range(0..=i));
    }
    let mut diag = vec![0.0; p];
    for (rank, &slot) in slots.iter().enumerate() {
        diag[slot] = base.powi((p - 1 - rank) as i32);
    }
    let mut m = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        m[[i, i]] = diag[i];
    }
    let budget = 0.9 * epsilon / (p - 1) as f64;
    for i in 0..p {
        for j in 0..i {
            let u: f64 = rng.gen_range(-1.0..1.0);
            let v = u * budget * diag[i].min(diag[j]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    IpvInstance::new(m, Array1::ones(p), 1.0, 1)
}

/// Seeded generic PSD instance for nesting checks: `Lambda = G G^T / p`
/// with uniform entries, unit prior, and varied noise and sample count.
/// Every fourth seed produces a near-singular matrix (one factor column
/// zeroed, then lifted by `1e-8 I`).
pub fn make_random_psd_instance(p: usize, seed: u64) -> Result<IpvInstance> {
    if p < 2 {
        return Err(Error::Construction("need p >= 2".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut g = Array2::from_shape_fn((p, p), |_| rng.gen_range(-1.0..1.0));
    let near_singular = seed % 4 == 3;
    if near_singular {
        g.column_mut(p - 1).fill(0.0);
    }
    let mut lambda = g.dot(&g.t()) / p as f64;
    if near_singular {
        for i in 0..p {
            lambda[[i, i]] += 1e-8;
        }
    }
    crate::linalg::mirror_lower(&mut lambda);
    let noise_var = rng.gen_range(0.5..2.0);
    let n = [1u64, 10, 100][(seed % 3) as usize];
    IpvInstance::new(lambda, Array1::ones(p), noise_var, n)
}

/// IPV and discrepancy for every nonempty subset of a small instance.
#[derive(Debug, Clone, Serialize)]
pub struct IpvReport {
    pub ipv_full: f64,
    pub subsets: Vec<SubsetIpv>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubsetIpv {
    pub indices: Vec<usize>,
    pub ipv: f64,
    pub dis: f64,
}

fn mask_indices(mask: u32, p: usize) -> Vec<usize> {
    (0..p).filter(|&i| mask & (1 << i) != 0).collect()
}

/// Evaluates IPV on the whole power set (excluding the empty set).
pub fn enumerate_ipv(inst: &IpvInstance, max_p: usize) -> Result<IpvReport> {
    let p = inst.p();
    if p > max_p.min(ENUM_MAX_P) {
        return Err(Error::Capacity(format!(
            "p = {p} exceeds enumeration cap {}",
            max_p.min(ENUM_MAX_P)
        )));
    }
    let full = ipv_full(inst)?;
    let mut subsets = Vec::with_capacity((1usize << p) - 1);
    for mask in 1u32..(1u32 << p) {
        let indices = mask_indices(mask, p);
        let v = ipv(inst, &indices)?;
        subsets.push(SubsetIpv {
            indices,
            ipv: v,
            dis: (full - v).max(0.0),
        });
    }
    Ok(IpvReport {
        ipv_full: full,
        subsets,
    })
}

/// Verification outcome for one theorem check on one instance.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremReport {
    pub theorem: String,
    pub p: usize,
    pub passed: bool,
    /// Smallest slack observed across all checked inequalities.
    pub worst_margin: f64,
    /// First violated inequality, if any.
    pub violation: Option<ViolationRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViolationRecord {
    pub subset_a: Vec<usize>,
    pub subset_b: Vec<usize>,
    pub value_a: f64,
    pub value_b: f64,
}

/// Nesting check over precomputed power-set values: every proper pair
/// `S ⊂ S'` must satisfy `ipv(S) <= ipv(S') + tol`. Split out from
/// [`verify_theorem1`] so corrupted value tables can be fed in directly.
pub fn check_monotone_nesting(values: &BTreeMap<u32, f64>, p: usize, tol: f64) -> TheoremReport {
    let mut worst = f64::INFINITY;
    let mut violation = None;
    for (&mask_big, &v_big) in values {
        // Iterate proper nonempty submasks.
        let mut sub = (mask_big.wrapping_sub(1)) & mask_big;
        while sub != 0 {
            if let Some(&v_small) = values.get(&sub) {
                let margin = v_big - v_small;
                if margin < worst {
                    worst = margin;
                }
                if margin < -tol && violation.is_none() {
                    violation = Some(ViolationRecord {
                        subset_a: mask_indices(sub, p),
                        subset_b: mask_indices(mask_big, p),
                        value_a: v_small,
                        value_b: v_big,
                    });
                }
            }
            sub = (sub.wrapping_sub(1)) & mask_big;
        }
    }
    TheoremReport {
        theorem: "monotone-nesting".into(),
        p,
        passed: worst >= -tol,
        worst_margin: worst,
        violation,
    }
}

/// Exhaustive check that IPV is monotone under subset nesting.
pub fn verify_theorem1(inst: &IpvInstance, max_p: usize) -> Result<TheoremReport> {
    let p = inst.p();
    let report = enumerate_ipv(inst, max_p)?;
    let mut values = BTreeMap::new();
    for s in &report.subsets {
        let mask = s.indices.iter().fold(0u32, |m, &i| m | (1 << i));
        values.insert(mask, s.ipv);
    }
    let mut out = check_monotone_nesting(&values, p, ORDER_TOL);
    out.theorem = "nesting-monotonicity".into();
    Ok(out)
}

/// Indices of the k largest (or smallest) diagonal entries, ties ascending.
fn diag_rank(lambda: &Array2<f64>, k: usize, largest: bool) -> Vec<usize> {
    let p = lambda.nrows();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        let cmp = lambda[[a, a]].partial_cmp(&lambda[[b, b]]).unwrap();
        let cmp = if largest { cmp.reverse() } else { cmp };
        cmp.then_with(|| a.cmp(&b))
    });
    let mut v = order[..k].to_vec();
    v.sort_unstable();
    v
}

fn combinations(p: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, p: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..p {
            cur.push(i);
            rec(i + 1, p, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, p, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// On a diagonal-plus-permutation-invariant instance with an equal-prior
/// `V = cI`, the top-k-diagonal subset must attain the maximum IPV over all
/// size-k subsets and the bottom-k subset the minimum.
pub fn verify_theorem2(inst: &IpvInstance, k: usize) -> Result<TheoremReport> {
    let p = inst.p();
    if p > ENUM_MAX_P {
        return Err(Error::Capacity(format!("p = {p} exceeds enumeration cap")));
    }
    if k == 0 || k > p {
        return Err(Error::InvalidArgument(format!("k = {k} out of range")));
    }
    let first_prior = inst.prior_diag[0];
    if inst
        .prior_diag
        .iter()
        .any(|&v| (v - first_prior).abs() > 1e-12)
    {
        return Err(Error::InvalidArgument(
            "equal prior precisions required".into(),
        ));
    }
    // Class membership: every off-diagonal entry shares one value.
    let off = inst.lambda[[0, 1]];
    for i in 0..p {
        for j in 0..p {
            if i != j && (inst.lambda[[i, j]] - off).abs() > 1e-12 {
                return Err(Error::InvalidArgument(
                    "matrix is not diagonal-plus-permutation-invariant".into(),
                ));
            }
        }
    }

    let top = diag_rank(&inst.lambda, k, true);
    let bottom = diag_rank(&inst.lambda, k, false);
    let ipv_top = ipv(inst, &top)?;
    let ipv_bottom = ipv(inst, &bottom)?;

    let mut worst = f64::INFINITY;
    let mut violation = None;
    for s in combinations(p, k) {
        let v = ipv(inst, &s)?;
        for (margin, lo, hi, lo_set, hi_set) in [
            (ipv_top - v, v, ipv_top, s.clone(), top.clone()),
            (v - ipv_bottom, ipv_bottom, v, bottom.clone(), s.clone()),
        ] {
            if margin < worst {
                worst = margin;
            }
            if margin < -ORDER_TOL && violation.is_none() {
                violation = Some(ViolationRecord {
                    subset_a: lo_set,
                    subset_b: hi_set,
                    value_a: lo,
                    value_b: hi,
                });
            }
        }
    }
    Ok(TheoremReport {
        theorem: "top-k-diagonal-optimality".into(),
        p,
        passed: worst >= -ORDER_TOL,
        worst_margin: worst,
        violation,
    })
}

/// Tightest epsilon for which the matrix is epsilon-diagonally dominant:
/// the largest row ratio of off-diagonal absolute sum to diagonal entry.
pub fn dominance_epsilon(lambda: &Array2<f64>) -> f64 {
    let p = lambda.nrows();
    let mut eps = 0.0f64;
    for i in 0..p {
        let off: f64 = (0..p)
            .filter(|&j| j != i)
            .map(|j| lambda[[i, j]].abs())
            .sum();
        eps = eps.max(off / lambda[[i, i]]);
    }
    eps
}

/// On an epsilon-dominant instance whose diagonal-ratio condition holds at
/// `k`, the top-k discrepancy must not exceed the bottom-k discrepancy;
/// under the stronger consecutive-ratio condition it must also beat every
/// size-k subset disjoint from the top-k set.
pub fn verify_theorem3(inst: &IpvInstance, k: usize) -> Result<TheoremReport> {
    let p = inst.p();
    if p > ENUM_MAX_P {
        return Err(Error::Capacity(format!("p = {p} exceeds enumeration cap")));
    }
    if k == 0 || 2 * k > p {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= p/2, got k = {k}, p = {p}"
        )));
    }
    let eps = dominance_epsilon(&inst.lambda);
    if eps >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "matrix is not diagonally dominant (eps = {eps:.3})"
        )));
    }
    let ratio = (1.0 + eps) / (1.0 - eps);
    let by_rank = {
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| {
            inst.lambda[[b, b]]
                .partial_cmp(&inst.lambda[[a, a]])
                .unwrap()
                .then_with(|| a.cmp(&b))
        });
        order
    };
    let d_at = |rank: usize| inst.lambda[[by_rank[rank], by_rank[rank]]];
    if d_at(k - 1) / d_at(p - k) <= ratio {
        return Err(Error::InvalidArgument(format!(
            "diagonal ratio condition fails at k = {k}: {:.4} <= {ratio:.4}",
            d_at(k - 1) / d_at(p - k)
        )));
    }
    let strong = d_at(k - 1) / d_at(k) > ratio;

    let top = diag_rank(&inst.lambda, k, true);
    let bottom = diag_rank(&inst.lambda, k, false);
    let dis_top = dis(inst, &top)?;
    let dis_bottom = dis(inst, &bottom)?;

    let mut worst = dis_bottom - dis_top;
    let mut violation = None;
    if worst < -ORDER_TOL {
        violation = Some(ViolationRecord {
            subset_a: top.clone(),
            subset_b: bottom.clone(),
            value_a: dis_top,
            value_b: dis_bottom,
        });
    }
    if strong {
        for s in combinations(p, k) {
            if s.iter().any(|i| top.contains(i)) {
                continue;
            }
            let d = dis(inst, &s)?;
            let margin = d - dis_top;
            if margin < worst {
                worst = margin;
            }
            if margin < -ORDER_TOL && violation.is_none() {
                violation = Some(ViolationRecord {
                    subset_a: top.clone(),
                    subset_b: s.clone(),
                    value_a: dis_top,
                    value_b: d,
                });
            }
        }
    }
    Ok(TheoremReport {
        theorem: "dominant-diagonal-ordering".into(),
        p,
        passed: worst >= -ORDER_TOL,
        worst_margin: worst,
        violation,
    })
}

/// Finite-sample shadow of the screening guarantee: draws `n` population
/// gradients from `N(0, diag(lambda_diag))` per replication and counts how
/// often the empirical mean-squared summary recovers the true top-k
/// diagonal set exactly.
pub fn ranking_recovery_count(
    lambda_diag: &Array1<f64>,
    n: usize,
    k: usize,
    replications: usize,
    seed: u64,
) -> Result<usize> {
    let p = lambda_diag.len();
    if k == 0 || k > p {
        return Err(Error::InvalidArgument(format!("k = {k} out of range")));
    }
    let truth = {
        let summary = GradientSummary::from_values(lambda_diag.clone())?;
        select_gradient_laplace(&summary, k)?.sorted_indices()
    };
    let sds = lambda_diag.mapv(f64::sqrt);
    let mut hits = 0;
    for rep in 0..replications {
        let mut rng = rng_from_seed(derive_seed(seed, rep as u64));
        let mut acc = Array1::<f64>::zeros(p);
        for _ in 0..n {
            for i in 0..p {
                let z: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                let g = sds[i] * z;
                acc[i] += g * g;
            }
        }
        acc /= n as f64;
        let summary = GradientSummary::from_values(acc)?;
        if select_gradient_laplace(&summary, k)?.sorted_indices() == truth {
            hits += 1;
        }
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn eye_instance(p: usize) -> IpvInstance {
        IpvInstance::new(Array2::eye(p), Array1::ones(p), 1.0, 1).unwrap()
    }

    #[test]
    fn scalar_ipv_matches_arithmetic() {
        let inst = IpvInstance::new(array![[2.0]], array![1.0], 1.0, 1).unwrap();
        assert!((ipv(&inst, &[0]).unwrap() - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn identity_instance_gives_half_per_index() {
        let inst = eye_instance(5);
        for k in 1..=5 {
            let s: Vec<usize> = (0..k).collect();
            assert!((ipv(&inst, &s).unwrap() - k as f64 / 2.0).abs() < 1e-14);
        }
        assert!((ipv_full(&eye_instance(3)).unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn dis_is_zero_on_full_set_and_additive_on_identity() {
        let inst = eye_instance(3);
        assert_eq!(dis(&inst, &[0, 1, 2]).unwrap(), 0.0);
        assert!((dis(&inst, &[1]).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ipv_is_invariant_to_index_order() {
        let inst = make_cpi_instance(6, 9, 2.0).unwrap();
        let a = ipv(&inst, &[0, 3, 5]).unwrap();
        let b = ipv(&inst, &[5, 0, 3]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ipv_full_scales_inversely_with_n() {
        let inst = make_cpi_instance(6, 4, 1.0).unwrap().with_n(100);
        let v1 = ipv_full(&inst).unwrap();
        let v2 = ipv_full(&inst.with_n(200)).unwrap();
        let ratio = v1 / v2;
        assert!((ratio - 2.0).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn instance_rejects_asymmetric_or_indefinite() {
        let asym = array![[1.0, 0.5], [0.2, 1.0]];
        assert!(IpvInstance::new(asym, Array1::ones(2), 1.0, 1).is_err());
        let indef = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(IpvInstance::new(indef, Array1::ones(2), 1.0, 1).is_err());
    }

    #[test]
    fn classification_constant_weight_factors_out() {
        // Logit 0 gives u = 1/4 everywhere, so the canonical instance equals
        // the regression form on 0.25 * mean(g g^T).
        let mut rng = crate::rng::rng_from_seed(3);
        use rand::Rng;
        let g = Array2::from_shape_fn((40, 4), |_| rng.gen_range(-1.0..1.0));
        let logits = Array1::zeros(40);
        let inst =
            ClassificationIpvInstance::from_samples(&g, &logits, Array1::ones(4), 10).unwrap();
        let mut lam = Array2::<f64>::zeros((4, 4));
        for row in g.rows() {
            for a in 0..4 {
                for b in 0..4 {
                    lam[[a, b]] += row[a] * row[b];
                }
            }
        }
        lam *= 0.25 / 40.0;
        let reg = IpvInstance::new(lam, Array1::ones(4), 1.0, 10).unwrap();
        for s in [&[0usize][..], &[1, 3][..], &[0, 1, 2, 3][..]] {
            let c = ipv_classification(&inst, s).unwrap();
            let r = ipv(&reg, s).unwrap();
            assert!((c - r).abs() < 1e-12, "{c} vs {r}");
        }
    }

    #[test]
    fn classification_unit_weight_equals_sigma_one_regression() {
        let mut rng = crate::rng::rng_from_seed(5);
        use rand::Rng;
        let g = Array2::from_shape_fn((30, 3), |_| rng.gen_range(-1.0..1.0));
        let mut lam = Array2::<f64>::zeros((3, 3));
        for row in g.rows() {
            for a in 0..3 {
                for b in 0..3 {
                    lam[[a, b]] += row[a] * row[b];
                }
            }
        }
        lam /= 30.0;
        let cls =
            ClassificationIpvInstance::new(lam.clone(), lam.clone(), Array1::ones(3), 7).unwrap();
        let reg = IpvInstance::new(lam, Array1::ones(3), 1.0, 7).unwrap();
        for s in [&[0usize][..], &[0, 2][..]] {
            assert!((ipv_classification(&cls, s).unwrap() - ipv(&reg, s).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn classification_monotone_on_canonical_instances() {
        let mut rng = crate::rng::rng_from_seed(11);
        use rand::Rng;
        let g = Array2::from_shape_fn((60, 5), |_| rng.gen_range(-1.5..1.5));
        let logits = Array1::from_shape_fn(60, |i| (i as f64 * 0.37).sin() * 2.0);
        let inst =
            ClassificationIpvInstance::from_samples(&g, &logits, Array1::ones(5), 20).unwrap();
        let mut prev = ipv_classification(&inst, &[0]).unwrap();
        for k in 2..=5 {
            let s: Vec<usize> = (0..k).collect();
            let v = ipv_classification(&inst, &s).unwrap();
            assert!(v >= prev - 1e-10, "chain broke at k = {k}: {v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn cpi_lambda_matches_hand_cases() {
        assert_eq!(
            cpi_lambda(&array![1.0, 1.0], 0.0, 1.0),
            array![[2.0, 1.0], [1.0, 2.0]]
        );
        assert_eq!(
            cpi_lambda(&array![3.0, 5.0], 0.0, 0.0),
            array![[3.0, 0.0], [0.0, 5.0]]
        );
    }

    #[test]
    fn cpi_instance_is_psd() {
        for seed in 0..5 {
            let inst = make_cpi_instance(7, seed, 3.0).unwrap();
            let mut shifted = inst.lambda().clone();
            for i in 0..7 {
                shifted[[i, i]] += 1e-12;
            }
            assert!(CholeskyFactor::with_jitter(&shifted).is_ok());
        }
    }

    #[test]
    fn dd_instance_satisfies_dominance_audit() {
        for seed in 0..5 {
            let inst = make_dd_instance(6, 0.2, 0.1, seed).unwrap();
            let lam = inst.lambda();
            // Independent audit: recompute each row's off-diagonal mass.
            for i in 0..6 {
                let off: f64 = (0..6).filter(|&j| j != i).map(|j| lam[[i, j]].abs()).sum();
                assert!(
                    off < 0.2 * lam[[i, i]],
                    "row {i} violates dominance: {off} vs {}",
                    0.2 * lam[[i, i]]
                );
            }
            assert!(dominance_epsilon(lam) < 0.2);
        }
    }

    #[test]
    fn dd_instance_rejects_bad_parameters() {
        assert!(make_dd_instance(4, 0.0, 0.1, 0).is_err());
        assert!(make_dd_instance(4, 1.0, 0.1, 0).is_err());
        assert!(make_dd_instance(1, 0.5, 0.1, 0).is_err());
    }

    #[test]
    fn theorem1_margins_on_identity_are_half_steps() {
        let report = verify_theorem1(&eye_instance(4), 10).unwrap();
        assert!(report.passed);
        assert!((report.worst_margin - 0.5).abs() < 1e-12);
    }

    #[test]
    fn corrupted_value_table_is_flagged() {
        let report = enumerate_ipv(&eye_instance(4), 10).unwrap();
        let mut values = BTreeMap::new();
        for s in &report.subsets {
            let mask = s.indices.iter().fold(0u32, |m, &i| m | (1 << i));
            // Negate the full-set entry so every nesting into it breaks.
            let v = if s.indices.len() == 4 { -s.ipv } else { s.ipv };
            values.insert(mask, v);
        }
        let check = check_monotone_nesting(&values, 4, 1e-10);
        assert!(!check.passed);
        assert!(check.violation.is_some());
    }

    #[test]
    fn theorem2_holds_on_constructed_instances() {
        // Distinct diagonal, all-ones coupling.
        let inst = IpvInstance::new(
            cpi_lambda(&array![5.0, 1.0, 3.0, 2.0, 4.0], 0.0, 1.0),
            Array1::ones(5),
            1.0,
            1,
        )
        .unwrap();
        let report = verify_theorem2(&inst, 2).unwrap();
        assert!(report.passed, "{report:?}");

        // Tied diagonal: all subsets tie.
        let tied = IpvInstance::new(
            cpi_lambda(&Array1::from_elem(5, 2.0), 0.0, 1.0),
            Array1::ones(5),
            1.0,
            1,
        )
        .unwrap();
        let vals: Vec<f64> = combinations(5, 2)
            .into_iter()
            .map(|s| ipv(&tied, &s).unwrap())
            .collect();
        let spread = vals.iter().cloned().fold(f64::MIN, f64::max)
            - vals.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-12);

        // Degenerate coupling b = 0 still satisfies the ordering.
        let diag_only = IpvInstance::new(
            cpi_lambda(&array![5.0, 1.0, 3.0, 2.0], 0.5, 0.0),
            Array1::ones(4),
            1.0,
            1,
        )
        .unwrap();
        assert!(verify_theorem2(&diag_only, 2).unwrap().passed);
    }

    #[test]
    fn theorem2_rejects_non_class_instances() {
        let inst = make_dd_instance(5, 0.2, 0.5, 3).unwrap();
        assert!(verify_theorem2(&inst, 2).is_err());
    }

    #[test]
    fn theorem3_holds_on_generated_instances() {
        let inst = make_dd_instance(8, 0.15, 0.1, 7).unwrap();
        let report = verify_theorem3(&inst, 2).unwrap();
        assert!(report.passed, "{report:?}");

        // Diagonal with large gaps: strict ordering.
        let lam = Array2::from_diag(&array![100.0, 10.0, 1.0, 0.1]);
        let inst = IpvInstance::new(lam, Array1::ones(4), 1.0, 1).unwrap();
        assert!(verify_theorem3(&inst, 1).unwrap().passed);
    }

    #[test]
    fn theorem3_rejects_flat_diagonal_at_precondition() {
        let lam = Array2::from_diag(&Array1::from_elem(6, 2.0));
        let inst = IpvInstance::new(lam, Array1::ones(6), 1.0, 1).unwrap();
        assert!(matches!(
            verify_theorem3(&inst, 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn recovery_rate_is_high_with_wide_gap() {
        let lam = array![2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let hits = ranking_recovery_count(&lam, 2000, 3, 20, 1).unwrap();
        assert!(hits >= 19, "hits = {hits}/20");
    }
}
