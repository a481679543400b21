//! Surrogate-fidelity metrics: per-test-point Wasserstein-2 gaps between the
//! full and sub-network predictive distributions, credible-interval coverage
//! against an oracle, and deep-ensemble reference intervals.
//!
//! Both predictive distributions at a test point are Gaussians with the same
//! mean, so the Wasserstein-2 distance collapses to the absolute gap in
//! predictive standard deviations.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::laplace::{LaplaceSystem, SubsetPosterior};
use crate::net::MlpModel;
use crate::select::SubsetSelection;

/// Which standard deviation enters a credible interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalKind {
    /// Epistemic-only band (matches the calibration panels).
    #[default]
    EpistemicOnly,
    /// Adds the observation-noise variance for regression systems.
    Predictive,
}

/// Two-sided normal multiplier for the supported nominal levels. The 0.95
/// level uses the conventional 1.96 exactly.
pub fn z_for_level(level: f64) -> Result<f64> {
    if level == 0.95 {
        Ok(1.96)
    } else if level == 0.9 {
        Ok(1.645)
    } else if level == 0.99 {
        Ok(2.576)
    } else {
        Err(Error::InvalidArgument(format!(
            "unsupported interval level {level}; use 0.9, 0.95, or 0.99"
        )))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WassersteinRecord {
    pub test_index: usize,
    pub sigma_full: f64,
    pub sigma_method: f64,
    pub w2: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CoverageRecord {
    pub test_index: usize,
    pub oracle_value: f64,
    pub map_value: f64,
    pub sigma_method: f64,
    pub covered: bool,
}

/// One aggregate row of a sweep: mean and standard error over test points.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub method: String,
    pub k: usize,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Query gradients and full predictive standard deviations for a test set,
/// shared across every selection in a sweep.
pub struct TestPointCache {
    gradients: Vec<Array1<f64>>,
    sigma_full: Vec<f64>,
    map_values: Vec<f64>,
}

impl TestPointCache {
    pub fn new(sys: &LaplaceSystem, model: &MlpModel, test_x: &Array2<f64>) -> Result<Self> {
        let mut gradients = Vec::with_capacity(test_x.nrows());
        let mut sigma_full = Vec::with_capacity(test_x.nrows());
        let mut map_values = Vec::with_capacity(test_x.nrows());
        let mut ws = model.gradient_workspace();
        for (i, x) in test_x.rows().into_iter().enumerate() {
            let mut g = Array1::zeros(model.p());
            let f = model
                .output_and_gradient(&mut ws, x, g.as_slice_mut().unwrap())
                .map_err(|e| Error::Numeric(format!("test point {i}: {e}")))?;
            let pv = sys
                .full_predictive_variance(g.view())
                .map_err(|e| Error::Numeric(format!("test point {i}: {e}")))?;
            gradients.push(g);
            sigma_full.push(pv.std());
            map_values.push(f);
        }
        Ok(Self {
            gradients,
            sigma_full,
            map_values,
        })
    }

    pub fn len(&self) -> usize {
        self.gradients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradients.is_empty()
    }

    pub fn sigma_full(&self) -> &[f64] {
        &self.sigma_full
    }

    pub fn map_values(&self) -> &[f64] {
        &self.map_values
    }
}

/// Per-point Wasserstein records for one selection.
pub fn wasserstein_records(
    sys: &LaplaceSystem,
    cache: &TestPointCache,
    selection: &SubsetSelection,
) -> Result<Vec<WassersteinRecord>> {
    let posterior = SubsetPosterior::new(sys, selection.indices())?;
    let mut out = Vec::with_capacity(cache.len());
    for (i, g) in cache.gradients.iter().enumerate() {
        let sigma_method = posterior.predictive_variance(g.view())?.std();
        let sigma_full = cache.sigma_full[i];
        out.push(WassersteinRecord {
            test_index: i,
            sigma_full,
            sigma_method,
            w2: (sigma_full - sigma_method).abs(),
        });
    }
    Ok(out)
}

/// Mean Wasserstein-2 gap per selection, with the standard error over test
/// points.
pub fn wasserstein_sweep(
    sys: &LaplaceSystem,
    selections: &[SubsetSelection],
    test_x: &Array2<f64>,
    model: &MlpModel,
) -> Result<Vec<SweepRow>> {
    if selections.is_empty() {
        return Err(Error::InvalidArgument("no selections supplied".into()));
    }
    let cache = TestPointCache::new(sys, model, test_x)?;
    let mut rows = Vec::with_capacity(selections.len());
    for sel in selections {
        let records = wasserstein_records(sys, &cache, sel)?;
        let w2s: Vec<f64> = records.iter().map(|r| r.w2).collect();
        let (value, stderr) = mean_and_stderr(&w2s);
        rows.push(SweepRow {
            method: sel.method().to_string(),
            k: sel.k(),
            metric: "w2".into(),
            value,
            stderr,
        });
    }
    Ok(rows)
}

/// Per-point coverage records for one selection.
pub fn coverage_records(
    sys: &LaplaceSystem,
    cache: &TestPointCache,
    selection: &SubsetSelection,
    oracle_values: &[f64],
    level: f64,
    interval: IntervalKind,
) -> Result<Vec<CoverageRecord>> {
    if oracle_values.len() != cache.len() {
        return Err(Error::ShapeMismatch(
            "one oracle value per test point required".into(),
        ));
    }
    let z = z_for_level(level)?;
    let posterior = SubsetPosterior::new(sys, selection.indices())?;
    let mut out = Vec::with_capacity(cache.len());
    for (i, g) in cache.gradients.iter().enumerate() {
        let pv = posterior.predictive_variance(g.view())?;
        let sigma_method = match interval {
            IntervalKind::EpistemicOnly => pv.epistemic.sqrt(),
            IntervalKind::Predictive => pv.total.sqrt(),
        };
        let map_value = cache.map_values[i];
        let oracle_value = oracle_values[i];
        out.push(CoverageRecord {
            test_index: i,
            oracle_value,
            map_value,
            sigma_method,
            covered: (oracle_value - map_value).abs() <= z * sigma_method,
        });
    }
    Ok(out)
}

/// Empirical coverage of the nominal-level interval per selection, with the
/// oracle given as a function of the test input.
pub fn coverage_sweep(
    sys: &LaplaceSystem,
    selections: &[SubsetSelection],
    test_x: &Array2<f64>,
    model: &MlpModel,
    oracle: impl Fn(ArrayView1<'_, f64>) -> f64,
    level: f64,
    interval: IntervalKind,
) -> Result<Vec<SweepRow>> {
    let oracle_values: Vec<f64> = test_x.rows().into_iter().map(&oracle).collect();
    coverage_sweep_values(
        sys,
        selections,
        test_x,
        model,
        &oracle_values,
        level,
        interval,
    )
}

/// Coverage sweep with precomputed oracle targets (one per test row).
pub fn coverage_sweep_values(
    sys: &LaplaceSystem,
    selections: &[SubsetSelection],
    test_x: &Array2<f64>,
    model: &MlpModel,
    oracle_values: &[f64],
    level: f64,
    interval: IntervalKind,
) -> Result<Vec<SweepRow>> {
    if selections.is_empty() {
        return Err(Error::InvalidArgument("no selections supplied".into()));
    }
    let cache = TestPointCache::new(sys, model, test_x)?;
    let mut rows = Vec::with_capacity(selections.len());
    for sel in selections {
        let records = coverage_records(sys, &cache, sel, oracle_values, level, interval)?;
        let hits: Vec<f64> = records
            .iter()
            .map(|r| if r.covered { 1.0 } else { 0.0 })
            .collect();
        let (value, stderr) = mean_and_stderr(&hits);
        rows.push(SweepRow {
            method: sel.method().to_string(),
            k: sel.k(),
            metric: "coverage".into(),
            value,
            stderr,
        });
    }
    Ok(rows)
}

/// Empirical 2.5%/97.5% quantiles of the member predictions at `x`
/// (type-7 linear interpolation between order statistics).
pub fn ensemble_interval(models: &[MlpModel], x: ArrayView1<'_, f64>) -> Result<(f64, f64)> {
    if models.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 members".into()));
    }
    let mut preds: Vec<f64> = models.iter().map(|m| m.forward(x)).collect::<Result<_>>()?;
    preds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| -> f64 {
        let h = (preds.len() - 1) as f64 * q;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        preds[lo] + (h - lo as f64) * (preds[hi] - preds[lo])
    };
    Ok((quantile(0.025), quantile(0.975)))
}

/// Coverage of `mean ± z * cross-member std` against precomputed oracle
/// values; the variance is the unbiased cross-member estimate.
pub fn ensemble_variance_coverage(
    models: &[MlpModel],
    test_x: &Array2<f64>,
    oracle_values: &[f64],
    level: f64,
) -> Result<f64> {
    if models.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 members".into()));
    }
    if oracle_values.len() != test_x.nrows() {
        return Err(Error::ShapeMismatch(
            "one oracle value per test point required".into(),
        ));
    }
    let z = z_for_level(level)?;
    let m = models.len() as f64;
    let mut covered = 0usize;
    for (i, x) in test_x.rows().into_iter().enumerate() {
        let preds: Vec<f64> = models
            .iter()
            .map(|mm| mm.forward(x))
            .collect::<Result<_>>()?;
        let mean = preds.iter().sum::<f64>() / m;
        let var = preds.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
        if (oracle_values[i] - mean).abs() <= z * var.sqrt() {
            covered += 1;
        }
    }
    Ok(covered as f64 / test_x.nrows() as f64)
}

/// Writes sweep rows in the `method,k,seed,metric,value,stderr` schema with
/// a leading `#` metadata line (config hash, seed provenance, and so on).
pub fn write_metric_csv<W: Write>(
    w: &mut W,
    meta: &str,
    seed_label: &str,
    rows: &[SweepRow],
) -> Result<()> {
    writeln!(w, "# {meta}")?;
    writeln!(w, "method,k,seed,metric,value,stderr")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.method, r.k, seed_label, r.metric, r.value, r.stderr
        )?;
    }
    Ok(())
}
