//! Dataset ingestion, train/test splitting with train-fit standardization,
//! and seeded synthetic regression generators.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{scalar_mlp_layers, MlpModel};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    Binary,
}

/// Per-column affine transform fitted on a training partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    /// Columns whose std was clamped to 1 because they were constant.
    pub clamped_features: Vec<usize>,
    pub target_clamped: bool,
}

impl Standardizer {
    fn fit(x: &Array2<f64>, y: &Array1<f64>, standardize_target: bool) -> Self {
        let d = x.ncols();
        let n = x.nrows() as f64;
        let mut feature_mean = vec![0.0; d];
        let mut feature_std = vec![0.0; d];
        let mut clamped = Vec::new();
        for j in 0..d {
            let col = x.column(j);
            let m = col.sum() / n;
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n;
            let mut s = var.sqrt();
            if s < 1e-12 {
                s = 1.0;
                clamped.push(j);
            }
            feature_mean[j] = m;
            feature_std[j] = s;
        }
        let (target_mean, target_std, target_clamped) = if standardize_target {
            let m = y.sum() / n;
            let var = y.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            if s < 1e-12 {
                (m, 1.0, true)
            } else {
                (m, s, false)
            }
        } else {
            (0.0, 1.0, false)
        };
        Self {
            feature_mean,
            feature_std,
            target_mean,
            target_std,
            clamped_features: clamped,
            target_clamped,
        }
    }

    pub fn apply(&self, x: &mut Array2<f64>, y: &mut Array1<f64>) {
        for (j, mut col) in x.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.feature_mean[j], self.feature_std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        let (m, s) = (self.target_mean, self.target_std);
        y.mapv_inplace(|v| (v - m) / s);
    }

    /// Undoes the transform; exact to floating-point round-trip error.
    pub fn inverse(&self, x: &mut Array2<f64>, y: &mut Array1<f64>) {
        for (j, mut col) in x.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.feature_mean[j], self.feature_std[j]);
            col.mapv_inplace(|v| v * s + m);
        }
        let (m, s) = (self.target_mean, self.target_std);
        y.mapv_inplace(|v| v * s + m);
    }
}

/// A design matrix with targets and optional standardization metadata.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub task: Task,
    pub standardizer: Option<Standardizer>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>, task: Task) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows with {} targets",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Ingestion("non-finite value in dataset".into()));
        }
        if task == Task::Binary {
            for (i, &t) in y.iter().enumerate() {
                if t != 0.0 && t != 1.0 {
                    return Err(Error::Ingestion(format!("binary target at row {i} is {t}")));
                }
            }
        }
        Ok(Self {
            x,
            y,
            task,
            standardizer: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Writes the dataset as delimited text with an `x0..x{d-1},target`
    /// header, plus a `<path>.meta.json` sidecar recording the seed, task,
    /// and standardizer constants. Values round-trip losslessly through
    /// [`load_csv`].
    pub fn save(&self, path: &Path, seed: u64, delimiter: char) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let sep = delimiter.to_string();
        let header: Vec<String> = (0..self.d())
            .map(|j| format!("x{j}"))
            .chain(std::iter::once("target".to_string()))
            .collect();
        writeln!(out, "{}", header.join(&sep))?;
        for (row, &y) in self.x.rows().into_iter().zip(self.y.iter()) {
            let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            fields.push(y.to_string());
            writeln!(out, "{}", fields.join(&sep))?;
        }
        let meta = serde_json::json!({
            "seed": seed,
            "task": self.task,
            "standardizer": self.standardizer,
        });
        let meta_path = path.with_extension(format!(
            "{}.meta.json",
            path.extension().and_then(|e| e.to_str()).unwrap_or("txt")
        ));
        std::fs::write(meta_path, serde_json::to_string_pretty(&meta).unwrap())?;
        Ok(())
    }
}

/// Loads a delimited numeric text file. `delimiter = None` splits on
/// whitespace. If the first line has any non-numeric field it is taken as a
/// header and `target_column` is matched by name; otherwise `target_column`
/// must parse as a zero-based column index.
pub fn load_csv(path: &Path, target_column: &str, delimiter: Option<char>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", path.display())))?;
    let split = |line: &str| -> Vec<String> {
        match delimiter {
            Some(c) => line.split(c).map(|s| s.trim().to_string()).collect(),
            None => line.split_whitespace().map(|s| s.to_string()).collect(),
        }
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let (first_no, first) = lines
        .next()
        .ok_or_else(|| Error::Ingestion(format!("{} is empty", path.display())))?;
    let first_fields = split(first);
    let n_cols = first_fields.len();
    let has_header = first_fields.iter().any(|f| f.parse::<f64>().is_err());

    let target_idx = if has_header {
        first_fields
            .iter()
            .position(|name| name == target_column)
            .ok_or_else(|| {
                Error::Ingestion(format!(
                    "target column '{target_column}' not in header {first_fields:?}"
                ))
            })?
    } else {
        target_column.parse::<usize>().map_err(|_| {
            Error::Ingestion(format!(
                "no header; target column '{target_column}' must be a column index"
            ))
        })?
    };
    if target_idx >= n_cols {
        return Err(Error::Ingestion(format!(
            "target column {target_idx} out of range for {n_cols} columns"
        )));
    }

    let mut features: Vec<f64> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    let data_lines: Vec<(usize, &str)> = if has_header {
        lines.collect()
    } else {
        std::iter::once((first_no, first)).chain(lines).collect()
    };
    for (line_no, line) in data_lines {
        let fields = split(line);
        if fields.len() != n_cols {
            return Err(Error::Ingestion(format!(
                "line {line_no}: expected {n_cols} fields, found {}",
                fields.len()
            )));
        }
        for (c, field) in fields.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Ingestion(format!(
                    "line {line_no}, column {c}: cannot parse '{field}' as a number"
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Ingestion(format!(
                    "line {line_no}, column {c}: non-finite value"
                )));
            }
            if c == target_idx {
                targets.push(v);
            } else {
                features.push(v);
            }
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::Ingestion(format!(
            "{} has a header but no data rows",
            path.display()
        )));
    }
    let x = Array2::from_shape_vec((n_rows, n_cols - 1), features).expect("row-major assembly");
    Dataset::new(x, Array1::from_vec(targets), Task::Regression)
}

/// Seeded shuffle split; the standardizer is fitted on the training
/// partition only (features always, target only for regression) and applied
/// to both partitions.
pub fn split_standardize(
    ds: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(
            "test_fraction must lie in (0, 1)".into(),
        ));
    }
    let n = ds.n();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "need at least two rows to split".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(seed);
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let (test_idx, train_idx) = order.split_at(n_test);

    let mut train_x = ds.x.select(Axis(0), train_idx);
    let mut train_y = ds.y.select(Axis(0), train_idx);
    let mut test_x = ds.x.select(Axis(0), test_idx);
    let mut test_y = ds.y.select(Axis(0), test_idx);

    let standardizer = Standardizer::fit(&train_x, &train_y, ds.task == Task::Regression);
    standardizer.apply(&mut train_x, &mut train_y);
    standardizer.apply(&mut test_x, &mut test_y);

    let mut train = Dataset::new(train_x, train_y, ds.task)?;
    let mut test = Dataset::new(test_x, test_y, ds.task)?;
    train.standardizer = Some(standardizer.clone());
    test.standardizer = Some(standardizer);
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    SmoothSine,
    PlantedMlp,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub n_train: usize,
    pub n_test: usize,
    pub input_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
}

/// The true regression function behind a synthetic dataset.
#[derive(Debug, Clone)]
pub enum Oracle {
    Sine { w: Array1<f64> },
    Mlp { model: MlpModel },
}

impl Oracle {
    pub fn eval(&self, x: ArrayView1<'_, f64>) -> f64 {
        match self {
            Oracle::Sine { w } => w.dot(&x).sin(),
            Oracle::Mlp { model } => model.forward(x).expect("oracle input dim"),
        }
    }
}

/// Standard normal input truncated to the radius-6 ball by resampling; the
/// affected mass is negligible, truncation just bounds the support.
fn sample_input(rng: &mut impl Rng, d: usize) -> Array1<f64> {
    loop {
        let x = Array1::from_shape_fn(d, |_| {
            let z: f64 = StandardNormal.sample(rng);
            z
        });
        if x.dot(&x) <= 36.0 {
            return x;
        }
    }
}

/// Generates seeded train/test regression datasets plus the generating
/// function for use as a coverage oracle.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset, Oracle)> {
    if spec.n_train == 0 || spec.n_test == 0 || spec.input_dim == 0 {
        return Err(Error::InvalidArgument(
            "synthetic sizes must be positive".into(),
        ));
    }
    if !(spec.noise_std.is_finite() && spec.noise_std > 0.0) {
        return Err(Error::InvalidArgument("noise_std must be positive".into()));
    }
    let oracle = match spec.generator {
        Generator::SmoothSine => {
            let mut wrng = rng_from_seed(derive_seed(spec.seed, 1));
            let scale = 1.0 / (spec.input_dim as f64).sqrt();
            let w = Array1::from_shape_fn(spec.input_dim, |_| {
                let z: f64 = StandardNormal.sample(&mut wrng);
                z * scale
            });
            Oracle::Sine { w }
        }
        Generator::PlantedMlp => {
            let model = MlpModel::init(
                scalar_mlp_layers(spec.input_dim, &[32, 32]),
                derive_seed(spec.seed, 2),
            )?;
            Oracle::Mlp { model }
        }
    };
    let gen_split = |count: usize, stream: u64| -> (Array2<f64>, Array1<f64>) {
        let mut rng = rng_from_seed(derive_seed(spec.seed, stream));
        let mut x = Array2::zeros((count, spec.input_dim));
        let mut y = Array1::zeros(count);
        for i in 0..count {
            let xi = sample_input(&mut rng, spec.input_dim);
            let noise: f64 = StandardNormal.sample(&mut rng);
            y[i] = oracle.eval(xi.view()) + spec.noise_std * noise;
            x.row_mut(i).assign(&xi);
        }
        (x, y)
    };
    let (train_x, train_y) = gen_split(spec.n_train, 10);
    let (test_x, test_y) = gen_split(spec.n_test, 11);
    Ok((
        Dataset::new(train_x, train_y, Task::Regression)?,
        Dataset::new(test_x, test_y, Task::Regression)?,
        oracle,
    ))
}
