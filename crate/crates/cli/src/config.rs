//! Experiment configuration: a flat TOML file with one section per concern.
//! Unknown keys anywhere are errors.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sublap::data::{Generator, Task};
use sublap::metrics::IntervalKind;
use sublap::select::PoolPolicy;
use sublap::wheel::PosteriorKind;
use sublap::{LrSchedule, Optimizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Wasserstein,
    Coverage,
    Theory,
    Bandit,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExperimentKind::Wasserstein => "wasserstein",
            ExperimentKind::Coverage => "coverage",
            ExperimentKind::Theory => "theory",
            ExperimentKind::Bandit => "bandit",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub methods: Option<MethodsConfig>,
    #[serde(default)]
    pub theory: Option<TheoryConfig>,
    #[serde(default)]
    pub bandit: Option<BanditConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum DataKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    // Synthetic fields.
    #[serde(default)]
    pub generator: Option<Generator>,
    #[serde(default)]
    pub n_train: Option<usize>,
    #[serde(default)]
    pub n_test: Option<usize>,
    #[serde(default)]
    pub input_dim: Option<usize>,
    #[serde(default)]
    pub noise_std: Option<f64>,
    // Delimited-file fields.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub target_column: Option<String>,
    #[serde(default)]
    pub delimiter: Option<String>,
    #[serde(default)]
    pub test_fraction: Option<f64>,
    #[serde(default)]
    pub task: Option<Task>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_prior")]
    pub prior_precision: f64,
}

fn default_prior() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodsConfig {
    pub list: Vec<String>,
    pub k_grid: Vec<usize>,
    #[serde(default)]
    pub pool: PoolPolicy,
    #[serde(default)]
    pub ensemble_members: Option<usize>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub interval: IntervalKind,
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub instances: usize,
    #[serde(default = "default_theory_p")]
    pub p: usize,
    pub k_values: Vec<usize>,
    #[serde(default = "default_spread")]
    pub diag_spread: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_margin")]
    pub ratio_margin: f64,
}

fn default_theory_p() -> usize {
    6
}
fn default_spread() -> f64 {
    2.0
}
fn default_epsilon() -> f64 {
    0.15
}
fn default_margin() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    pub delta: f64,
    pub horizon: usize,
    pub methods: Vec<PosteriorKind>,
    pub k_grid: Vec<usize>,
    #[serde(default)]
    pub env_seed: u64,
    #[serde(default = "default_mu_center")]
    pub mu_center: f64,
    #[serde(default = "default_mu_high")]
    pub mu_high: f64,
    #[serde(default = "default_reward_std")]
    pub reward_std: f64,
    #[serde(default)]
    pub inner_center_bonus: f64,
}

fn default_mu_center() -> f64 {
    1.0
}
fn default_mu_high() -> f64 {
    50.0
}
fn default_reward_std() -> f64 {
    0.01
}

/// Configuration or input problem: exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    /// Structural validation: required sections present, irrelevant sections
    /// absent, values in range. Runs before any compute.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError("seeds must be nonempty".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(ConfigError("seeds contain duplicates".into()));
        }
        let need = |present: bool, name: &str| -> Result<(), ConfigError> {
            if present {
                Ok(())
            } else {
                Err(ConfigError(format!(
                    "experiment '{}' requires a [{name}] section",
                    self.experiment
                )))
            }
        };
        let forbid = |absent: bool, name: &str| -> Result<(), ConfigError> {
            if absent {
                Ok(())
            } else {
                Err(ConfigError(format!(
                    "experiment '{}' does not accept a [{name}] section",
                    self.experiment
                )))
            }
        };
        match self.experiment {
            ExperimentKind::Wasserstein | ExperimentKind::Coverage => {
                need(self.data.is_some(), "data")?;
                need(self.model.is_some(), "model")?;
                need(self.train.is_some(), "train")?;
                need(self.methods.is_some(), "methods")?;
                forbid(self.theory.is_none(), "theory")?;
                forbid(self.bandit.is_none(), "bandit")?;
                self.data.as_ref().unwrap().validate()?;
                self.validate_model_and_methods()?;
            }
            ExperimentKind::Theory => {
                need(self.theory.is_some(), "theory")?;
                forbid(self.data.is_none(), "data")?;
                forbid(self.model.is_none(), "model")?;
                forbid(self.train.is_none(), "train")?;
                forbid(self.methods.is_none(), "methods")?;
                forbid(self.bandit.is_none(), "bandit")?;
                let t = self.theory.as_ref().unwrap();
                if t.instances == 0 {
                    return Err(ConfigError("theory.instances must be positive".into()));
                }
                if t.p < 2 || t.p > sublap::theory::ENUM_MAX_P {
                    return Err(ConfigError(format!(
                        "theory.p must lie in [2, {}]",
                        sublap::theory::ENUM_MAX_P
                    )));
                }
                if t.k_values.iter().any(|&k| k == 0 || 2 * k > t.p) {
                    return Err(ConfigError(
                        "theory.k_values must satisfy 1 <= k <= p/2".into(),
                    ));
                }
                if !(t.epsilon > 0.0 && t.epsilon < 1.0) {
                    return Err(ConfigError("theory.epsilon must lie in (0, 1)".into()));
                }
            }
            ExperimentKind::Bandit => {
                need(self.bandit.is_some(), "bandit")?;
                forbid(self.data.is_none(), "data")?;
                forbid(self.model.is_none(), "model")?;
                forbid(self.train.is_none(), "train")?;
                forbid(self.methods.is_none(), "methods")?;
                forbid(self.theory.is_none(), "theory")?;
                let b = self.bandit.as_ref().unwrap();
                if b.methods.is_empty() {
                    return Err(ConfigError("bandit.methods must be nonempty".into()));
                }
                if b.k_grid.is_empty()
                    && b.methods
                        .iter()
                        .any(|m| !matches!(m, PosteriorKind::Map | PosteriorKind::NeuralLinear))
                {
                    return Err(ConfigError(
                        "bandit.k_grid must be nonempty for subset methods".into(),
                    ));
                }
                if b.k_grid
                    .iter()
                    .any(|&k| k == 0 || k > sublap::wheel::WHEEL_PARAM_COUNT)
                {
                    return Err(ConfigError(format!(
                        "bandit.k_grid entries must lie in [1, {}]",
                        sublap::wheel::WHEEL_PARAM_COUNT
                    )));
                }
                if !(b.delta > 0.0 && b.delta < 1.0) {
                    return Err(ConfigError("bandit.delta must lie in (0, 1)".into()));
                }
                if b.horizon == 0 {
                    return Err(ConfigError("bandit.horizon must be positive".into()));
                }
            }
        }
        Ok(())
    }

    fn validate_model_and_methods(&self) -> Result<(), ConfigError> {
        let model = self.model.as_ref().unwrap();
        let data = self.data.as_ref().unwrap();
        let methods = self.methods.as_ref().unwrap();
        if model.hidden.is_empty() || model.hidden.iter().any(|&w| w == 0) {
            return Err(ConfigError("model.hidden must be positive widths".into()));
        }
        let train = self.train.as_ref().unwrap();
        if train.learning_rate <= 0.0 || train.epochs == 0 || train.batch_size == 0 {
            return Err(ConfigError("train section has out-of-range values".into()));
        }
        if methods.list.is_empty() {
            return Err(ConfigError("methods.list must be nonempty".into()));
        }
        for m in &methods.list {
            parse_method(m).ok_or_else(|| ConfigError(format!("unknown method '{m}'")))?;
        }
        sublap::metrics::z_for_level(methods.level).map_err(|e| ConfigError(e.to_string()))?;
        // The k grid must fit the parameter count, which is known once the
        // input dimension is known.
        if let Some(d) = data.input_dim_if_known() {
            let p = param_count(d, &model.hidden);
            if methods.k_grid.iter().any(|&k| k == 0 || k > p) {
                return Err(ConfigError(format!(
                    "methods.k_grid entries must lie in [1, {p}] for this model"
                )));
            }
            let needs_k = methods
                .list
                .iter()
                .any(|m| !matches!(m.as_str(), "neural-linear"));
            if needs_k && methods.k_grid.is_empty() {
                return Err(ConfigError("methods.k_grid must be nonempty".into()));
            }
        }
        if let Some(b) = methods.ensemble_members {
            if b < 2 {
                return Err(ConfigError("methods.ensemble_members must be >= 2".into()));
            }
        }
        Ok(())
    }

    /// Hex-encoded SHA-256 of the resolved configuration; embedded in every
    /// output file so shards can be traced to the exact settings. The output
    /// directory is excluded so relocating results does not change identity.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let text = toml::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(&digest[..8])
    }
}

impl DataConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        match self.kind {
            DataKind::Synthetic => {
                for (name, missing) in [
                    ("generator", self.generator.is_none()),
                    ("n_train", self.n_train.is_none()),
                    ("n_test", self.n_test.is_none()),
                    ("input_dim", self.input_dim.is_none()),
                    ("noise_std", self.noise_std.is_none()),
                ] {
                    if missing {
                        return Err(ConfigError(format!("synthetic data requires data.{name}")));
                    }
                }
                for (name, present) in [
                    ("path", self.path.is_some()),
                    ("target_column", self.target_column.is_some()),
                    ("delimiter", self.delimiter.is_some()),
                    ("test_fraction", self.test_fraction.is_some()),
                ] {
                    if present {
                        return Err(ConfigError(format!(
                            "data.{name} does not apply to synthetic data"
                        )));
                    }
                }
            }
            DataKind::Csv => {
                if self.path.is_none() || self.target_column.is_none() {
                    return Err(ConfigError(
                        "csv data requires data.path and data.target_column".into(),
                    ));
                }
                let frac = self.test_fraction.unwrap_or(0.2);
                if !(frac > 0.0 && frac < 1.0) {
                    return Err(ConfigError("data.test_fraction must lie in (0, 1)".into()));
                }
                if let Some(d) = &self.delimiter {
                    if d.chars().count() != 1 {
                        return Err(ConfigError(
                            "data.delimiter must be a single character".into(),
                        ));
                    }
                }
                for (name, present) in [
                    ("generator", self.generator.is_some()),
                    ("n_train", self.n_train.is_some()),
                    ("n_test", self.n_test.is_some()),
                    ("input_dim", self.input_dim.is_some()),
                    ("noise_std", self.noise_std.is_some()),
                ] {
                    if present {
                        return Err(ConfigError(format!(
                            "data.{name} does not apply to csv data"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Input dimension when it is derivable without reading files.
    pub fn input_dim_if_known(&self) -> Option<usize> {
        match self.kind {
            DataKind::Synthetic => self.input_dim,
            DataKind::Csv => None,
        }
    }
}

/// Total parameter count of the scalar-head MLP with the given hidden stack.
pub fn param_count(input_dim: usize, hidden: &[usize]) -> usize {
    sublap::net::scalar_mlp_layers(input_dim, hidden)
        .iter()
        .map(|l| l.param_count())
        .sum()
}

/// Maps a method name to its selection routine; `None` for unknown names.
pub fn parse_method(name: &str) -> Option<sublap::select::SelectionMethod> {
    use sublap::select::SelectionMethod as M;
    Some(match name {
        "gradient-laplace" => M::GradientLaplace,
        "greedy-laplace" => M::GreedyLaplace,
        "subnet-diagonal" => M::SubnetDiagonal,
        "last-k" => M::LastK,
        "neural-linear" => M::NeuralLinear,
        _ => return None,
    })
}
