//! Experiment drivers: per-seed shards, cross-seed aggregates, exit status.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use sublap::data::{load_csv, make_synthetic, split_standardize, Dataset, SyntheticSpec, Task};
use sublap::laplace::{estimate_noise_var, LaplaceSystem, Likelihood};
use sublap::metrics::{coverage_sweep_values, wasserstein_sweep, write_metric_csv, SweepRow};
use sublap::net::{ensemble_train, scalar_mlp_layers, train_map, Loss, MlpModel, TrainConfig};
use sublap::rng::derive_seed;
use sublap::select::{
    gradient_summary, select_gradient_laplace, select_greedy_laplace, select_last_k,
    select_neural_linear, select_subnet_diagonal, SelectionMethod, SubsetSelection,
};
use sublap::theory::{
    make_cpi_instance, make_dd_instance, make_random_psd_instance, verify_theorem1,
    verify_theorem2, verify_theorem3, TheoremReport,
};
use sublap::wheel::{run_bandit, AgentConfig, PosteriorKind, WheelConfig};

use crate::config::{parse_method, ConfigError, DataKind, ExperimentConfig, ExperimentKind};

pub enum RunError {
    Config(ConfigError),
    Runtime(sublap::Error),
    /// A theorem check failed; outputs were still written.
    Falsified,
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime(sublap::Error::Ingestion(_)) => 2,
            RunError::Runtime(_) => 3,
            RunError::Falsified => 4,
        }
    }

    pub fn message(&self) -> String {
        match self {
            RunError::Config(e) => e.to_string(),
            RunError::Runtime(e) => format!("runtime error: {e}"),
            RunError::Falsified => "theory falsification detected; see report files".into(),
        }
    }
}

impl From<sublap::Error> for RunError {
    fn from(e: sublap::Error) -> Self {
        RunError::Runtime(e)
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<(), RunError> {
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| RunError::Runtime(sublap::Error::Io(e)))?;
    match cfg.experiment {
        ExperimentKind::Wasserstein => run_eval(cfg, false),
        ExperimentKind::Coverage => run_eval(cfg, true),
        ExperimentKind::Theory => run_theory(cfg),
        ExperimentKind::Bandit => run_bandit_cmd(cfg),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let f = File::create(path).map_err(|e| RunError::Runtime(sublap::Error::Io(e)))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| RunError::Runtime(sublap::Error::Io(std::io::Error::other(e))))?;
    w.write_all(b"\n")
        .map_err(|e| RunError::Runtime(sublap::Error::Io(e)))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Wasserstein / coverage experiments
// ---------------------------------------------------------------------------

struct PreparedData {
    train: Dataset,
    test: Dataset,
    /// Oracle targets on the test rows (coverage only).
    oracle_values: Option<Vec<f64>>,
}

fn prepare_data(
    cfg: &ExperimentConfig,
    seed: u64,
    need_oracle: bool,
) -> Result<PreparedData, sublap::Error> {
    let data = cfg.data.as_ref().expect("validated");
    match data.kind {
        DataKind::Synthetic => {
            let spec = SyntheticSpec {
                generator: data.generator.expect("validated"),
                n_train: data.n_train.expect("validated"),
                n_test: data.n_test.expect("validated"),
                input_dim: data.input_dim.expect("validated"),
                noise_std: data.noise_std.expect("validated"),
                seed: derive_seed(seed, 1),
            };
            let (train, test, oracle) = make_synthetic(&spec)?;
            let oracle_values =
                need_oracle.then(|| test.x.rows().into_iter().map(|x| oracle.eval(x)).collect());
            Ok(PreparedData {
                train,
                test,
                oracle_values,
            })
        }
        DataKind::Csv => {
            let delim = data.delimiter.as_ref().and_then(|d| d.chars().next());
            let mut ds = load_csv(
                data.path.as_ref().expect("validated"),
                data.target_column.as_ref().expect("validated"),
                delim,
            )?;
            if let Some(task) = data.task {
                ds = Dataset::new(ds.x, ds.y, task)?;
            }
            let frac = data.test_fraction.unwrap_or(0.2);
            let (train, test) = split_standardize(&ds, frac, derive_seed(seed, 1))?;
            let oracle_values = if need_oracle {
                Some(csv_oracle_values(cfg, &train, &test, seed)?)
            } else {
                None
            };
            Ok(PreparedData {
                train,
                test,
                oracle_values,
            })
        }
    }
}

/// Reference-model oracle for file-backed tasks: a wider MLP (width 200 per
/// hidden layer) trained on the training partition with a doubled schedule;
/// its predictions stand in for the unknown target function on the test set.
fn csv_oracle_values(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<Vec<f64>, sublap::Error> {
    let model_cfg = cfg.model.as_ref().expect("validated");
    let tc = train_config(cfg, derive_seed(seed, 7));
    let oracle_layers = scalar_mlp_layers(train.d(), &vec![200; model_cfg.hidden.len()]);
    let init = MlpModel::init(oracle_layers, derive_seed(seed, 6))?;
    let loss = match train.task {
        Task::Regression => Loss::Mse,
        Task::Binary => Loss::Bce,
    };
    let oracle_tc = TrainConfig {
        epochs: tc.epochs * 2,
        ..tc
    };
    let prior = cfg.train.as_ref().expect("validated").prior_precision;
    let fit = train_map(&init, &train.x, &train.y, loss, &oracle_tc, prior)?;
    Ok(fit.forward_batch(&test.x)?.to_vec())
}

fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    let t = cfg.train.as_ref().expect("validated");
    TrainConfig {
        optimizer: t.optimizer,
        learning_rate: t.learning_rate,
        epochs: t.epochs,
        batch_size: t.batch_size,
        lr_schedule: t.lr_schedule,
        weight_decay: t.weight_decay,
        grad_clip: t.grad_clip,
        seed,
    }
}

fn build_selections(
    cfg: &ExperimentConfig,
    sys: &LaplaceSystem,
    model: &MlpModel,
    train_x: &ndarray::Array2<f64>,
) -> Result<Vec<SubsetSelection>, sublap::Error> {
    let methods = cfg.methods.as_ref().expect("validated");
    let wants_summary = methods.list.iter().any(|m| {
        matches!(
            parse_method(m),
            Some(SelectionMethod::GradientLaplace) | Some(SelectionMethod::GreedyLaplace)
        )
    });
    let summary = if wants_summary {
        Some(gradient_summary(model, train_x)?)
    } else {
        None
    };
    let wants_diag = methods
        .list
        .iter()
        .any(|m| matches!(parse_method(m), Some(SelectionMethod::SubnetDiagonal)));
    let diag = wants_diag.then(|| sys.diag_precision());

    let mut selections = Vec::new();
    for name in &methods.list {
        match parse_method(name).expect("validated") {
            SelectionMethod::NeuralLinear => selections.push(select_neural_linear(model)),
            SelectionMethod::GradientLaplace => {
                for &k in &methods.k_grid {
                    selections.push(select_gradient_laplace(summary.as_ref().unwrap(), k)?);
                }
            }
            SelectionMethod::GreedyLaplace => {
                for &k in &methods.k_grid {
                    selections.push(select_greedy_laplace(
                        sys,
                        summary.as_ref().unwrap(),
                        k,
                        methods.pool,
                    )?);
                }
            }
            SelectionMethod::SubnetDiagonal => {
                for &k in &methods.k_grid {
                    selections.push(select_subnet_diagonal(diag.as_ref().unwrap().view(), k)?);
                }
            }
            SelectionMethod::LastK => {
                for &k in &methods.k_grid {
                    selections.push(select_last_k(model, k)?);
                }
            }
            SelectionMethod::Explicit => unreachable!("not an accepted config method"),
        }
    }
    Ok(selections)
}

#[derive(Serialize)]
struct EvalShard {
    experiment: String,
    config_hash: String,
    seed: u64,
    noise_var: f64,
    rows: Vec<SweepRow>,
}

fn eval_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    coverage: bool,
) -> Result<EvalShard, sublap::Error> {
    let prepared = prepare_data(cfg, seed, coverage)?;
    let (train, test) = (&prepared.train, &prepared.test);
    let model_cfg = cfg.model.as_ref().expect("validated");
    let methods = cfg.methods.as_ref().expect("validated");
    let prior_precision = cfg.train.as_ref().expect("validated").prior_precision;

    let p = crate::config::param_count(train.d(), &model_cfg.hidden);
    if methods.k_grid.iter().any(|&k| k == 0 || k > p) {
        return Err(sublap::Error::InvalidArgument(format!(
            "k grid exceeds p = {p}"
        )));
    }

    let layers = scalar_mlp_layers(train.d(), &model_cfg.hidden);
    let init = MlpModel::init(layers.clone(), derive_seed(seed, 2))?;
    let loss = match train.task {
        Task::Regression => Loss::Mse,
        Task::Binary => Loss::Bce,
    };
    let fit = train_map(
        &init,
        &train.x,
        &train.y,
        loss,
        &train_config(cfg, derive_seed(seed, 3)),
        prior_precision,
    )?;

    let (likelihood, noise_var) = match train.task {
        Task::Regression => (
            Likelihood::Regression,
            estimate_noise_var(&fit, &test.x, &test.y)?,
        ),
        Task::Binary => (Likelihood::BinaryClassification, 1.0),
    };
    let sys = LaplaceSystem::build(
        &fit,
        &train.x,
        likelihood,
        noise_var,
        Array1::from_elem(fit.p(), prior_precision),
    )?;
    fit.save(&cfg.output_dir.join(format!("model_seed{seed}.json")))?;
    let selections = build_selections(cfg, &sys, &fit, &train.x)?;
    for sel in &selections {
        let path = cfg.output_dir.join(format!(
            "selection_{}_k{}_seed{seed}.txt",
            sel.method(),
            sel.k()
        ));
        let mut w = BufWriter::new(File::create(path)?);
        sel.export(&mut w, seed, methods.pool)?;
    }

    let mut rows = if coverage {
        let oracle_values = prepared.oracle_values.as_ref().expect("oracle prepared");
        coverage_sweep_values(
            &sys,
            &selections,
            &test.x,
            &fit,
            oracle_values,
            methods.level,
            methods.interval,
        )?
    } else {
        wasserstein_sweep(&sys, &selections, &test.x, &fit)?
    };

    if coverage {
        if let Some(b) = methods.ensemble_members {
            let ens_cfg = train_config(cfg, derive_seed(seed, 8));
            let members = ensemble_train(
                &layers,
                &train.x,
                &train.y,
                loss,
                b,
                &ens_cfg,
                prior_precision,
            )?;
            let oracle_values = prepared.oracle_values.as_ref().expect("oracle prepared");
            let value = sublap::metrics::ensemble_variance_coverage(
                &members,
                &test.x,
                oracle_values,
                methods.level,
            )?;
            rows.push(SweepRow {
                method: "deep-ensemble".into(),
                k: 0,
                metric: "coverage".into(),
                value,
                stderr: 0.0,
            });
        }
    }

    Ok(EvalShard {
        experiment: cfg.experiment.to_string(),
        config_hash: cfg.hash(),
        seed,
        noise_var,
        rows,
    })
}

fn run_eval(cfg: &ExperimentConfig, coverage: bool) -> Result<(), RunError> {
    let mut shards: Vec<EvalShard> = cfg
        .seeds
        .par_iter()
        .map(|&s| eval_seed(cfg, s, coverage))
        .collect::<Result<_, _>>()?;
    shards.sort_by_key(|s| s.seed);

    let name = cfg.experiment.to_string();
    for shard in &shards {
        write_json(
            &cfg.output_dir
                .join(format!("{name}_seed{}.json", shard.seed)),
            shard,
        )?;
    }

    // Aggregate rows across seeds: mean of per-seed means, stderr over seeds.
    let mut grouped: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
    for shard in &shards {
        for row in &shard.rows {
            grouped
                .entry((row.method.clone(), row.k, row.metric.clone()))
                .or_default()
                .push(row.value);
        }
    }
    let agg_rows: Vec<SweepRow> = grouped
        .into_iter()
        .map(|((method, k, metric), values)| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let stderr = if values.len() > 1 {
                let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            SweepRow {
                method,
                k,
                metric,
                value: mean,
                stderr,
            }
        })
        .collect();
    let meta = format!(
        "config_hash={} seeds={}",
        cfg.hash(),
        cfg.seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",")
    );
    let path = cfg.output_dir.join(format!("{name}_aggregate.csv"));
    let mut w = BufWriter::new(File::create(path).map_err(sublap::Error::Io)?);
    write_metric_csv(&mut w, &meta, "all", &agg_rows).map_err(RunError::Runtime)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Theory experiment
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TheoryCheck {
    check: String,
    instance_seed: u64,
    k: Option<usize>,
    report: TheoremReport,
}

#[derive(Serialize)]
struct TheoryShard {
    experiment: String,
    config_hash: String,
    seed: u64,
    checks: Vec<TheoryCheck>,
}

#[derive(Serialize)]
struct TheorySummary {
    config_hash: String,
    total_checks: usize,
    failed_checks: usize,
    worst_margin_by_check: BTreeMap<String, f64>,
    passed: bool,
}

fn theory_seed(cfg: &ExperimentConfig, seed: u64) -> Result<TheoryShard, sublap::Error> {
    let t = cfg.theory.as_ref().expect("validated");
    let mut checks = Vec::new();
    for i in 0..t.instances {
        let s1 = derive_seed(seed, 1000 + i as u64);
        let inst = make_random_psd_instance(t.p, s1)?;
        checks.push(TheoryCheck {
            check: "theorem1".into(),
            instance_seed: s1,
            k: None,
            report: verify_theorem1(&inst, t.p)?,
        });

        let s2 = derive_seed(seed, 2000 + i as u64);
        let cpi = make_cpi_instance(t.p, s2, t.diag_spread)?;
        for &k in &t.k_values {
            checks.push(TheoryCheck {
                check: "theorem2".into(),
                instance_seed: s2,
                k: Some(k),
                report: verify_theorem2(&cpi, k)?,
            });
        }

        let s3 = derive_seed(seed, 3000 + i as u64);
        let dd = make_dd_instance(t.p, t.epsilon, t.ratio_margin, s3)?;
        for &k in &t.k_values {
            checks.push(TheoryCheck {
                check: "theorem3".into(),
                instance_seed: s3,
                k: Some(k),
                report: verify_theorem3(&dd, k)?,
            });
        }
    }
    Ok(TheoryShard {
        experiment: "theory".into(),
        config_hash: cfg.hash(),
        seed,
        checks,
    })
}

fn run_theory(cfg: &ExperimentConfig) -> Result<(), RunError> {
    let mut shards: Vec<TheoryShard> = cfg
        .seeds
        .par_iter()
        .map(|&s| theory_seed(cfg, s))
        .collect::<Result<_, _>>()?;
    shards.sort_by_key(|s| s.seed);

    let mut total = 0usize;
    let mut failed = 0usize;
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    for shard in &shards {
        write_json(
            &cfg.output_dir
                .join(format!("theory_seed{}.json", shard.seed)),
            shard,
        )?;
        for c in &shard.checks {
            total += 1;
            if !c.report.passed {
                failed += 1;
            }
            let entry = worst.entry(c.check.clone()).or_insert(f64::INFINITY);
            *entry = entry.min(c.report.worst_margin);
        }
    }
    let summary = TheorySummary {
        config_hash: cfg.hash(),
        total_checks: total,
        failed_checks: failed,
        worst_margin_by_check: worst,
        passed: failed == 0,
    };
    write_json(&cfg.output_dir.join("theory_summary.json"), &summary)?;
    if failed > 0 {
        return Err(RunError::Falsified);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Bandit experiment
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct BanditMethodSummary {
    config_hash: String,
    method: String,
    k: usize,
    per_seed: Vec<BanditSeedRow>,
    mean: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct BanditSeedRow {
    seed: u64,
    final_regret: f64,
}

fn bandit_k_label(kind: PosteriorKind, k: usize) -> usize {
    match kind {
        PosteriorKind::Map => 0,
        // Last layer of the fixed 7-100-100-1 reward model.
        PosteriorKind::NeuralLinear => 101,
        _ => k,
    }
}

fn run_bandit_cmd(cfg: &ExperimentConfig) -> Result<(), RunError> {
    let b = cfg.bandit.as_ref().expect("validated");
    let wheel = WheelConfig {
        delta: b.delta,
        mu_center: b.mu_center,
        mu_high: b.mu_high,
        reward_std: b.reward_std,
        inner_center_bonus: b.inner_center_bonus,
        horizon: b.horizon,
        seed: b.env_seed,
    };

    // (method, k) grid; k-independent methods contribute one cell each.
    let mut cells: Vec<(PosteriorKind, usize)> = Vec::new();
    for &m in &b.methods {
        match m {
            PosteriorKind::Map | PosteriorKind::NeuralLinear => cells.push((m, 1)),
            _ => {
                for &k in &b.k_grid {
                    cells.push((m, k));
                }
            }
        }
    }

    let mut agg_lines: Vec<String> = Vec::new();
    for (kind, k) in cells {
        let agent = AgentConfig::new(kind, k);
        let mut per_seed: Vec<(u64, sublap::wheel::BanditTrace)> = cfg
            .seeds
            .par_iter()
            .map(|&s| run_bandit(&wheel, &agent, &[s]).map(|(mut tr, _)| (s, tr.remove(0))))
            .collect::<Result<_, _>>()?;
        per_seed.sort_by_key(|(s, _)| *s);

        let label = bandit_k_label(kind, k);
        for (s, trace) in &per_seed {
            let path = cfg
                .output_dir
                .join(format!("bandit_trace_{kind}_k{label}_seed{s}.csv"));
            let mut w = BufWriter::new(File::create(path).map_err(sublap::Error::Io)?);
            writeln!(w, "# config_hash={} seed={s}", cfg.hash()).map_err(sublap::Error::Io)?;
            trace.write_csv(&mut w).map_err(RunError::Runtime)?;
        }

        let finals: Vec<f64> = per_seed.iter().map(|(_, t)| t.final_regret()).collect();
        let n = finals.len() as f64;
        let mean = finals.iter().sum::<f64>() / n;
        let stderr = if finals.len() > 1 {
            let var = finals.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        let summary = BanditMethodSummary {
            config_hash: cfg.hash(),
            method: kind.to_string(),
            k: label,
            per_seed: per_seed
                .iter()
                .map(|(s, t)| BanditSeedRow {
                    seed: *s,
                    final_regret: t.final_regret(),
                })
                .collect(),
            mean,
            stderr,
        };
        write_json(
            &cfg.output_dir
                .join(format!("bandit_summary_{kind}_k{label}.json")),
            &summary,
        )?;
        agg_lines.push(format!("{kind},{label},{mean},{}", 1.96 * stderr));
    }

    let path = cfg.output_dir.join("bandit_aggregate.csv");
    let mut w = BufWriter::new(File::create(path).map_err(sublap::Error::Io)?);
    writeln!(
        w,
        "# config_hash={} seeds={}",
        cfg.hash(),
        cfg.seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",")
    )
    .map_err(sublap::Error::Io)?;
    writeln!(w, "method,k,mean,ci95_half").map_err(sublap::Error::Io)?;
    for line in agg_lines {
        writeln!(w, "{line}").map_err(sublap::Error::Io)?;
    }
    Ok(())
}
