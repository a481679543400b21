//! Neural Thompson sampling on the wheel bandit with pluggable sub-network
//! Laplace posteriors.
//!
//! The agent alternates environment-interaction blocks with stochastic
//! gradient phases on the replay buffer. After each training phase the
//! subset is re-selected from the current model and the full buffer, the
//! `k x k` subset precision is factored once, and the factor is reused for
//! the following interaction block. Thompson variance is
//! `sigma0^2 + g_S^T Omega_SS^{-1} g_S` with `Omega_SS = J_S^T J_S /
//! sigma0^2 + alpha I` and an online noise estimate from recent residuals.

use std::io::Write;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{WheelConfig, WheelEnv, N_ARMS};
use crate::error::{Error, Result};
use crate::linalg::{mirror_lower, CholeskyFactor};
use crate::net::{batch_loss_and_grad, OptState};
use crate::net::{scalar_mlp_layers, GradWorkspace, Loss, MlpModel, Optimizer};
use crate::rng::{derive_seed, rng_from_seed};
use crate::select::{greedy_order, select_gradient_laplace, GradientSummary, PoolPolicy};

pub const WHEEL_INPUT_DIM: usize = 7;
pub const WHEEL_HIDDEN: [usize; 2] = [100, 100];
/// Parameter count of the 7-100-100-1 reward model; asserted at agent
/// construction.
pub const WHEEL_PARAM_COUNT: usize = 11_001;

const NOISE_FLOOR: f64 = 1e-6;

/// Posterior used for Thompson sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorKind {
    GradientLaplace,
    GreedyLaplace,
    SubnetDiagonal,
    LastK,
    NeuralLinear,
    /// Deterministic point-estimate baseline; no sampling at all.
    Map,
}

impl std::fmt::Display for PosteriorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PosteriorKind::GradientLaplace => "gradient-laplace",
            PosteriorKind::GreedyLaplace => "greedy-laplace",
            PosteriorKind::SubnetDiagonal => "subnet-diagonal",
            PosteriorKind::LastK => "last-k",
            PosteriorKind::NeuralLinear => "neural-linear",
            PosteriorKind::Map => "map",
        })
    }
}

/// Agent hyperparameters; the defaults are the benchmark's schedule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AgentConfig {
    pub posterior: PosteriorKind,
    /// Subset size; ignored for the last-layer and MAP posteriors.
    pub k: usize,
    pub warm_pulls_per_arm: usize,
    pub interact_steps: usize,
    pub sgd_updates: usize,
    pub replay_batch: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub residual_window: usize,
    pub prior_precision: f64,
    pub pool: PoolPolicy,
}

impl AgentConfig {
    pub fn new(posterior: PosteriorKind, k: usize) -> Self {
        Self {
            posterior,
            k,
            warm_pulls_per_arm: 3,
            interact_steps: 20,
            sgd_updates: 100,
            replay_batch: 512,
            lr: 3e-3,
            grad_clip: 1.0,
            residual_window: 200,
            prior_precision: 1.0,
            pool: PoolPolicy::Default,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.posterior != PosteriorKind::Map
            && self.posterior != PosteriorKind::NeuralLinear
            && (self.k == 0 || self.k > p)
        {
            return Err(Error::InvalidArgument(format!(
                "k = {} out of range for p = {p}",
                self.k
            )));
        }
        if self.interact_steps == 0 || self.sgd_updates == 0 || self.replay_batch == 0 {
            return Err(Error::InvalidArgument(
                "schedule parameters must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.grad_clip > 0.0 && self.prior_precision > 0.0) {
            return Err(Error::InvalidArgument(
                "lr, grad_clip, prior_precision must be positive".into(),
            ));
        }
        if self.residual_window == 0 {
            return Err(Error::InvalidArgument(
                "residual_window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Context plus one-hot arm encoding, context first (dimension 7 = 2 + 5).
pub fn arm_input(context: [f64; 2], arm: usize) -> Array1<f64> {
    let mut x = Array1::zeros(WHEEL_INPUT_DIM);
    x[0] = context[0];
    x[1] = context[1];
    x[2 + arm] = 1.0;
    x
}

/// Interaction history; the training set for the reward model.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    inputs: Vec<Array1<f64>>,
    rewards: Vec<f64>,
}

impl ReplayBuffer {
    pub fn push(&mut self, input: Array1<f64>, reward: f64) {
        self.inputs.push(input);
        self.rewards.push(reward);
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn input(&self, i: usize) -> &Array1<f64> {
        &self.inputs[i]
    }

    pub fn reward(&self, i: usize) -> f64 {
        self.rewards[i]
    }

    fn batch(&self, indices: &[usize]) -> (Array2<f64>, Array1<f64>) {
        let mut x = Array2::zeros((indices.len(), WHEEL_INPUT_DIM));
        let mut y = Array1::zeros(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            x.row_mut(r).assign(&self.inputs[i]);
            y[r] = self.rewards[i];
        }
        (x, y)
    }
}

/// Factored subset posterior for one training phase.
#[derive(Debug)]
pub struct PhasePosterior {
    /// Online observation-noise estimate (floored).
    pub sigma2: f64,
    /// `None` for the MAP baseline.
    subset: Option<(Vec<usize>, CholeskyFactor)>,
}

impl PhasePosterior {
    pub fn indices(&self) -> Option<&[usize]> {
        self.subset.as_ref().map(|(s, _)| s.as_slice())
    }

    /// Thompson variance `sigma0^2 + g_S^T Omega_SS^{-1} g_S` for a
    /// full-length gradient.
    pub fn variance(&self, gradient: &Array1<f64>) -> f64 {
        match &self.subset {
            None => 0.0,
            Some((indices, chol)) => {
                let g_s: Array1<f64> = indices.iter().map(|&i| gradient[i]).collect();
                self.sigma2 + chol.quad_form(&g_s).max(0.0)
            }
        }
    }
}

/// Mean squared residual over the last `window` buffer entries, floored.
fn estimate_noise(model: &MlpModel, buffer: &ReplayBuffer, window: usize) -> Result<f64> {
    let n = buffer.len();
    let start = n.saturating_sub(window);
    let mut acc = 0.0;
    for i in start..n {
        let f = model.forward(buffer.input(i).view())?;
        let r = buffer.reward(i) - f;
        acc += r * r;
    }
    Ok((acc / (n - start) as f64).max(NOISE_FLOOR))
}

/// Gradient columns `J[:, indices]` over the whole buffer (one row per
/// transition), in the given index order.
fn buffer_columns(
    model: &MlpModel,
    buffer: &ReplayBuffer,
    indices: &[usize],
    ws: &mut GradWorkspace,
    grad_scratch: &mut [f64],
) -> Result<Array2<f64>> {
    let n = buffer.len();
    let mut cols = Array2::zeros((n, indices.len()));
    for i in 0..n {
        model.output_and_gradient(ws, buffer.input(i).view(), grad_scratch)?;
        let mut row = cols.row_mut(i);
        for (c, &j) in indices.iter().enumerate() {
            row[c] = grad_scratch[j];
        }
    }
    Ok(cols)
}

/// Mean squared gradient over the buffer (first pass of a phase refresh).
fn buffer_summary(
    model: &MlpModel,
    buffer: &ReplayBuffer,
    ws: &mut GradWorkspace,
    grad_scratch: &mut [f64],
) -> Result<GradientSummary> {
    let mut acc = Array1::<f64>::zeros(model.p());
    for i in 0..buffer.len() {
        model.output_and_gradient(ws, buffer.input(i).view(), grad_scratch)?;
        for (a, &g) in acc.iter_mut().zip(grad_scratch.iter()) {
            *a += g * g;
        }
    }
    acc /= buffer.len() as f64;
    GradientSummary::from_values(acc)
}

fn omega_from_columns(cols: &Array2<f64>, sigma2: f64, alpha: f64) -> Array2<f64> {
    let mut omega = cols.t().dot(cols) / sigma2;
    for i in 0..omega.nrows() {
        omega[[i, i]] += alpha;
    }
    mirror_lower(&mut omega);
    omega
}

/// Rebuilds the subset posterior from the current model and the full replay
/// buffer: two gradient passes (summary, then selected columns) and one
/// `k x k` factorization.
pub fn build_phase_posterior(
    model: &MlpModel,
    buffer: &ReplayBuffer,
    cfg: &AgentConfig,
    sigma2: f64,
) -> Result<PhasePosterior> {
    if buffer.is_empty() {
        return Err(Error::InvalidArgument("replay buffer is empty".into()));
    }
    if cfg.posterior == PosteriorKind::Map {
        return Ok(PhasePosterior {
            sigma2,
            subset: None,
        });
    }
    let p = model.p();
    let mut ws = model.gradient_workspace();
    let mut scratch = vec![0.0; p];

    let (indices, chol) = match cfg.posterior {
        PosteriorKind::Map => unreachable!(),
        PosteriorKind::GreedyLaplace => {
            let summary = buffer_summary(model, buffer, &mut ws, &mut scratch)?;
            let pool_size = cfg.pool.pool_size(cfg.k, p);
            let pool = select_gradient_laplace(&summary, pool_size)?;
            let cols = buffer_columns(model, buffer, pool.indices(), &mut ws, &mut scratch)?;
            let omega_pool = omega_from_columns(&cols, sigma2, cfg.prior_precision);
            let local = greedy_order(&omega_pool, cfg.k)?;
            let global: Vec<usize> = local.iter().map(|&i| pool.indices()[i]).collect();
            // The subset precision is a principal submatrix of the pool's.
            let k = local.len();
            let mut omega_ss = Array2::zeros((k, k));
            for (a, &la) in local.iter().enumerate() {
                for (b, &lb) in local.iter().enumerate() {
                    omega_ss[[a, b]] = omega_pool[[la, lb]];
                }
            }
            (global, CholeskyFactor::with_jitter(&omega_ss)?)
        }
        kind => {
            let indices: Vec<usize> = match kind {
                PosteriorKind::GradientLaplace => {
                    let summary = buffer_summary(model, buffer, &mut ws, &mut scratch)?;
                    select_gradient_laplace(&summary, cfg.k)?.indices().to_vec()
                }
                PosteriorKind::SubnetDiagonal => {
                    let summary = buffer_summary(model, buffer, &mut ws, &mut scratch)?;
                    let diag = summary
                        .values()
                        .mapv(|v| v * buffer.len() as f64 / sigma2 + cfg.prior_precision);
                    crate::select::select_subnet_diagonal(diag.view(), cfg.k)?
                        .indices()
                        .to_vec()
                }
                PosteriorKind::LastK => crate::select::select_last_k(model, cfg.k)?
                    .indices()
                    .to_vec(),
                PosteriorKind::NeuralLinear => crate::select::select_neural_linear(model)
                    .indices()
                    .to_vec(),
                _ => unreachable!(),
            };
            let cols = buffer_columns(model, buffer, &indices, &mut ws, &mut scratch)?;
            let omega = omega_from_columns(&cols, sigma2, cfg.prior_precision);
            (indices, CholeskyFactor::with_jitter(&omega)?)
        }
    };
    Ok(PhasePosterior {
        sigma2,
        subset: Some((indices, chol)),
    })
}

/// Per-round record of the interaction.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RoundRecord {
    pub context: [f64; 2],
    pub arm: usize,
    pub reward: f64,
    pub instant_regret: f64,
}

/// Full interaction history of one run.
#[derive(Debug, Clone, Serialize)]
pub struct BanditTrace {
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub cumulative_regret: Vec<f64>,
}

impl BanditTrace {
    pub fn final_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    /// CSV columns: `round,x1,x2,arm,reward,instant_regret,cum_regret`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "round,x1,x2,arm,reward,instant_regret,cum_regret")?;
        for (i, r) in self.rounds.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                i,
                r.context[0],
                r.context[1],
                r.arm,
                r.reward,
                r.instant_regret,
                self.cumulative_regret[i]
            )?;
        }
        Ok(())
    }
}

/// Cross-seed summary of final cumulative regret.
#[derive(Debug, Clone, Serialize)]
pub struct BanditSummary {
    pub per_seed_final: Vec<SeedFinal>,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeedFinal {
    pub seed: u64,
    pub final_regret: f64,
}

struct AgentState {
    model: MlpModel,
    theta: Array1<f64>,
    opt: OptState,
    grad: Array1<f64>,
}

impl AgentState {
    fn new(seed: u64) -> Result<Self> {
        let layers = scalar_mlp_layers(WHEEL_INPUT_DIM, &WHEEL_HIDDEN);
        let model = MlpModel::init(layers, seed)?;
        if model.p() != WHEEL_PARAM_COUNT {
            return Err(Error::InvalidArgument(format!(
                "reward model has {} parameters, expected {WHEEL_PARAM_COUNT}",
                model.p()
            )));
        }
        let theta = Array1::from_vec(model.theta().to_vec());
        let p = model.p();
        Ok(Self {
            model,
            theta,
            opt: OptState::new(Optimizer::Adam, p),
            grad: Array1::zeros(p),
        })
    }

    fn train_phase(
        &mut self,
        buffer: &ReplayBuffer,
        cfg: &AgentConfig,
        rng: &mut ChaCha8Rng,
        round: usize,
    ) -> Result<()> {
        for _ in 0..cfg.sgd_updates {
            let idx: Vec<usize> = (0..cfg.replay_batch)
                .map(|_| rng.gen_range(0..buffer.len()))
                .collect();
            let (xb, yb) = buffer.batch(&idx);
            self.model = self.model.with_theta(self.theta.to_vec());
            let loss = batch_loss_and_grad(&self.model, &xb, &yb, Loss::Mse, &mut self.grad);
            if !loss.is_finite() {
                return Err(Error::AgentFault {
                    round,
                    detail: format!("non-finite training loss {loss}"),
                });
            }
            let norm = self.grad.dot(&self.grad).sqrt();
            if norm > cfg.grad_clip {
                self.grad *= cfg.grad_clip / norm;
            }
            self.opt.step(&mut self.theta, &self.grad, cfg.lr);
        }
        self.model = self.model.with_theta(self.theta.to_vec());
        Ok(())
    }
}

/// Thompson choice over the five arms: one posterior-predictive sample per
/// arm, ties broken toward the lowest arm index. The MAP baseline returns
/// the argmax of the predicted means without sampling.
#[allow(clippy::too_many_arguments)]
fn choose_arm(
    model: &MlpModel,
    posterior: &PhasePosterior,
    context: [f64; 2],
    is_map: bool,
    rng: &mut ChaCha8Rng,
    round: usize,
    ws: &mut GradWorkspace,
    grad_scratch: &mut [f64],
) -> Result<usize> {
    let mut best_arm = 0usize;
    let mut best_score = f64::MIN;
    for arm in 0..N_ARMS {
        let input = arm_input(context, arm);
        let score = if is_map {
            model.forward(input.view())?
        } else {
            let mean = model.output_and_gradient(ws, input.view(), grad_scratch)?;
            let g = Array1::from_vec(grad_scratch.to_vec());
            let var = posterior.variance(&g);
            let z: f64 = StandardNormal.sample(rng);
            mean + var.sqrt() * z
        };
        if !score.is_finite() {
            return Err(Error::AgentFault {
                round,
                detail: format!("non-finite score for arm {arm}"),
            });
        }
        if score > best_score {
            best_score = score;
            best_arm = arm;
        }
    }
    Ok(best_arm)
}

fn run_single(wheel: &WheelConfig, agent: &AgentConfig, seed: u64) -> Result<BanditTrace> {
    let master = derive_seed(wheel.seed, seed);
    let env_cfg = WheelConfig {
        seed: derive_seed(master, 0),
        ..*wheel
    };
    let mut env = WheelEnv::new(env_cfg)?;
    let mut state = AgentState::new(derive_seed(master, 1))?;
    agent.validate(state.model.p())?;
    let mut agent_rng = rng_from_seed(derive_seed(master, 2));

    let warm_total = agent.warm_pulls_per_arm * N_ARMS;
    if wheel.horizon < warm_total {
        return Err(Error::InvalidArgument(format!(
            "horizon {} shorter than warm start {warm_total}",
            wheel.horizon
        )));
    }

    let mut buffer = ReplayBuffer::default();
    let mut rounds = Vec::with_capacity(wheel.horizon);
    let mut cum = Vec::with_capacity(wheel.horizon);
    let mut total_regret = 0.0;
    let mut record = |ctx: [f64; 2],
                      arm: usize,
                      pull: &super::Pull,
                      rounds: &mut Vec<RoundRecord>,
                      cum: &mut Vec<f64>| {
        total_regret += pull.instant_regret;
        rounds.push(RoundRecord {
            context: ctx,
            arm,
            reward: pull.reward,
            instant_regret: pull.instant_regret,
        });
        cum.push(total_regret);
    };

    // Warm start: the configured number of pulls for each arm in turn.
    for t in 0..warm_total {
        let (ctx, round) = env.observe();
        let arm = t % N_ARMS;
        let pull = env.pull(round, arm, ctx)?;
        record(ctx, arm, &pull, &mut rounds, &mut cum);
        buffer.push(arm_input(ctx, arm), pull.reward);
    }

    let is_map = agent.posterior == PosteriorKind::Map;
    let mut ws = state.model.gradient_workspace();
    let mut grad_scratch = vec![0.0; state.model.p()];
    let mut played = warm_total;
    while played < wheel.horizon {
        state.train_phase(&buffer, agent, &mut agent_rng, played)?;
        let sigma2 = estimate_noise(&state.model, &buffer, agent.residual_window)?;
        let posterior = build_phase_posterior(&state.model, &buffer, agent, sigma2)?;
        let block = agent.interact_steps.min(wheel.horizon - played);
        for _ in 0..block {
            let (ctx, round) = env.observe();
            let arm = choose_arm(
                &state.model,
                &posterior,
                ctx,
                is_map,
                &mut agent_rng,
                round,
                &mut ws,
                &mut grad_scratch,
            )?;
            let pull = env.pull(round, arm, ctx)?;
            record(ctx, arm, &pull, &mut rounds, &mut cum);
            buffer.push(arm_input(ctx, arm), pull.reward);
            played += 1;
        }
    }

    Ok(BanditTrace {
        seed,
        rounds,
        cumulative_regret: cum,
    })
}

/// Runs one trace per seed and summarizes final cumulative regret.
pub fn run_bandit(
    wheel: &WheelConfig,
    agent: &AgentConfig,
    seeds: &[u64],
) -> Result<(Vec<BanditTrace>, BanditSummary)> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds supplied".into()));
    }
    wheel.validate()?;
    let mut traces = Vec::with_capacity(seeds.len());
    for &s in seeds {
        traces.push(run_single(wheel, agent, s)?);
    }
    let finals: Vec<f64> = traces.iter().map(BanditTrace::final_regret).collect();
    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let stderr = if finals.len() > 1 {
        let var = finals.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok((
        traces,
        BanditSummary {
            per_seed_final: seeds
                .iter()
                .zip(&finals)
                .map(|(&seed, &final_regret)| SeedFinal { seed, final_regret })
                .collect(),
            mean,
            stderr,
        },
    ))
}
