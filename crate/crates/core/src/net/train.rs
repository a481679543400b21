//! First-order MAP training: Adam and SGD-with-momentum over mini-batches,
//! with an optional cosine learning-rate schedule and a Gaussian-prior L2
//! penalty.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{LayerSpec, MlpModel};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

const SGD_MOMENTUM: f64 = 0.9;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Adam,
    /// Heavy-ball momentum at the fixed coefficient 0.9.
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Decays from `learning_rate` to 0 over the configured epochs.
    CosineAnneal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    Mse,
    Bce,
}

/// Training hyperparameters.
///
/// `weight_decay` and the `prior_precision` argument of [`train_map`] are the
/// same mechanism (a Gaussian-prior L2 penalty); their values add, so set
/// whichever vocabulary fits the experiment and leave the other at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidArgument("grad_clip must be > 0".into()));
            }
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::CosineAnneal => {
                let t = epoch as f64 / self.epochs as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(1 + exp(f))`.
fn softplus(f: f64) -> f64 {
    if f > 0.0 {
        f + (-f).exp().ln_1p()
    } else {
        f.exp().ln_1p()
    }
}

impl Loss {
    /// Per-sample loss value and derivative with respect to the output.
    #[inline]
    fn value_and_dout(self, f: f64, y: f64) -> (f64, f64) {
        match self {
            Loss::Mse => {
                let r = f - y;
                (0.5 * r * r, r)
            }
            Loss::Bce => (softplus(f) - y * f, sigmoid(f) - y),
        }
    }
}

pub(crate) struct BatchPass {
    pub(crate) acts: Vec<Array2<f64>>,
    pub(crate) preacts: Vec<Array2<f64>>,
}

/// Forward pass for a batch keeping activations for backprop.
pub(crate) fn batch_forward(model: &MlpModel, x: &Array2<f64>) -> BatchPass {
    let mut acts = vec![x.clone()];
    let mut preacts = Vec::new();
    for (l, spec) in model.layers().iter().enumerate() {
        let w = model.weights(l);
        let mut z = acts[l].dot(&w.t());
        z += &model.biases(l);
        preacts.push(z.clone());
        z.mapv_inplace(|v| spec.activation.apply(v));
        acts.push(z);
    }
    BatchPass { acts, preacts }
}

/// Mean loss over the batch plus its gradient (data term only).
pub(crate) fn batch_loss_and_grad(
    model: &MlpModel,
    x: &Array2<f64>,
    y: &Array1<f64>,
    loss: Loss,
    grad: &mut Array1<f64>,
) -> f64 {
    let b = x.nrows() as f64;
    let pass = batch_forward(model, x);
    let n_layers = model.layers().len();
    let outputs = pass.acts[n_layers].column(0);

    let mut total = 0.0;
    let mut delta = Array2::<f64>::zeros((x.nrows(), 1));
    for (i, (&f, &t)) in outputs.iter().zip(y.iter()).enumerate() {
        let (v, d) = loss.value_and_dout(f, t);
        total += v;
        delta[[i, 0]] = d / b;
    }

    grad.fill(0.0);
    for l in (0..n_layers).rev() {
        let spec = model.layers()[l];
        let r = model.layer_param_range(l);
        let w_len = spec.in_dim * spec.out_dim;
        let gw = delta.t().dot(&pass.acts[l]);
        let gb = delta.sum_axis(Axis(0));
        grad.as_slice_mut().unwrap()[r.start..r.start + w_len]
            .copy_from_slice(gw.as_slice().unwrap());
        grad.as_slice_mut().unwrap()[r.start + w_len..r.end]
            .copy_from_slice(gb.as_slice().unwrap());
        if l > 0 {
            let w = model.weights(l);
            let mut next = delta.dot(&w);
            let below = model.layers()[l - 1];
            next.zip_mut_with(&pass.preacts[l - 1], |d, &z| {
                *d *= below.activation.deriv(z)
            });
            delta = next;
        }
    }
    total / b
}

pub(crate) enum OptState {
    Adam {
        m: Array1<f64>,
        v: Array1<f64>,
        t: u64,
    },
    Sgd {
        velocity: Array1<f64>,
    },
}

impl OptState {
    pub(crate) fn new(optimizer: Optimizer, p: usize) -> Self {
        match optimizer {
            Optimizer::Adam => OptState::Adam {
                m: Array1::zeros(p),
                v: Array1::zeros(p),
                t: 0,
            },
            Optimizer::SgdMomentum => OptState::Sgd {
                velocity: Array1::zeros(p),
            },
        }
    }

    pub(crate) fn step(&mut self, theta: &mut Array1<f64>, grad: &Array1<f64>, lr: f64) {
        match self {
            OptState::Adam { m, v, t } => {
                *t += 1;
                let b1t = 1.0 - ADAM_BETA1.powi(*t as i32);
                let b2t = 1.0 - ADAM_BETA2.powi(*t as i32);
                ndarray::Zip::from(theta)
                    .and(m)
                    .and(v)
                    .and(grad)
                    .for_each(|th, mi, vi, &g| {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                        let mh = *mi / b1t;
                        let vh = *vi / b2t;
                        *th -= lr * mh / (vh.sqrt() + ADAM_EPS);
                    });
            }
            OptState::Sgd { velocity } => {
                ndarray::Zip::from(theta)
                    .and(velocity)
                    .and(grad)
                    .for_each(|th, vel, &g| {
                        *vel = SGD_MOMENTUM * *vel + g;
                        *th -= lr * *vel;
                    });
            }
        }
    }
}

fn check_targets(loss: Loss, y: &Array1<f64>) -> Result<()> {
    if loss == Loss::Bce {
        for (i, &t) in y.iter().enumerate() {
            if t != 0.0 && t != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "BCE target at row {i} is {t}, expected 0 or 1"
                )));
            }
        }
    }
    Ok(())
}

/// Trains `model` to the MAP estimate of the penalized empirical loss.
///
/// The objective is `mean_n loss(f(x_n), y_n) + lambda/(2N) * ||theta||^2`
/// with `lambda = prior_precision + cfg.weight_decay`. Deterministic given
/// `cfg.seed`; mini-batch order is a seeded shuffle per epoch.
pub fn train_map(
    model: &MlpModel,
    x: &Array2<f64>,
    y: &Array1<f64>,
    loss: Loss,
    cfg: &TrainConfig,
    prior_precision: f64,
) -> Result<MlpModel> {
    cfg.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if y.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {n} rows",
            y.len()
        )));
    }
    if !(prior_precision.is_finite() && prior_precision >= 0.0) {
        return Err(Error::InvalidArgument(
            "prior_precision must be >= 0".into(),
        ));
    }
    check_targets(loss, y)?;

    let lambda = prior_precision + cfg.weight_decay;
    let mut current = model.clone();
    let mut theta = Array1::from_vec(current.theta().to_vec());
    let mut grad = Array1::<f64>::zeros(current.p());
    let mut state = OptState::new(cfg.optimizer, current.p());
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0x548_5546_464c)); // shuffle stream
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            current = current.with_theta(theta.to_vec());
            let data_loss = batch_loss_and_grad(&current, &xb, &yb, loss, &mut grad);
            let penalty = 0.5 * lambda / n as f64 * theta.dot(&theta);
            let total = data_loss + penalty;
            if !total.is_finite() {
                return Err(Error::Divergence { epoch, loss: total });
            }
            if lambda > 0.0 {
                grad.scaled_add(lambda / n as f64, &theta);
            }
            if let Some(clip) = cfg.grad_clip {
                let norm = grad.dot(&grad).sqrt();
                if norm > clip {
                    grad *= clip / norm;
                }
            }
            state.step(&mut theta, &grad, lr);
        }
    }
    Ok(current.with_theta(theta.to_vec()))
}

/// Mean squared error of the model's predictions on `(x, y)`.
pub fn mean_squared_error(model: &MlpModel, x: &Array2<f64>, y: &Array1<f64>) -> Result<f64> {
    let preds = model.forward_batch(x)?;
    if y.len() != preds.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} rows",
            y.len(),
            preds.len()
        )));
    }
    let n = y.len() as f64;
    Ok(preds
        .iter()
        .zip(y.iter())
        .map(|(&f, &t)| (f - t) * (f - t))
        .sum::<f64>()
        / n)
}

/// Trains `b_members >= 2` models, each on an independent bootstrap resample
/// (with replacement, same size as the data). Member seeds are derived
/// deterministically from `cfg.seed`.
pub fn ensemble_train(
    layers: &[LayerSpec],
    x: &Array2<f64>,
    y: &Array1<f64>,
    loss: Loss,
    b_members: usize,
    cfg: &TrainConfig,
    prior_precision: f64,
) -> Result<Vec<MlpModel>> {
    if b_members < 2 {
        return Err(Error::InvalidArgument(format!(
            "ensemble needs at least 2 members, got {b_members}"
        )));
    }
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut members = Vec::with_capacity(b_members);
    for b in 0..b_members {
        let mut boot_rng = rng_from_seed(derive_seed(cfg.seed, 0xb0_0000 + b as u64));
        let idx: Vec<usize> = (0..n)
            .map(|_| rand::Rng::gen_range(&mut boot_rng, 0..n))
            .collect();
        let xb = x.select(Axis(0), &idx);
        let yb = y.select(Axis(0), &idx);
        let init = MlpModel::init(layers.to_vec(), derive_seed(cfg.seed, 0x11_0000 + b as u64))?;
        let member_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, 0x22_0000 + b as u64),
            ..*cfg
        };
        members.push(train_map(
            &init,
            &xb,
            &yb,
            loss,
            &member_cfg,
            prior_precision,
        )?);
    }
    Ok(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{scalar_mlp_layers, Activation};
    use ndarray::array;

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 0.05,
            epochs: 400,
            batch_size: 2,
            lr_schedule: LrSchedule::Constant,
            weight_decay: 0.0,
            grad_clip: None,
            seed,
        }
    }

    #[test]
    fn linear_fit_converges_to_slope_two() {
        // f(x) = w x + b on (1, 2) and (-1, -2): unique minimizer w = 2, b = 0.
        let layers = vec![LayerSpec::new(1, 1, Activation::Identity)];
        let model = MlpModel::init(layers, 1).unwrap();
        let x = array![[1.0], [-1.0]];
        let y = array![2.0, -2.0];
        let fit = train_map(&model, &x, &y, Loss::Mse, &quick_cfg(1), 0.0).unwrap();
        assert!(
            (fit.theta()[0] - 2.0).abs() < 1e-3,
            "w = {}",
            fit.theta()[0]
        );
        assert!(fit.theta()[1].abs() < 1e-3, "b = {}", fit.theta()[1]);
    }

    #[test]
    fn identical_seeds_give_bitwise_identical_parameters() {
        let layers = scalar_mlp_layers(2, &[6]);
        let model = MlpModel::init(layers, 77).unwrap();
        let x = Array2::from_shape_fn((20, 2), |(i, j)| ((i * 3 + j) as f64).sin());
        let y = Array1::from_shape_fn(20, |i| (i as f64 * 0.1).cos());
        let cfg = TrainConfig {
            epochs: 10,
            ..quick_cfg(5)
        };
        let a = train_map(&model, &x, &y, Loss::Mse, &cfg, 1.0).unwrap();
        let b = train_map(&model, &x, &y, Loss::Mse, &cfg, 1.0).unwrap();
        assert_eq!(a.theta(), b.theta());
    }

    #[test]
    fn different_seed_changes_trajectory() {
        let layers = scalar_mlp_layers(2, &[6]);
        let model = MlpModel::init(layers, 77).unwrap();
        let x = Array2::from_shape_fn((20, 2), |(i, j)| ((i * 3 + j) as f64).sin());
        let y = Array1::from_shape_fn(20, |i| (i as f64 * 0.1).cos());
        let a = train_map(
            &model,
            &x,
            &y,
            Loss::Mse,
            &TrainConfig {
                epochs: 3,
                ..quick_cfg(5)
            },
            0.0,
        )
        .unwrap();
        let b = train_map(
            &model,
            &x,
            &y,
            Loss::Mse,
            &TrainConfig {
                epochs: 3,
                ..quick_cfg(6)
            },
            0.0,
        )
        .unwrap();
        assert_ne!(a.theta(), b.theta());
    }

    #[test]
    fn divergence_reports_epoch() {
        let layers = vec![LayerSpec::new(1, 1, Activation::Identity)];
        let model = MlpModel::init(layers, 1).unwrap();
        let x = array![[1e3]];
        let y = array![1.0];
        let cfg = TrainConfig {
            optimizer: Optimizer::SgdMomentum,
            learning_rate: 1e6,
            epochs: 50,
            batch_size: 1,
            lr_schedule: LrSchedule::Constant,
            weight_decay: 0.0,
            grad_clip: None,
            seed: 0,
        };
        match train_map(&model, &x, &y, Loss::Mse, &cfg, 0.0) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn bce_rejects_non_binary_targets() {
        let layers = vec![LayerSpec::new(1, 1, Activation::Identity)];
        let model = MlpModel::init(layers, 1).unwrap();
        let x = array![[1.0]];
        let y = array![0.5];
        assert!(train_map(&model, &x, &y, Loss::Bce, &quick_cfg(0), 0.0).is_err());
    }

    #[test]
    fn bce_training_separates_labels() {
        let layers = scalar_mlp_layers(1, &[8]);
        let model = MlpModel::init(layers, 3).unwrap();
        let x = Array2::from_shape_fn((40, 1), |(i, _)| if i < 20 { -1.0 } else { 1.0 });
        let y = Array1::from_shape_fn(40, |i| if i < 20 { 0.0 } else { 1.0 });
        let cfg = TrainConfig {
            epochs: 200,
            ..quick_cfg(3)
        };
        let fit = train_map(&model, &x, &y, Loss::Bce, &cfg, 0.1).unwrap();
        let f_neg = fit.forward(array![-1.0].view()).unwrap();
        let f_pos = fit.forward(array![1.0].view()).unwrap();
        assert!(f_neg < 0.0 && f_pos > 0.0, "logits {f_neg}, {f_pos}");
    }

    #[test]
    fn cosine_schedule_decays_to_zero() {
        let cfg = TrainConfig {
            lr_schedule: LrSchedule::CosineAnneal,
            epochs: 100,
            ..quick_cfg(0)
        };
        assert!((cfg.lr_at(0) - cfg.learning_rate).abs() < 1e-15);
        assert!(cfg.lr_at(99) < cfg.learning_rate * 0.001);
        assert!(cfg.lr_at(50) < cfg.lr_at(10));
    }

    #[test]
    fn ensemble_members_differ_and_b1_is_rejected() {
        let layers = scalar_mlp_layers(1, &[4]);
        let x = Array2::from_shape_fn((30, 1), |(i, _)| i as f64 * 0.1);
        let y = x.column(0).mapv(|v: f64| v.sin());
        let cfg = TrainConfig {
            epochs: 5,
            ..quick_cfg(11)
        };
        let members = ensemble_train(&layers, &x, &y, Loss::Mse, 2, &cfg, 0.0).unwrap();
        assert_eq!(members.len(), 2);
        assert_ne!(members[0].theta(), members[1].theta());
        assert!(ensemble_train(&layers, &x, &y, Loss::Mse, 1, &cfg, 0.0).is_err());
    }
}
