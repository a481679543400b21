//! Dense feed-forward networks with ReLU activations and a scalar head.
//!
//! Parameters live in a single flat vector. The flattening order is a frozen
//! contract relied on by the last-k and last-layer subset selectors:
//! layer-by-layer from first to last; within a layer the weight matrix in
//! row-major order (output-neuron-major), then the biases.

use std::io::{BufReader, BufWriter};
use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

mod train;
pub(crate) use train::{batch_loss_and_grad, OptState};
pub use train::{
    ensemble_train, mean_squared_error, train_map, Loss, LrSchedule, Optimizer, TrainConfig,
};

/// Element-wise activation applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative; the ReLU subgradient at exactly zero is taken as 0.
    #[inline]
    fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: `out_dim x in_dim` weights plus `out_dim` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }

    /// Number of parameters this layer contributes to the flat vector.
    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Builds the layer stack for a scalar-output ReLU MLP with the given hidden
/// widths, e.g. `scalar_mlp_layers(7, &[100, 100])` for a 7-100-100-1 net.
pub fn scalar_mlp_layers(input_dim: usize, hidden: &[usize]) -> Vec<LayerSpec> {
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input_dim;
    for &w in hidden {
        layers.push(LayerSpec::new(prev, w, Activation::Relu));
        prev = w;
    }
    layers.push(LayerSpec::new(prev, 1, Activation::Identity));
    layers
}

/// A fully connected network with its flattened parameter vector.
///
/// Immutable after training; clone-and-replace to modify.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<LayerSpec>,
    theta: Vec<f64>,
    seed: u64,
}

fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument(
            "model needs at least one layer".into(),
        ));
    }
    for (i, l) in layers.iter().enumerate() {
        if l.in_dim == 0 || l.out_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "layer {i} has zero dimension"
            )));
        }
        if i > 0 && layers[i - 1].out_dim != l.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "layer {i} expects input {} but previous layer outputs {}",
                l.in_dim,
                layers[i - 1].out_dim
            )));
        }
    }
    let last = layers.last().unwrap();
    if last.out_dim != 1 || last.activation != Activation::Identity {
        return Err(Error::InvalidArgument(
            "final layer must be a scalar Identity head".into(),
        ));
    }
    Ok(())
}

impl MlpModel {
    /// Seeded initialization: weights uniform in
    /// `[-sqrt(6/(in+out)), +sqrt(6/(in+out))]` per layer, biases zero.
    pub fn init(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        validate_layers(&layers)?;
        let p: usize = layers.iter().map(LayerSpec::param_count).sum();
        let mut theta = vec![0.0; p];
        let mut rng = rng_from_seed(seed);
        let mut off = 0;
        for l in &layers {
            let bound = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
            for w in &mut theta[off..off + l.in_dim * l.out_dim] {
                *w = rng.gen_range(-bound..=bound);
            }
            // Biases stay zero.
            off += l.param_count();
        }
        Ok(Self {
            layers,
            theta,
            seed,
        })
    }

    /// Wraps an existing flat parameter vector.
    pub fn from_parts(layers: Vec<LayerSpec>, theta: Vec<f64>, seed: u64) -> Result<Self> {
        validate_layers(&layers)?;
        let p: usize = layers.iter().map(LayerSpec::param_count).sum();
        if theta.len() != p {
            return Err(Error::ShapeMismatch(format!(
                "theta has {} entries, layer stack needs {p}",
                theta.len()
            )));
        }
        Ok(Self {
            layers,
            theta,
            seed,
        })
    }

    /// Builds a model from structured per-layer `(weights, biases)` pairs;
    /// weight matrices are `out_dim x in_dim`.
    pub fn from_layer_params(
        layers: Vec<LayerSpec>,
        params: &[(Array2<f64>, Array1<f64>)],
    ) -> Result<Self> {
        validate_layers(&layers)?;
        if params.len() != layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter pairs for {} layers",
                params.len(),
                layers.len()
            )));
        }
        let mut theta = Vec::new();
        for (l, (w, b)) in layers.iter().zip(params) {
            if w.dim() != (l.out_dim, l.in_dim) || b.len() != l.out_dim {
                return Err(Error::ShapeMismatch(format!(
                    "layer params {:?}/{} do not match spec {}x{}",
                    w.dim(),
                    b.len(),
                    l.out_dim,
                    l.in_dim
                )));
            }
            theta.extend(w.iter().copied());
            theta.extend(b.iter().copied());
        }
        Ok(Self {
            layers,
            theta,
            seed: 0,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Total parameter count.
    pub fn p(&self) -> usize {
        self.theta.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn with_theta(&self, theta: Vec<f64>) -> Self {
        debug_assert_eq!(theta.len(), self.theta.len());
        Self {
            layers: self.layers.clone(),
            theta,
            seed: self.seed,
        }
    }

    /// Flat-vector range covering layer `l` (weights then biases).
    pub fn layer_param_range(&self, l: usize) -> Range<usize> {
        let start: usize = self.layers[..l].iter().map(LayerSpec::param_count).sum();
        start..start + self.layers[l].param_count()
    }

    /// Weight matrix of layer `l` viewed as `out_dim x in_dim`.
    pub fn weights(&self, l: usize) -> ArrayView2<'_, f64> {
        let r = self.layer_param_range(l);
        let spec = self.layers[l];
        ArrayView2::from_shape(
            (spec.out_dim, spec.in_dim),
            &self.theta[r.start..r.start + spec.in_dim * spec.out_dim],
        )
        .expect("layout")
    }

    /// Bias vector of layer `l`.
    pub fn biases(&self, l: usize) -> ArrayView1<'_, f64> {
        let r = self.layer_param_range(l);
        let spec = self.layers[l];
        ArrayView1::from_shape(
            spec.out_dim,
            &self.theta[r.start + spec.in_dim * spec.out_dim..r.end],
        )
        .expect("layout")
    }

    fn check_input(&self, x: ArrayView1<'_, f64>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} entries, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Scalar network output for one input.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        self.check_input(x)?;
        let mut a = x.to_owned();
        for (l, spec) in self.layers.iter().enumerate() {
            let w = self.weights(l);
            let b = self.biases(l);
            let mut z = w.dot(&a);
            z += &b;
            z.mapv_inplace(|v| spec.activation.apply(v));
            a = z;
        }
        Ok(a[0])
    }

    /// Batched forward pass: one row of `x` per sample, returns the outputs.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let mut a = x.clone();
        for (l, spec) in self.layers.iter().enumerate() {
            let w = self.weights(l);
            let mut z = a.dot(&w.t());
            z += &self.biases(l);
            z.mapv_inplace(|v| spec.activation.apply(v));
            a = z;
        }
        Ok(a.column(0).to_owned())
    }

    /// Scratch buffers for repeated per-sample gradient evaluations.
    pub fn gradient_workspace(&self) -> GradWorkspace {
        GradWorkspace::new(self)
    }

    /// Gradient of the scalar output with respect to every parameter, laid
    /// out in the frozen flattening order.
    pub fn param_gradient(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let mut ws = self.gradient_workspace();
        let mut grad = Array1::zeros(self.p());
        self.output_and_gradient(&mut ws, x, grad.as_slice_mut().unwrap())?;
        Ok(grad)
    }

    /// Computes the output and writes the parameter gradient into `grad`
    /// (length `p`), reusing `ws` to stay allocation-free.
    pub fn output_and_gradient(
        &self,
        ws: &mut GradWorkspace,
        x: ArrayView1<'_, f64>,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_input(x)?;
        assert_eq!(grad.len(), self.p(), "gradient buffer length");
        let n_layers = self.layers.len();

        ws.acts[0].assign(&x);
        for (l, spec) in self.layers.iter().enumerate() {
            let w = self.weights(l);
            let b = self.biases(l);
            let (z, a_prev) = (&mut ws.preacts[l], &ws.acts[l]);
            for o in 0..spec.out_dim {
                z[o] = w.row(o).dot(a_prev) + b[o];
            }
            for o in 0..spec.out_dim {
                ws.acts[l + 1][o] = spec.activation.apply(z[o]);
            }
        }
        let output = ws.acts[n_layers][0];

        // Reverse pass; the head is Identity with a single unit.
        ws.deltas[n_layers - 1].fill(1.0);
        for l in (0..n_layers).rev() {
            let spec = self.layers[l];
            let r = self.layer_param_range(l);
            let w_len = spec.in_dim * spec.out_dim;
            {
                let (gw, gb) = grad[r.start..r.end].split_at_mut(w_len);
                let delta = &ws.deltas[l];
                let a_prev = ws.acts[l].as_slice().unwrap();
                for o in 0..spec.out_dim {
                    let d = delta[o];
                    let row = &mut gw[o * spec.in_dim..(o + 1) * spec.in_dim];
                    for (g, a) in row.iter_mut().zip(a_prev) {
                        *g = d * a;
                    }
                    gb[o] = d;
                }
            }
            if l > 0 {
                let w = self.weights(l);
                let below = self.layers[l - 1];
                // delta_{l-1} = (W^T delta_l) ⊙ act'(z_{l-1})
                for i in 0..spec.in_dim {
                    let mut s = 0.0;
                    for o in 0..spec.out_dim {
                        s += w[[o, i]] * ws.deltas[l][o];
                    }
                    let zd = below.activation.deriv(ws.preacts[l - 1][i]);
                    ws.next_delta[i] = s * zd;
                }
                ws.deltas[l - 1]
                    .as_slice_mut()
                    .unwrap()
                    .copy_from_slice(&ws.next_delta[..spec.in_dim]);
            }
        }
        Ok(output)
    }

    /// Writes the model losslessly as a self-describing JSON checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(f), self)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(())
    }

    /// Loads a checkpoint written by [`MlpModel::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let model: MlpModel = serde_json::from_reader(BufReader::new(f))
            .map_err(|e| Error::Ingestion(format!("bad checkpoint {}: {e}", path.display())))?;
        validate_layers(&model.layers)?;
        let p: usize = model.layers.iter().map(LayerSpec::param_count).sum();
        if model.theta.len() != p {
            return Err(Error::Ingestion(format!(
                "checkpoint theta length {} does not match layers ({p})",
                model.theta.len()
            )));
        }
        Ok(model)
    }
}

/// Reusable forward/backward scratch for one model shape.
#[derive(Debug, Clone)]
pub struct GradWorkspace {
    acts: Vec<Array1<f64>>,
    preacts: Vec<Array1<f64>>,
    deltas: Vec<Array1<f64>>,
    next_delta: Vec<f64>,
}

impl GradWorkspace {
    fn new(model: &MlpModel) -> Self {
        let mut acts = vec![Array1::zeros(model.input_dim())];
        let mut preacts = Vec::new();
        let mut deltas = Vec::new();
        let mut widest = model.input_dim();
        for l in &model.layers {
            acts.push(Array1::zeros(l.out_dim));
            preacts.push(Array1::zeros(l.out_dim));
            deltas.push(Array1::zeros(l.out_dim));
            widest = widest.max(l.out_dim).max(l.in_dim);
        }
        Self {
            acts,
            preacts,
            deltas,
            next_delta: vec![0.0; widest],
        }
    }
}
