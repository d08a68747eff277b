//! Fully-connected feed-forward ReLU networks trained by mini-batch Adam or
//! SGD, with MSE or cross-entropy loss and an optional L1 penalty on the
//! input layer.
//!
//! A model with L hidden layers of width K maps
//!
//! ```text
//! f(x) = link( W(L+1)·relu( … relu( W(1)·x + b(1) ) … ) + b(L+1) )
//! ```
//!
//! to a scalar, where `link` is the identity (regression) or the sigmoid
//! (probability outputs). The input-layer L1 penalty λ‖W(1)‖₁ encourages the
//! network to ignore irrelevant covariates when p is large. Training is
//! bitwise deterministic given the spec's `init_seed` and the data order:
//! one seeded stream drives weight initialization and then every epoch's
//! shuffle.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputLink {
    Identity,
    Sigmoid,
}

/// Canonical Adam constants (learning-rate default lives in `NetworkSpec`).
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Default learning rate for either optimizer.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// Architecture and training configuration for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Hidden-layer count L ≥ 1.
    pub depth: usize,
    /// Hidden-layer width K ≥ 1.
    pub width: usize,
    /// Input-layer L1 penalty weight λ ≥ 0.
    pub l1_input: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub loss: Loss,
    pub output_link: OutputLink,
    pub init_seed: u64,
}

impl NetworkSpec {
    /// MSE + identity-link regression network with default optimizer
    /// settings (Adam, lr 1e−3, batch 100, 100 epochs, no penalty).
    pub fn regression(depth: usize, width: usize) -> NetworkSpec {
        NetworkSpec {
            depth,
            width,
            l1_input: 0.0,
            epochs: 100,
            batch_size: 100,
            learning_rate: DEFAULT_LEARNING_RATE,
            optimizer: Optimizer::Adam,
            loss: Loss::Mse,
            output_link: OutputLink::Identity,
            init_seed: 0,
        }
    }

    /// Cross-entropy + sigmoid-link classifier with the same defaults.
    pub fn classifier(depth: usize, width: usize) -> NetworkSpec {
        NetworkSpec {
            loss: Loss::CrossEntropy,
            output_link: OutputLink::Sigmoid,
            ..NetworkSpec::regression(depth, width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.width < 1 {
            return Err(Error::InvalidConfig(format!(
                "network needs depth ≥ 1 and width ≥ 1, got L={} K={}",
                self.depth, self.width
            )));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(self.l1_input >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "l1_input must be nonnegative, got {}",
                self.l1_input
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.loss == Loss::CrossEntropy && self.output_link != OutputLink::Sigmoid {
            return Err(Error::InvalidConfig(
                "cross-entropy loss requires the sigmoid output link".into(),
            ));
        }
        Ok(())
    }

    /// Total trainable parameter count for a given input dimension.
    pub fn param_count(&self, input_dim: usize) -> usize {
        let mut count = input_dim * self.width + self.width; // first layer
        count += (self.depth - 1) * (self.width * self.width + self.width);
        count += self.width + 1; // output layer
        count
    }
}

/// Parameter-shaped gradient holder returned by [`NetworkModel::loss_and_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// A trained (or initialized) network. Weight matrix l has shape
/// (fan_in × fan_out) so a batch propagates as `X · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    spec: NetworkSpec,
    train_loss_trace: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl NetworkModel {
    /// He-style uniform initialization: weights ~ U(±√(6/fan_in)) drawn from
    /// a ChaCha stream seeded by `spec.init_seed`, biases zero.
    pub fn init(spec: &NetworkSpec, input_dim: usize) -> Result<NetworkModel> {
        spec.validate()?;
        if input_dim == 0 {
            return Err(Error::InvalidConfig("input dimension must be ≥ 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let model = NetworkModel::init_with_rng(spec, input_dim, &mut rng);
        Ok(model)
    }

    fn init_with_rng(spec: &NetworkSpec, input_dim: usize, rng: &mut ChaCha8Rng) -> NetworkModel {
        let dims = layer_dims(spec, input_dim);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.random_range(-bound..=bound)
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        NetworkModel {
            weights,
            biases,
            spec: spec.clone(),
            train_loss_trace: Vec::new(),
        }
    }

    /// Build a model from explicit parameters (used for hand-constructed
    /// networks and finite-difference tests). Shapes must chain from the
    /// input dimension through `depth` hidden layers of `width` to a single
    /// output, and every value must be finite.
    pub fn from_parts(
        spec: NetworkSpec,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
    ) -> Result<NetworkModel> {
        spec.validate()?;
        if weights.len() != spec.depth + 1 || biases.len() != spec.depth + 1 {
            return Err(Error::DimensionMismatch {
                expected: spec.depth + 1,
                got: weights.len().max(biases.len()),
            });
        }
        let input_dim = weights[0].nrows();
        let dims = layer_dims(&spec, input_dim);
        for (l, pair) in dims.windows(2).enumerate() {
            if weights[l].nrows() != pair[0] || weights[l].ncols() != pair[1] {
                return Err(Error::DimensionMismatch {
                    expected: pair[0] * pair[1],
                    got: weights[l].len(),
                });
            }
            if biases[l].len() != pair[1] {
                return Err(Error::DimensionMismatch {
                    expected: pair[1],
                    got: biases[l].len(),
                });
            }
        }
        let finite = weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::PredictionNonFinite {
                target: "network parameters".into(),
            });
        }
        Ok(NetworkModel {
            weights,
            biases,
            spec,
            train_loss_trace: Vec::new(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    /// Per-epoch training losses (size-weighted means over batches).
    pub fn train_loss_trace(&self) -> &[f64] {
        &self.train_loss_trace
    }

    /// Largest absolute parameter value — reported because the theoretical
    /// function class bounds ‖Θ‖∞, while training leaves it unconstrained.
    pub fn max_abs_param(&self) -> f64 {
        let w = self
            .weights
            .iter()
            .flat_map(|m| m.iter())
            .fold(0.0_f64, |a, &v| a.max(v.abs()));
        self.biases
            .iter()
            .flat_map(|b| b.iter())
            .fold(w, |a, &v| a.max(v.abs()))
    }

    /// Pre-link network outputs (logits) for a feature batch.
    fn logits(&self, features: &Array2<f64>) -> Array1<f64> {
        let mut activation = features.dot(&self.weights[0]) + &self.biases[0];
        activation.mapv_inplace(|v| v.max(0.0));
        for l in 1..self.spec.depth {
            activation = activation.dot(&self.weights[l]) + &self.biases[l];
            activation.mapv_inplace(|v| v.max(0.0));
        }
        let last = self.spec.depth;
        let out = activation.dot(&self.weights[last]) + &self.biases[last];
        out.index_axis(Axis(1), 0).to_owned()
    }

    /// Evaluate the network on one feature vector.
    pub fn forward(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: features.len(),
            });
        }
        let x = Array2::from_shape_vec((1, features.len()), features.to_vec())
            .expect("1-row matrix");
        Ok(self.predict(&x)?[0])
    }

    /// Evaluate the network on a feature batch, applying the output link.
    pub fn predict(&self, features: &Array2<f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: features.ncols(),
            });
        }
        let z = self.logits(features);
        Ok(match self.spec.output_link {
            OutputLink::Identity => z.to_vec(),
            OutputLink::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
        })
    }

    /// Training objective and its exact gradient on one batch:
    /// mean data loss + λ‖W(1)‖₁, with the L1 subgradient convention
    /// sign(0) = 0. The data-loss/link pairs reduce to stable logit-space
    /// forms; cross-entropy in particular never exponentiates a positive
    /// logit.
    pub fn loss_and_gradient(
        &self,
        features: &Array2<f64>,
        targets: &[f64],
    ) -> Result<(f64, Gradients)> {
        let batch = features.nrows();
        if batch == 0 || batch != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.max(1),
                got: targets.len(),
            });
        }
        if features.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: features.ncols(),
            });
        }
        let depth = self.spec.depth;

        // Forward pass, keeping each layer's post-ReLU activation.
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(depth + 1);
        let mut current = features.to_owned();
        for l in 0..depth {
            let mut z = current.dot(&self.weights[l]) + &self.biases[l];
            z.mapv_inplace(|v| v.max(0.0));
            activations.push(z.clone());
            current = z;
        }
        let logits = (current.dot(&self.weights[depth]) + &self.biases[depth])
            .index_axis(Axis(1), 0)
            .to_owned();

        let b = batch as f64;
        let mut data_loss = 0.0;
        let mut dlogit = Array1::<f64>::zeros(batch);
        for i in 0..batch {
            let z = logits[i];
            let y = targets[i];
            match (self.spec.loss, self.spec.output_link) {
                (Loss::Mse, OutputLink::Identity) => {
                    let r = z - y;
                    data_loss += r * r / b;
                    dlogit[i] = 2.0 * r / b;
                }
                (Loss::Mse, OutputLink::Sigmoid) => {
                    let p = sigmoid(z);
                    let r = p - y;
                    data_loss += r * r / b;
                    dlogit[i] = 2.0 * r * p * (1.0 - p) / b;
                }
                (Loss::CrossEntropy, _) => {
                    data_loss += (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()) / b;
                    dlogit[i] = (sigmoid(z) - y) / b;
                }
            }
        }

        // Backward pass.
        let mut grad_w: Vec<Array2<f64>> = Vec::with_capacity(depth + 1);
        let mut grad_b: Vec<Array1<f64>> = Vec::with_capacity(depth + 1);
        let delta = dlogit.insert_axis(Axis(1)); // batch × 1
        grad_w.push(activations[depth - 1].t().dot(&delta));
        grad_b.push(delta.sum_axis(Axis(0)));
        let mut delta = delta.dot(&self.weights[depth].t()); // batch × width
        for l in (0..depth).rev() {
            // ReLU derivative: the stored activation is positive exactly
            // where the pre-activation was.
            delta.zip_mut_with(&activations[l], |d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            let below = if l == 0 { features } else { &activations[l - 1] };
            grad_w.push(below.t().dot(&delta));
            grad_b.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                delta = delta.dot(&self.weights[l].t());
            }
        }
        grad_w.reverse();
        grad_b.reverse();

        // Input-layer L1 penalty and subgradient.
        let mut loss = data_loss;
        let lambda = self.spec.l1_input;
        if lambda > 0.0 {
            loss += lambda * self.weights[0].iter().map(|v| v.abs()).sum::<f64>();
            grad_w[0].zip_mut_with(&self.weights[0], |g, &w| {
                *g += lambda * w.signum() * f64::from(w != 0.0);
            });
        }
        Ok((
            loss,
            Gradients {
                weights: grad_w,
                biases: grad_b,
            },
        ))
    }
}

fn layer_dims(spec: &NetworkSpec, input_dim: usize) -> Vec<usize> {
    let mut dims = vec![input_dim];
    dims.extend(std::iter::repeat_n(spec.width, spec.depth));
    dims.push(1);
    dims
}

/// First-moment / second-moment state for Adam, one entry per parameter
/// tensor; `t` counts optimizer steps (one per batch).
struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: i32,
}

impl AdamState {
    fn new(model: &NetworkModel) -> AdamState {
        AdamState {
            m_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut NetworkModel, grad: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        for l in 0..model.weights.len() {
            update_adam_tensor(
                &mut model.weights[l],
                &mut self.m_w[l],
                &mut self.v_w[l],
                &grad.weights[l],
                lr,
                bc1,
                bc2,
            );
            update_adam_tensor(
                &mut model.biases[l],
                &mut self.m_b[l],
                &mut self.v_b[l],
                &grad.biases[l],
                lr,
                bc1,
                bc2,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_adam_tensor<D: ndarray::Dimension>(
    params: &mut ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    lr: f64,
    bias_correction1: f64,
    bias_correction2: f64,
) {
    ndarray::Zip::from(params)
        .and(m)
        .and(v)
        .and(grad)
        .for_each(|p, m, v, &g| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bias_correction1;
            let v_hat = *v / bias_correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        });
}

/// Train a network on `(features, targets)` under `spec`.
///
/// One ChaCha stream seeded by `spec.init_seed` first initializes the
/// weights and then produces each epoch's row shuffle, so training is
/// bitwise reproducible for fixed inputs (and, deliberately, sensitive to
/// the row order of the data). Batches are contiguous chunks of the
/// shuffled index list; a short final batch is trained on like any other.
/// Returns `DivergedLoss` as soon as any batch loss is non-finite.
pub fn train(features: &Array2<f64>, targets: &[f64], spec: &NetworkSpec) -> Result<NetworkModel> {
    spec.validate()?;
    let n = features.nrows();
    if n == 0 || features.ncols() == 0 {
        return Err(Error::EmptyTable);
    }
    if targets.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: targets.len(),
        });
    }
    if n < spec.batch_size {
        return Err(Error::InvalidConfig(format!(
            "batch_size {} exceeds the {} training rows",
            spec.batch_size, n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let mut model = NetworkModel::init_with_rng(spec, features.ncols(), &mut rng);
    let mut adam = match spec.optimizer {
        Optimizer::Adam => Some(AdamState::new(&model)),
        Optimizer::Sgd => None,
    };
    let mut indices: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in indices.chunks(spec.batch_size) {
            let batch_x = features.select(Axis(0), chunk);
            let batch_y: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, grad) = model.loss_and_gradient(&batch_x, &batch_y)?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            match (&mut adam, spec.optimizer) {
                (Some(state), _) => state.step(&mut model, &grad, spec.learning_rate),
                (None, _) => {
                    for l in 0..model.weights.len() {
                        model.weights[l].scaled_add(-spec.learning_rate, &grad.weights[l]);
                        model.biases[l].scaled_add(-spec.learning_rate, &grad.biases[l]);
                    }
                }
            }
            epoch_loss += loss * chunk.len() as f64;
        }
        trace.push(epoch_loss / n as f64);
    }
    if let Some(&last) = trace.last() {
        if !last.is_finite() {
            return Err(Error::DivergedLoss {
                epoch: spec.epochs - 1,
            });
        }
    }
    model.train_loss_trace = trace;
    Ok(model)
}
