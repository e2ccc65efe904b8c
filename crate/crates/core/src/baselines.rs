//! Full-batch gradient baselines on the plain feed-forward network.

use std::time::Instant;

use ndarray::{Array, Array1, Array2, ArrayView2, Axis, Dimension, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::energy::{risk_grad, risk_value};
use crate::error::{Error, Result};
use crate::model::{accuracy, affine, init_weights, Activation, Architecture, Network};
use crate::scalar::Scalar;
use crate::trainer::{EvalPolicy, IterationRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Sgd {
        lr: f64,
    },
    Adagrad {
        lr: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Adadelta {
        #[serde(default = "default_decay")]
        decay: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_eps() -> f64 {
    1e-6
}

fn default_decay() -> f64 {
    0.95
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn sgd() -> Self {
        OptimizerSpec::Sgd { lr: 1e-6 }
    }

    pub fn adagrad() -> Self {
        OptimizerSpec::Adagrad {
            lr: 1e-3,
            eps: default_eps(),
        }
    }

    pub fn adadelta() -> Self {
        OptimizerSpec::Adadelta {
            decay: default_decay(),
            eps: default_eps(),
        }
    }

    pub fn adam() -> Self {
        OptimizerSpec::Adam {
            lr: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerSpec::Sgd { .. } => "sgd",
            OptimizerSpec::Adagrad { .. } => "adagrad",
            OptimizerSpec::Adadelta { .. } => "adadelta",
            OptimizerSpec::Adam { .. } => "adam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidHyperparams(what));
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let unit = |v: f64| v > 0.0 && v < 1.0;
        match *self {
            OptimizerSpec::Sgd { lr } if !(lr >= 0.0 && lr.is_finite()) => {
                bad(format!("sgd lr must be >= 0, got {lr}"))
            }
            OptimizerSpec::Adagrad { lr, eps } if !pos(lr) || !pos(eps) => {
                bad(format!("adagrad needs lr > 0 and eps > 0, got {lr}, {eps}"))
            }
            OptimizerSpec::Adadelta { decay, eps } if !unit(decay) || !pos(eps) => {
                bad(format!("adadelta needs decay in (0,1) and eps > 0, got {decay}, {eps}"))
            }
            OptimizerSpec::Adam { lr, beta1, beta2, eps } if !pos(lr) || !unit(beta1) || !unit(beta2) || !pos(eps) => {
                bad(format!(
                    "adam needs lr > 0, betas in (0,1), eps > 0, got {lr}, {beta1}, {beta2}, {eps}"
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Gradients of the summed cross-entropy with respect to every `W_l`, `b_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub loss: S,
    pub weights: Vec<Array2<S>>,
    pub biases: Vec<Array1<S>>,
}

/// Exact gradients of the plain network loss by backpropagation.
pub fn backprop_grads<S: Scalar>(
    weights: &[Array2<S>],
    biases: &[Array1<S>],
    activation: Activation,
    x: ArrayView2<S>,
    y: ArrayView2<S>,
) -> Result<Gradients<S>> {
    let l_count = weights.len();
    if l_count == 0 || biases.len() != l_count {
        return Err(Error::DimensionMismatch(format!(
            "{} weight matrices vs {} bias vectors",
            l_count,
            biases.len()
        )));
    }
    // forward, keeping pre-activations and activations
    let mut zs: Vec<Array2<S>> = Vec::with_capacity(l_count);
    let mut hs: Vec<Array2<S>> = Vec::with_capacity(l_count - 1);
    for l in 0..l_count {
        let input = if l == 0 { x } else { hs[l - 1].view() };
        if weights[l].ncols() != input.nrows() || biases[l].len() != weights[l].nrows() {
            return Err(Error::DimensionMismatch(format!(
                "layer {} expects {} inputs, got {}",
                l + 1,
                weights[l].ncols(),
                input.nrows()
            )));
        }
        let z = affine(&weights[l], input, &biases[l]);
        if l + 1 < l_count {
            hs.push(activation.apply_matrix(&z));
        }
        zs.push(z);
    }
    let logits = zs[l_count - 1].view();
    if logits.dim() != y.dim() {
        return Err(Error::DimensionMismatch(format!(
            "logits {:?} vs labels {:?}",
            logits.dim(),
            y.dim()
        )));
    }
    let loss = risk_value(logits, y)?;
    let mut delta = risk_grad(logits, y)?;

    let mut dw = vec![Array2::zeros((0, 0)); l_count];
    let mut db = vec![Array1::zeros(0); l_count];
    for l in (0..l_count).rev() {
        let input = if l == 0 { x } else { hs[l - 1].view() };
        dw[l] = delta.dot(&input.t());
        db[l] = delta.sum_axis(Axis(1));
        if l > 0 {
            let mut back = weights[l].t().dot(&delta);
            Zip::from(&mut back)
                .and(&zs[l - 1])
                .for_each(|d, &z| *d *= activation.derivative(z));
            delta = back;
        }
    }
    Ok(Gradients {
        loss,
        weights: dw,
        biases: db,
    })
}

/// Per-tensor optimizer buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Slots<S> {
    pub first: Vec<Array2<S>>,
    pub second: Vec<Array2<S>>,
    pub first_b: Vec<Array1<S>>,
    pub second_b: Vec<Array1<S>>,
}

/// Optimizer state: step counter plus two moment buffers per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<S> {
    pub steps: u64,
    pub slots: Slots<S>,
}

impl<S: Scalar> OptState<S> {
    pub fn new(weights: &[Array2<S>], biases: &[Array1<S>]) -> Self {
        let zw = || weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect::<Vec<_>>();
        let zb = || biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect::<Vec<_>>();
        OptState {
            steps: 0,
            slots: Slots {
                first: zw(),
                second: zw(),
                first_b: zb(),
                second_b: zb(),
            },
        }
    }
}

fn update_tensor<S: Scalar, D: Dimension>(
    spec: OptimizerSpec,
    steps: u64,
    param: &mut Array<S, D>,
    grad: &Array<S, D>,
    first: &mut Array<S, D>,
    second: &mut Array<S, D>,
) {
    let one = S::one();
    match spec {
        OptimizerSpec::Sgd { lr } => {
            let lr = S::of(lr);
            Zip::from(param).and(grad).for_each(|p, &g| *p -= lr * g);
        }
        OptimizerSpec::Adagrad { lr, eps } => {
            let (lr, eps) = (S::of(lr), S::of(eps));
            Zip::from(param).and(grad).and(first).for_each(|p, &g, acc| {
                *acc += g * g;
                *p -= lr * g / (acc.sqrt() + eps);
            });
        }
        OptimizerSpec::Adadelta { decay, eps } => {
            let (rho, eps) = (S::of(decay), S::of(eps));
            Zip::from(param)
                .and(grad)
                .and(first)
                .and(second)
                .for_each(|p, &g, eg2, edx2| {
                    *eg2 = rho * *eg2 + (one - rho) * g * g;
                    let dx = -((*edx2 + eps).sqrt() / (*eg2 + eps).sqrt()) * g;
                    *edx2 = rho * *edx2 + (one - rho) * dx * dx;
                    *p += dx;
                });
        }
        OptimizerSpec::Adam { lr, beta1, beta2, eps } => {
            let (lr, b1, b2, eps) = (S::of(lr), S::of(beta1), S::of(beta2), S::of(eps));
            let c1 = one - S::of(beta1.powi(steps as i32));
            let c2 = one - S::of(beta2.powi(steps as i32));
            Zip::from(param)
                .and(grad)
                .and(first)
                .and(second)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

/// Applies one optimizer step to every weight and bias.
pub fn step<S: Scalar>(
    state: &mut OptState<S>,
    weights: &mut [Array2<S>],
    biases: &mut [Array1<S>],
    grads: &Gradients<S>,
    spec: OptimizerSpec,
) {
    state.steps += 1;
    let t = state.steps;
    let slots = &mut state.slots;
    for (l, w) in weights.iter_mut().enumerate() {
        update_tensor(spec, t, w, &grads.weights[l], &mut slots.first[l], &mut slots.second[l]);
    }
    for (l, b) in biases.iter_mut().enumerate() {
        update_tensor(
            spec,
            t,
            b,
            &grads.biases[l],
            &mut slots.first_b[l],
            &mut slots.second_b[l],
        );
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome<S> {
    pub history: Vec<IterationRecord>,
    pub network: Network<S>,
}

/// Full-batch training for `epochs` steps from the same initialization as the
/// ADMM solver. `objective_f` in each record is the loss at the parameters the
/// step's gradient was taken at.
#[allow(clippy::too_many_arguments)]
pub fn train_baseline<S: Scalar>(
    arch: &Architecture,
    spec: OptimizerSpec,
    epochs: usize,
    seed: u64,
    train_data: &Dataset<S>,
    test_data: Option<&Dataset<S>>,
    eval: EvalPolicy,
    mut observer: impl FnMut(&IterationRecord),
) -> Result<BaselineOutcome<S>> {
    arch.validate()?;
    spec.validate()?;
    if train_data.num_features() != arch.input_dim() || train_data.num_classes() != arch.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} features and {} classes, architecture expects {} and {}",
            train_data.num_features(),
            train_data.num_classes(),
            arch.input_dim(),
            arch.num_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = init_weights::<S>(arch, &mut rng);
    let mut biases: Vec<Array1<S>> = arch.layer_dims[1..].iter().map(|&n| Array1::zeros(n)).collect();
    let mut opt = OptState::new(&weights, &biases);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let started = Instant::now();
        let grads = backprop_grads(
            &weights,
            &biases,
            arch.activation,
            train_data.x.view(),
            train_data.y.view(),
        )?;
        step(&mut opt, &mut weights, &mut biases, &grads, spec);
        if let Some(bad) = weights.iter().position(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("W[{}] after epoch {epoch}", bad + 1)));
        }
        let mut rec = IterationRecord::plain(epoch, grads.loss.as_f64());
        if eval.due(epoch, epochs) {
            let net = Network {
                activation: arch.activation,
                weights: weights.clone(),
                biases: biases.clone(),
            };
            rec.train_accuracy = Some(accuracy(&net.predict(train_data.x.view())?, &train_data.labels));
            if let Some(test) = test_data {
                rec.test_accuracy = Some(accuracy(&net.predict(test.x.view())?, &test.labels));
            }
        }
        rec.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        observer(&rec);
        history.push(rec);
    }
    Ok(BaselineOutcome {
        history,
        network: Network {
            activation: arch.activation,
            weights,
            biases,
        },
    })
}
