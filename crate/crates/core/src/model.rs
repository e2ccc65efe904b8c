//! Network topology, optimizer state, hyperparameters and inference.
//!
//! Samples are stored as matrix columns: an input batch is `n_0 × N`, the
//! layer-`l` pre-activation `z_l` and activation `a_l` are `n_l × N`, and bias
//! vectors broadcast across columns.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    pub fn apply<S: Scalar>(&self, z: S) -> S {
        match *self {
            Activation::Relu => z.max(S::zero()),
            Activation::LeakyRelu(slope) => {
                if z >= S::zero() {
                    z
                } else {
                    S::of(slope) * z
                }
            }
        }
    }

    #[inline]
    pub fn derivative<S: Scalar>(&self, z: S) -> S {
        match *self {
            Activation::Relu => {
                if z > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::LeakyRelu(slope) => {
                if z > S::zero() {
                    S::one()
                } else {
                    S::of(slope)
                }
            }
        }
    }

    pub fn apply_matrix<S: Scalar>(&self, z: &Array2<S>) -> Array2<S> {
        z.mapv(|v| self.apply(v))
    }

    pub fn validate(&self) -> Result<()> {
        if let Activation::LeakyRelu(slope) = *self {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::InvalidArchitecture(format!(
                    "leaky slope must lie in (0, 1), got {slope}"
                )));
            }
        }
        Ok(())
    }
}

/// Layer widths `n_0..n_L` and the hidden activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        let arch = Architecture { layer_dims, activation };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 3 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least two weight layers (three widths), got {:?}",
                self.layer_dims
            )));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::InvalidArchitecture(format!(
                "every layer width must be positive, got {:?}",
                self.layer_dims
            )));
        }
        self.activation.validate()
    }

    /// Number of weight layers `L`.
    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 1]
    }
}

/// Every primal block plus the dual variable.
///
/// Layers are numbered `1..=L` in the public API; `w[l - 1]` holds `W_l`.
/// `a` has `L - 1` entries (the input `a_0 = x` is not stored).
#[derive(Debug, Clone, PartialEq)]
pub struct NetState<S> {
    pub activation: Activation,
    pub w: Vec<Array2<S>>,
    pub b: Vec<Array1<S>>,
    pub z: Vec<Array2<S>>,
    pub a: Vec<Array2<S>>,
    pub u: Array2<S>,
}

impl<S: Scalar> NetState<S> {
    pub fn num_layers(&self) -> usize {
        self.w.len()
    }

    pub fn num_samples(&self) -> usize {
        self.u.ncols()
    }

    /// `a_{l-1}`, which is the input batch for `l = 1`.
    pub fn layer_input<'a>(&'a self, l: usize, x: ArrayView2<'a, S>) -> ArrayView2<'a, S> {
        if l == 1 {
            x
        } else {
            self.a[l - 2].view()
        }
    }

    /// Checks block shapes against an input batch.
    pub fn check_shapes(&self, x: ArrayView2<S>) -> Result<()> {
        let l_count = self.num_layers();
        let n = x.ncols();
        let mismatch = |what: String| Err(Error::DimensionMismatch(what));
        if l_count < 2 || self.b.len() != l_count || self.z.len() != l_count || self.a.len() != l_count - 1 {
            return mismatch(format!(
                "block counts W={} b={} z={} a={}",
                self.w.len(),
                self.b.len(),
                self.z.len(),
                self.a.len()
            ));
        }
        let mut prev = x.nrows();
        for l in 1..=l_count {
            let w = &self.w[l - 1];
            if w.ncols() != prev {
                return mismatch(format!("W[{l}] has {} columns, expected {prev}", w.ncols()));
            }
            let rows = w.nrows();
            if self.b[l - 1].len() != rows {
                return mismatch(format!("b[{l}] length {} != {rows}", self.b[l - 1].len()));
            }
            if self.z[l - 1].dim() != (rows, n) {
                return mismatch(format!("z[{l}] shape {:?} != {:?}", self.z[l - 1].dim(), (rows, n)));
            }
            if l < l_count && self.a[l - 1].dim() != (rows, n) {
                return mismatch(format!("a[{l}] shape {:?} != {:?}", self.a[l - 1].dim(), (rows, n)));
            }
            prev = rows;
        }
        if self.u.dim() != self.z[l_count - 1].dim() {
            return mismatch(format!("u shape {:?}", self.u.dim()));
        }
        Ok(())
    }

    /// Returns the first non-finite block, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        let bad2 = |m: &Array2<S>| m.iter().any(|v| !v.is_finite());
        let bad1 = |m: &Array1<S>| m.iter().any(|v| !v.is_finite());
        for (i, w) in self.w.iter().enumerate() {
            if bad2(w) {
                return Some(format!("W[{}]", i + 1));
            }
        }
        for (i, b) in self.b.iter().enumerate() {
            if bad1(b) {
                return Some(format!("b[{}]", i + 1));
            }
        }
        for (i, z) in self.z.iter().enumerate() {
            if bad2(z) {
                return Some(format!("z[{}]", i + 1));
            }
        }
        for (i, a) in self.a.iter().enumerate() {
            if bad2(a) {
                return Some(format!("a[{}]", i + 1));
            }
        }
        if bad2(&self.u) {
            return Some("u".to_string());
        }
        None
    }

    pub fn network(&self) -> Network<S> {
        Network {
            activation: self.activation,
            weights: self.w.clone(),
            biases: self.b.clone(),
        }
    }
}

/// Schedule for the penalty parameter ρ, indexed by the 0-based iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoSchedule {
    Fixed,
    Geometric {
        factor: f64,
        every: usize,
        #[serde(default)]
        cap: Option<f64>,
    },
}

impl RhoSchedule {
    pub fn rho_at(&self, rho0: f64, iteration: usize) -> f64 {
        match *self {
            RhoSchedule::Fixed => rho0,
            RhoSchedule::Geometric { factor, every, cap } => {
                let steps = (iteration / every.max(1)) as i32;
                let rho = rho0 * factor.powi(steps);
                match cap {
                    Some(c) => rho.min(c),
                    None => rho,
                }
            }
        }
    }
}

/// Weight regularizer Ω applied to every `W_l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    None,
    L1(f64),
    L2(f64),
}

impl Regularizer {
    /// Whether the proximal map is the identity.
    pub fn is_identity(&self) -> bool {
        matches!(*self, Regularizer::None | Regularizer::L1(0.0) | Regularizer::L2(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::L1(l) | Regularizer::L2(l) if !(l >= 0.0 && l.is_finite()) => Err(Error::InvalidHyperparams(
                format!("regularizer weight must be >= 0, got {l}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub nu: f64,
    pub rho0: f64,
    pub rho_schedule: RhoSchedule,
    /// Growth factor for the backward `a` backtracking.
    pub eta_bar: f64,
    /// Growth factor for the forward `a` backtracking.
    pub eta: f64,
    /// Growth factor for the backward `W` backtracking.
    pub gamma_bar: f64,
    /// Growth factor for the forward `W` backtracking.
    pub gamma: f64,
    /// Initial backtracking coefficient for the first iteration; `None` means ν.
    pub t0: Option<f64>,
    /// Lower bound on warm-started backtracking coefficients.
    pub t_floor: f64,
    pub max_backtracks: usize,
    pub regularizer: Regularizer,
    pub fista_max_iters: usize,
    /// Infinity-norm gradient tolerance; `None` means `1e-8 * sqrt(n_L * N)`.
    pub fista_tol: Option<f64>,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            nu: 1e-6,
            rho0: 1.0,
            rho_schedule: RhoSchedule::Fixed,
            eta_bar: 2.0,
            eta: 2.0,
            gamma_bar: 2.0,
            gamma: 2.0,
            t0: None,
            t_floor: 1e-12,
            max_backtracks: 60,
            regularizer: Regularizer::None,
            fista_max_iters: 100,
            fista_tol: None,
            max_iters: 200,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidHyperparams(format!("{name} must be > 0, got {v}")))
            }
        };
        let growth = |name: &str, v: f64| {
            if v > 1.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidHyperparams(format!("{name} must be > 1, got {v}")))
            }
        };
        positive("nu", self.nu)?;
        positive("rho0", self.rho0)?;
        growth("eta_bar", self.eta_bar)?;
        growth("eta", self.eta)?;
        growth("gamma_bar", self.gamma_bar)?;
        growth("gamma", self.gamma)?;
        positive("t_floor", self.t_floor)?;
        if let Some(t0) = self.t0 {
            positive("t0", t0)?;
        }
        if let Some(tol) = self.fista_tol {
            positive("fista_tol", tol)?;
        }
        if let RhoSchedule::Geometric { factor, every, cap } = self.rho_schedule {
            positive("rho_schedule.factor", factor)?;
            if every == 0 {
                return Err(Error::InvalidHyperparams("rho_schedule.every must be >= 1".into()));
            }
            if let Some(c) = cap {
                positive("rho_schedule.cap", c)?;
            }
        }
        if self.max_backtracks == 0 {
            return Err(Error::InvalidHyperparams("max_backtracks must be >= 1".into()));
        }
        self.regularizer.validate()
    }

    pub fn rho_at(&self, iteration: usize) -> f64 {
        self.rho_schedule.rho_at(self.rho0, iteration)
    }

    pub fn initial_coeff(&self) -> f64 {
        self.t0.unwrap_or(self.nu)
    }

    pub fn fista_tol_for(&self, classes: usize, samples: usize) -> f64 {
        self.fista_tol
            .unwrap_or_else(|| 1e-8 * ((classes * samples) as f64).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    SoftmaxCrossEntropy,
}

/// Output risk together with the Lipschitz bound of its gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub kind: RiskKind,
    pub lipschitz_h: f64,
}

impl Default for RiskSpec {
    fn default() -> Self {
        RiskSpec {
            kind: RiskKind::SoftmaxCrossEntropy,
            lipschitz_h: 1.0,
        }
    }
}

/// Plain feed-forward weights, as deployed for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    pub activation: Activation,
    pub weights: Vec<Array2<S>>,
    pub biases: Vec<Array1<S>>,
}

impl<S: Scalar> Network<S> {
    pub fn predict(&self, x: ArrayView2<S>) -> Result<Vec<usize>> {
        forward_inference(&self.weights, &self.biases, self.activation, x)
    }
}

/// `W a + b ⊗ 1`.
pub(crate) fn affine<S: Scalar>(w: &Array2<S>, a: ArrayView2<S>, b: &Array1<S>) -> Array2<S> {
    let mut out = w.dot(&a);
    out += &b.view().insert_axis(Axis(1));
    out
}

/// Draws `W_l ~ N(0, 1/n_{l-1})`, sets `b = 0`, forward-propagates `z` and
/// `a`, and zeroes the dual, so every penalty term starts at zero.
pub fn init_state<S: Scalar>(arch: &Architecture, data: &Dataset<S>, hyper: &Hyperparams) -> Result<NetState<S>> {
    arch.validate()?;
    if data.x.nrows() != arch.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} features, architecture expects {}",
            data.x.nrows(),
            arch.input_dim()
        )));
    }
    if data.y.nrows() != arch.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "labels have {} classes, architecture expects {}",
            data.y.nrows(),
            arch.num_classes()
        )));
    }
    if data.x.ncols() != data.y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} input columns vs {} label columns",
            data.x.ncols(),
            data.y.ncols()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let weights = init_weights::<S>(arch, &mut rng);
    let biases: Vec<Array1<S>> = arch.layer_dims[1..].iter().map(|&n| Array1::zeros(n)).collect();

    let l_count = arch.num_layers();
    let mut z = Vec::with_capacity(l_count);
    let mut a: Vec<Array2<S>> = Vec::with_capacity(l_count - 1);
    for l in 1..=l_count {
        let input = if l == 1 { data.x.view() } else { a[l - 2].view() };
        let zl = affine(&weights[l - 1], input, &biases[l - 1]);
        if l < l_count {
            a.push(arch.activation.apply_matrix(&zl));
        }
        z.push(zl);
    }
    let u = Array2::zeros((arch.num_classes(), data.x.ncols()));
    Ok(NetState {
        activation: arch.activation,
        w: weights,
        b: biases,
        z,
        a,
        u,
    })
}

pub(crate) fn init_weights<S: Scalar>(arch: &Architecture, rng: &mut ChaCha8Rng) -> Vec<Array2<S>> {
    arch.layer_dims
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
            Array2::from_shape_simple_fn((fan_out, fan_in), || S::of(normal.sample(rng)))
        })
        .collect()
}

/// Class predictions of the plain network: argmax of the last linear layer,
/// ties going to the lowest class index.
pub fn forward_inference<S: Scalar>(
    weights: &[Array2<S>],
    biases: &[Array1<S>],
    activation: Activation,
    x: ArrayView2<S>,
) -> Result<Vec<usize>> {
    let logits = forward_logits(weights, biases, activation, x)?;
    Ok(argmax_columns(logits.view()))
}

pub(crate) fn forward_logits<S: Scalar>(
    weights: &[Array2<S>],
    biases: &[Array1<S>],
    activation: Activation,
    x: ArrayView2<S>,
) -> Result<Array2<S>> {
    if weights.is_empty() || weights.len() != biases.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weight matrices vs {} bias vectors",
            weights.len(),
            biases.len()
        )));
    }
    let mut h: Option<Array2<S>> = None;
    let last = weights.len() - 1;
    for (l, (w, b)) in weights.iter().zip(biases).enumerate() {
        let input = h.as_ref().map_or(x, |m| m.view());
        if w.ncols() != input.nrows() || b.len() != w.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "layer {} expects {} inputs, got {}",
                l + 1,
                w.ncols(),
                input.nrows()
            )));
        }
        let mut zl = affine(w, input, b);
        if l < last {
            zl.mapv_inplace(|v| activation.apply(v));
        }
        h = Some(zl);
    }
    Ok(h.expect("at least one layer"))
}

pub(crate) fn argmax_columns<S: Scalar>(m: ArrayView2<S>) -> Vec<usize> {
    m.axis_iter(Axis(1))
        .map(|col| {
            let mut best = 0;
            for (k, &v) in col.iter().enumerate() {
                if v > col[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Fraction of predictions equal to the labels.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// `‖m‖²` (squared Frobenius norm).
pub(crate) fn sq_norm<S: Scalar, D: ndarray::Dimension>(m: &ndarray::Array<S, D>) -> S {
    m.iter().fold(S::zero(), |acc, &v| acc + v * v)
}

/// `‖a − b‖²` without allocating.
pub(crate) fn sq_dist<S: Scalar, D: ndarray::Dimension>(a: &ndarray::Array<S, D>, b: &ndarray::Array<S, D>) -> S {
    let mut acc = S::zero();
    Zip::from(a).and(b).for_each(|&p, &q| {
        let d = p - q;
        acc += d * d;
    });
    acc
}
