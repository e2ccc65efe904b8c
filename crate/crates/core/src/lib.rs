//! dlADMM: backward-forward ADMM training for fully-connected networks.
//!
//! Each iteration sweeps the layers backward (`L → 1`) and then forward
//! (`1 → L`), updating weights, biases, pre-activations and activations one
//! block at a time. Weight and activation blocks minimize an isotropic
//! quadratic upper model of the penalty, found by backtracking, so no matrix
//! inversion is ever needed.
//!
//! All numerical routines are generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases fix the element type to `f64`.

pub mod baselines;
pub mod data;
pub mod energy;
pub mod error;
pub mod model;
pub mod scalar;
pub mod subproblems;
pub mod trainer;

pub use baselines::{backprop_grads, train_baseline, OptimizerSpec};
pub use data::{load_idx, prepare, Dataset, IdxTensor};
pub use energy::{EnergyBreakdown, Products};
pub use error::{Block, BlockRef, Error, Result};
pub use model::{
    accuracy, forward_inference, init_state, Activation, Architecture, Hyperparams, NetState, Network, Regularizer,
    RhoSchedule, RiskKind, RiskSpec,
};
pub use scalar::Scalar;
pub use subproblems::SweepDirection;
pub use trainer::{train, EvalPolicy, IterationRecord, Trainer};

pub type NetState64 = NetState<f64>;
pub type Network64 = Network<f64>;
pub type Dataset64 = Dataset<f64>;
pub type Trainer64 = Trainer<f64>;
