use std::fmt;

use thiserror::Error;

use crate::subproblems::SweepDirection;

/// One of the eight block updates of a training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    A(usize),
    Z(usize),
    B(usize),
    W(usize),
}

/// A block update together with the sweep it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRef {
    pub block: Block,
    pub dir: SweepDirection,
}

impl fmt::Display for BlockRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, l) = match self.block {
            Block::A(l) => ("a", l),
            Block::Z(l) => ("z", l),
            Block::B(l) => ("b", l),
            Block::W(l) => ("W", l),
        };
        let sweep = match self.dir {
            SweepDirection::Backward => "backward",
            SweepDirection::Forward => "forward",
        };
        write!(f, "{sweep} {name}[{l}]")
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(String),

    #[error("layer {layer} out of range {min}..={max}")]
    LayerOutOfRange { layer: usize, min: usize, max: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("numeric failure in {block}: {reason}")]
    NumericFailure { block: BlockRef, reason: String },

    #[error("IDX parse error: {0}")]
    Idx(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("empty history")]
    EmptyHistory,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_layer(layer: usize, min: usize, max: usize) -> Result<()> {
    if layer < min || layer > max {
        return Err(Error::LayerOutOfRange { layer, min, max });
    }
    Ok(())
}
