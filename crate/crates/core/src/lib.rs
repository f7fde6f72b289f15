//! Bayesian additive regression trees with optional monotonicity
//! constraints in a chosen subset of predictors.

pub mod constraints;
pub mod data_io;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod linear;
pub mod priors;
pub mod sampler;
pub mod stats;
pub mod tree;

pub use constraints::{ConstraintSet, Interval};
pub use data_io::{CutpointGrids, Dataset, Monotone, YTransform};
pub use error::{Error, Result};
pub use inference::{Draw, DrawMeta, DrawSet, EffectCurve, Prediction};
pub use priors::HyperParams;
pub use sampler::{ChainConfig, Mode};
pub use tree::{Forest, Node, NodeLabel, SplitRule, Tree};
