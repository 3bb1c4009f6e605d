//! Dense DAG-structured recurrent networks (DD-RNNs) over 2D grids.
//!
//! A grid is swept in four directions. In each direction a cell's hidden
//! state depends on every cell in its dominance rectangle, either summed or
//! weighted by a learned softmax attention. The four hidden grids are
//! combined into a per-cell class distribution.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision. Gradient checks and checkpoints assume `f64`.

pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod ddrnn;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod grid;
pub mod grid_dag;
pub mod model;
pub mod numerics;
pub mod pnm;
pub mod train;

pub use crate::ddrnn::{
    DdRnn, DdRnnConfig, DdRnnParams, Dims, DirectionParams, ForwardOutput, GradientSet, HiddenGrid,
};
pub use crate::error::{Error, Result};
pub use crate::eval::{ConfusionMatrix, EvalSummary};
pub use crate::grid::{FeatureGrid, LabelGrid, ProbGrid, IGNORE_LABEL};
pub use crate::grid_dag::{Coord, DagTopology, Direction, GridShape};
pub use crate::model::{LabelingModel, ModelConfig, ModelParams};
pub use crate::numerics::{Matrix, Scalar, Vector};
pub use crate::train::{History, TrainConfig};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Vector64 = Vector<f64>;
pub type Vector32 = Vector<f32>;
pub type FeatureGrid64 = FeatureGrid<f64>;
pub type FeatureGrid32 = FeatureGrid<f32>;
pub type DdRnnParams64 = DdRnnParams<f64>;
pub type DdRnnParams32 = DdRnnParams<f32>;
pub type HiddenGrid64 = HiddenGrid<f64>;
pub type HiddenGrid32 = HiddenGrid<f32>;
pub type LabelingModel64 = LabelingModel<f64>;
pub type LabelingModel32 = LabelingModel<f32>;
