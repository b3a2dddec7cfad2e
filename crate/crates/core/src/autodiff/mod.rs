//! Reverse-mode differentiation over dense matrices, the MLP feature map and
//! parameter checkpoints.

mod check;
mod checkpoint;
mod graph;
mod net;
mod params;

pub use check::finite_diff_check;
pub use checkpoint::{write_atomic, Checkpoint, CHECKPOINT_MAGIC};
pub use graph::{Graph, Var};
pub use net::{Activation, FeatureNetSpec};
pub use params::{Param, ParamStore};
