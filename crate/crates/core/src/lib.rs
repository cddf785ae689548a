pub mod curvature;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod network;
pub mod optim;
pub mod trainer;
pub mod verify;
pub mod tensor;

pub use error::{DlmeError, Result};
pub use tensor::{Matrix, NodeId, Tape};
