mod matrix;
mod tape;

pub use matrix::Matrix;
pub(crate) use tape::squared_distance;
pub use tape::{NodeId, Tape, DIST_EPS};
