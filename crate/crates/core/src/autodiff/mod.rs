//! Reverse-mode differentiation, dense networks and the Adam optimizer.

mod adam;
mod check;
mod checkpoint;
mod mlp;
mod params;
mod tape;

pub use adam::AdamState;
pub use check::{finite_diff_check, finite_diff_check_5pt, FdReport};
pub use checkpoint::{AdamMoments, Checkpoint};
pub use mlp::{apply_head, Head, Init, Map, Mlp, MlpConfig};
pub use params::{ParamVector, Segment};
pub use tape::{sigmoid, softplus, Op, Tape, Var};
mod vec3;
pub use vec3::V3;
