//! Hair orientation: Gabor detection in images and the 3D orientation loss.

mod gabor;
mod loss;

pub use crate::geometry::project_3d_orientation;
pub use gabor::{detect_orientation, gabor_kernel, orientation_hsv, GaborBank, OrientationMap};
pub use loss::{
    loss_orientation, loss_orientation_traced, orientation_at, orientation_residual, HairSample,
};
