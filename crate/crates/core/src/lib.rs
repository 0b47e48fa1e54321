//! Multi-view implicit head reconstruction guided by a morphable face proxy,
//! semantic labels and hair orientation fields.

pub mod autodiff;
pub mod error;
pub mod face_proxy;
pub mod geometry;
pub mod hair;
pub mod mesh_io;
pub mod recon;
pub mod sdf;
pub mod tracer;

pub use error::{Error, Result};
