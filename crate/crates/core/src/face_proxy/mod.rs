//! Linear morphable face model, SH shading and the proxy fit.

mod energy;
mod model;
mod raster;
mod sh;
mod synthetic;

pub use energy::{
    energy_landmark, energy_photo, energy_reg, fit_proxy, initial_cameras, project_landmarks,
    render_face, sample_proxy_points, ProxyFitConfig, ProxyFitResult, ProxyOptimizer, ProxyView,
    ProxyWeights, INIT_DEPTH,
};
pub use model::{model_albedo, model_geometry, Basis, LinearMorphableModel, MorphCoeffs};
pub use raster::{rasterize, Raster};
pub use sh::{sh_basis, shade_vertex, ShLighting};
pub use synthetic::{icosphere, landmark_points, synthetic_model, HEAD_RADIUS};
