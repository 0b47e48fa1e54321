use std::path::PathBuf;

/// Errors raised anywhere in the reconstruction pipeline.
///
/// Every variant maps to a stable machine-readable code via [`Error::code`],
/// which the command-line front end prints alongside the message.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point lies behind the camera (depth {depth:.3e})")]
    PointBehindCamera { depth: f64 },
    #[error("pixel ({x}, {y}) is outside the {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("view {view} does not exist ({count} views)")]
    ViewOutOfRange { view: usize, count: usize },
    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("loss value is not finite ({value})")]
    NonFiniteLoss { value: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("gradient of the distance field vanishes at the query point")]
    VanishingGradient,
    #[error("umbilic point: principal curvatures {k1:.6} and {k2:.6} coincide")]
    UmbilicPoint { k1: f64, k2: f64 },
    #[error("ray is tangential to the surface (|grad f . v| = {dot:.3e})")]
    TangentialRay { dot: f64 },
    #[error("vector is not unit length (norm {norm})")]
    NotUnit { norm: f64 },
    #[error("face mask of view {view} is empty")]
    EmptyMask { view: usize },
    #[error("count mismatch: expected {expected}, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("standard deviation {index} of the {basis} basis is zero")]
    ZeroSigma { basis: &'static str, index: usize },
    #[error("energy diverged at iteration {iteration} (value {value})")]
    DivergedEnergy { iteration: usize, value: f64 },
    #[error("image size mismatch: {0}")]
    SizeMismatch(String),
    #[error("direction projects to a degenerate image vector")]
    DegenerateProjection,
    #[error("empty batch for {0}")]
    EmptyBatch(&'static str),
    #[error("mask too small: requested {requested} samples from {available} pixels")]
    MaskTooSmall { requested: usize, available: usize },
    #[error("training loss diverged at epoch {epoch} (value {value})")]
    DivergedLoss { epoch: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// Stable identifier suitable for scripts parsing CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::PointBehindCamera { .. } => "POINT_BEHIND_CAMERA",
            Error::OutOfBounds { .. } => "OUT_OF_BOUNDS",
            Error::ViewOutOfRange { .. } => "VIEW_OUT_OF_RANGE",
            Error::NotSymmetric { .. } => "NOT_SYMMETRIC",
            Error::NonFiniteLoss { .. } => "NON_FINITE_LOSS",
            Error::ShapeMismatch(_) => "SHAPE_MISMATCH",
            Error::VanishingGradient => "VANISHING_GRADIENT",
            Error::UmbilicPoint { .. } => "UMBILIC_POINT",
            Error::TangentialRay { .. } => "TANGENTIAL_RAY",
            Error::NotUnit { .. } => "NOT_UNIT",
            Error::EmptyMask { .. } => "EMPTY_MASK",
            Error::CountMismatch { .. } => "COUNT_MISMATCH",
            Error::ZeroSigma { .. } => "ZERO_SIGMA",
            Error::DivergedEnergy { .. } => "DIVERGED_ENERGY",
            Error::SizeMismatch(_) => "SIZE_MISMATCH",
            Error::DegenerateProjection => "DEGENERATE_PROJECTION",
            Error::EmptyBatch(_) => "EMPTY_BATCH",
            Error::MaskTooSmall { .. } => "MASK_TOO_SMALL",
            Error::DivergedLoss { .. } => "DIVERGED_LOSS",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
            Error::Io { .. } => "IO_ERROR",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::Json { .. } => "JSON_ERROR",
            Error::Image { .. } => "IMAGE_ERROR",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
