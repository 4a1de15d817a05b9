use crate::image::{Backend, ElemKind};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("image arguments live on different backends ({first} vs {other})")]
    MixedBackends { first: Backend, other: Backend },
    #[error("unknown operation `{0}`")]
    UnknownOperation(String),
    #[error("operation `{op}` has no {backend} implementation and fallback is disabled")]
    NoImplementation { op: String, backend: Backend },
    #[error("kernel registered for `{0}` has an unexpected signature")]
    KernelSignature(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("element kind mismatch: expected {expected:?}, found {found:?}")]
    ElemMismatch { expected: ElemKind, found: ElemKind },
    #[error("invalid shape: {0}")]
    BadShape(String),
    #[error("spacing must have one strictly positive entry per axis")]
    InvalidSpacing,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a volume file (bad magic)")]
    BadMagic,
    #[error("volume header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("payload length {found} bytes does not match header ({expected} bytes)")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("placed only {placed} of {requested} objects without overlap")]
    PlacementFailure { placed: usize, requested: usize },
    #[error("kernel extents must be odd on every axis, got {0:?}")]
    EvenExtent(Vec<usize>),
    #[error("kernel {kernel:?} exceeds image {image:?} in circular mode")]
    KernelTooLarge { kernel: Vec<usize>, image: Vec<usize> },

    #[error("spline order {0} not in 0..=5")]
    BadOrder(u8),
    #[error("scale factors must be strictly positive, got {0:?}")]
    NonPositiveFactor(Vec<f64>),

    #[error("degenerate image: {0}")]
    DegenerateImage(String),
    #[error("seed label {label} at index {index} lies outside the mask")]
    SeedOutsideMask { label: u32, index: usize },

    #[error("input contains negative values")]
    NegativeInput,
    #[error("psf sums to {0}, expected 1")]
    UnnormalizedPsf(f64),

    #[error("reference image is constant")]
    DegenerateReference,
    #[error("every extent must be at least {min}, got {shape:?}")]
    TooSmall { min: usize, shape: Vec<usize> },
    #[error("extents must be even on split axes, got {0:?}")]
    OddExtent(Vec<usize>),
}
