//! Backend-tagged N-dimensional image processing.
//!
//! Every image carries a [`Backend`] tag. Operations look up their kernel in the
//! [`ExecutionRegistry`] using that tag, so the same call runs the scalar
//! reference kernel or the parallel accelerated kernel depending on where the
//! data "lives". Missing accelerated kernels fall back to the reference ones.

pub mod deconv;
pub mod error;
pub mod exec;
pub mod fft;
pub mod filters;
pub mod image;
pub mod io;
mod lines;
pub mod metrics;
pub mod morphthresh;
pub mod ops;
pub mod registry;
pub mod segmentation;
pub mod synth;
pub mod transform;

pub use error::{Error, Result};
pub use image::{Backend, Buffer, ElemKind, LabelImage, NdImage};
pub use registry::{registry, ExecutionRegistry};
