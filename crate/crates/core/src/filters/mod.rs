//! Smoothing, rank and FFT convolution filters.

mod convolve;
mod gaussian;
mod median;
mod se;

pub use convolve::{fft_convolve, linear_grid, ConvolveKernel};
pub use gaussian::{gaussian, gaussian_kernel1d, GaussianKernel};
pub use median::{median, MedianKernel};
pub use se::StructuringElement;

pub(crate) use gaussian::{smooth_axis_direct, smooth_axis_lines};

use crate::registry::ExecutionRegistry;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    gaussian::register(reg);
    median::register(reg);
    convolve::register(reg);
}
