use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{crop_corner, embed, fft_nd, irfft_nd, next_fast_len, rfft_nd, wrap_kernel};
use crate::image::{Backend, NdImage};
use crate::registry::{dispatch, kernel_pair, ExecutionRegistry};

pub type ConvolveKernel = fn(&NdImage, &NdImage, bool) -> Result<NdImage>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("fft_convolve", Backend::Reference, convolve_ref as ConvolveKernel);
    reg.register("fft_convolve", Backend::Accelerated, convolve_acc as ConvolveKernel);
}

kernel_pair!(convolve_ref, convolve_acc, convolve_impl, (img: &NdImage, kernel: &NdImage, circular: bool) -> Result<NdImage>);

/// Convolution computed in the frequency domain.
///
/// Linear mode zero-pads both operands to a fast FFT length of at least
/// `n + k - 1` per axis and returns the `n`-sized window centered on the kernel
/// (kernel center at index `(k - 1) / 2`). Circular mode convolves on the image
/// grid, wrapping around every edge, with the same kernel center.
pub fn fft_convolve(img: &NdImage, kernel: &NdImage, circular: bool) -> Result<NdImage> {
    dispatch("fft_convolve", &[img, kernel], |k: ConvolveKernel| k(img, kernel, circular))
}

/// FFT grid used by linear-mode convolution.
pub fn linear_grid(image: &[usize], kernel: &[usize]) -> Vec<usize> {
    image.iter().zip(kernel).map(|(&n, &k)| next_fast_len(n + k - 1)).collect()
}

fn convolve_impl(img: &NdImage, kernel: &NdImage, circular: bool, parallel: bool) -> Result<NdImage> {
    let (shape, kshape) = (img.shape(), kernel.shape());
    if kshape.len() != shape.len() {
        return Err(Error::BadShape(format!("{}-D kernel for a {}-D image", kshape.len(), shape.len())));
    }
    let x: Vec<f64> = img.values_f32().iter().map(|&v| v as f64).collect();
    let k = kernel.values_f32();
    let (grid, xg, kg) = if circular {
        if kshape.iter().zip(shape).any(|(k, n)| k > n) {
            return Err(Error::KernelTooLarge { kernel: kshape.to_vec(), image: shape.to_vec() });
        }
        (shape.to_vec(), x, wrap_kernel(&k, kshape, shape))
    } else {
        let grid = linear_grid(shape, kshape);
        let xg = embed(&x, shape, &grid);
        let kg = wrap_kernel(&k, kshape, &grid);
        (grid, xg, kg)
    };
    let y = if parallel { multiply_real(&xg, &kg, &grid) } else { multiply_complex(&xg, &kg, &grid) };
    let out: Vec<f32> = crop_corner(&y, &grid, shape).into_iter().map(|v| v as f32).collect();
    Ok(img.like_f32(out))
}

fn multiply_complex(a: &[f64], b: &[f64], grid: &[usize]) -> Vec<f64> {
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut fa, grid, false, false);
    fft_nd(&mut fb, grid, false, false);
    fa.iter_mut().zip(&fb).for_each(|(x, y)| *x *= y);
    fft_nd(&mut fa, grid, true, false);
    fa.into_iter().map(|c| c.re).collect()
}

fn multiply_real(a: &[f64], b: &[f64], grid: &[usize]) -> Vec<f64> {
    let mut fa = rfft_nd(a, grid, true);
    let fb = rfft_nd(b, grid, true);
    fa.par_iter_mut().zip(fb.par_iter()).for_each(|(x, y)| *x *= y);
    irfft_nd(fa, grid, true)
}
