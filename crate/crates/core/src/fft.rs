//! N-dimensional FFTs assembled from 1-D transforms along each axis.
//!
//! The reference path transforms complex data on the full grid. The
//! accelerated path uses a real-to-complex transform on the last axis, which
//! halves the work on every remaining axis.

use std::sync::Arc;

use num_complex::Complex64;
use realfft::RealFftPlanner;
use rustfft::{Fft, FftPlanner};

use crate::lines::{map_lines, map_lines_inplace};

/// Smallest length `>= n` whose prime factors are all in {2, 3, 5, 7}.
pub fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Half-spectrum shape produced by [`rfft_nd`].
pub(crate) fn half_shape(shape: &[usize]) -> Vec<usize> {
    let mut h = shape.to_vec();
    if let Some(last) = h.last_mut() {
        *last = *last / 2 + 1;
    }
    h
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::<f64>::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

fn complex_axis(data: &mut [Complex64], shape: &[usize], axis: usize, inverse: bool, parallel: bool) {
    let n = shape[axis];
    if n == 1 {
        return;
    }
    let fft = plan(n, inverse);
    map_lines_inplace(data, shape, axis, parallel, |line: &mut [Complex64]| fft.process(line));
}

/// In-place complex transform over the axes in `axes`. Inverse transforms are
/// not normalized here.
fn complex_axes(data: &mut [Complex64], shape: &[usize], axes: std::ops::Range<usize>, inverse: bool, parallel: bool) {
    for axis in axes {
        complex_axis(data, shape, axis, inverse, parallel);
    }
}

/// Forward (or normalized inverse) complex FFT on the full grid.
pub(crate) fn fft_nd(data: &mut [Complex64], shape: &[usize], inverse: bool, parallel: bool) {
    complex_axes(data, shape, 0..shape.len(), inverse, parallel);
    if inverse {
        let scale = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }
}

/// Real-to-complex forward transform; output has shape [`half_shape`].
pub(crate) fn rfft_nd(input: &[f64], shape: &[usize], parallel: bool) -> Vec<Complex64> {
    let last = shape.len() - 1;
    let n = shape[last];
    let r2c = RealFftPlanner::<f64>::new().plan_fft_forward(n);
    let mut spec = map_lines(input, shape, last, n / 2 + 1, parallel, |src: &[f64], dst: &mut [Complex64]| {
        let mut buf = src.to_vec();
        r2c.process(&mut buf, dst).expect("r2c length mismatch");
    });
    complex_axes(&mut spec, &half_shape(shape), 0..last, false, parallel);
    spec
}

/// Normalized complex-to-real inverse of [`rfft_nd`] for a real grid `shape`.
pub(crate) fn irfft_nd(mut spec: Vec<Complex64>, shape: &[usize], parallel: bool) -> Vec<f64> {
    let last = shape.len() - 1;
    let n = shape[last];
    let hshape = half_shape(shape);
    complex_axes(&mut spec, &hshape, 0..last, true, parallel);
    let c2r = RealFftPlanner::<f64>::new().plan_fft_inverse(n);
    let scale = 1.0 / shape.iter().product::<usize>() as f64;
    map_lines(&spec, &hshape, last, n, parallel, |src: &[Complex64], dst: &mut [f64]| {
        let mut buf = src.to_vec();
        // the DC and Nyquist bins of a real signal are real
        buf[0].im = 0.0;
        if n % 2 == 0 {
            buf[n / 2].im = 0.0;
        }
        c2r.process(&mut buf, dst).expect("c2r length mismatch");
        dst.iter_mut().for_each(|v| *v *= scale);
    })
}

/// Copies `src` (shape `src_shape`) into the origin corner of a zeroed grid.
pub(crate) fn embed<T: Copy + Default>(src: &[T], src_shape: &[usize], dst_shape: &[usize]) -> Vec<T> {
    let mut out = vec![T::default(); dst_shape.iter().product()];
    let inner = *src_shape.last().unwrap();
    let dst_inner = *dst_shape.last().unwrap();
    let rows = src.len() / inner;
    let mut idx = vec![0usize; src_shape.len()];
    for r in 0..rows {
        // row index -> destination offset
        let mut rem = r;
        for a in (0..src_shape.len() - 1).rev() {
            idx[a] = rem % src_shape[a];
            rem /= src_shape[a];
        }
        let mut off = 0;
        for a in 0..src_shape.len() - 1 {
            off = off * dst_shape[a] + idx[a];
        }
        off *= dst_inner;
        out[off..off + inner].copy_from_slice(&src[r * inner..(r + 1) * inner]);
    }
    out
}

/// Extracts the origin corner of shape `dst_shape` from a larger grid.
pub(crate) fn crop_corner<T: Copy + Default>(src: &[T], src_shape: &[usize], dst_shape: &[usize]) -> Vec<T> {
    let inner = *dst_shape.last().unwrap();
    let src_inner = *src_shape.last().unwrap();
    let rows: usize = dst_shape[..dst_shape.len() - 1].iter().product();
    let mut out = Vec::with_capacity(rows * inner);
    let mut idx = vec![0usize; dst_shape.len()];
    for r in 0..rows {
        let mut rem = r;
        for a in (0..dst_shape.len() - 1).rev() {
            idx[a] = rem % dst_shape[a];
            rem /= dst_shape[a];
        }
        let mut off = 0;
        for a in 0..dst_shape.len() - 1 {
            off = off * src_shape[a] + idx[a];
        }
        off *= src_inner;
        out.extend_from_slice(&src[off..off + inner]);
    }
    out
}

/// Places a kernel on the FFT grid with its center at the origin (wrapping
/// negative offsets), so that multiplication in frequency space yields a
/// centered convolution.
pub(crate) fn wrap_kernel(kernel: &[f32], kshape: &[usize], grid: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; grid.iter().product()];
    let mut idx = vec![0usize; kshape.len()];
    for (i, &v) in kernel.iter().enumerate() {
        crate::image::unravel(i, kshape, &mut idx);
        let mut off = 0;
        for a in 0..kshape.len() {
            let c = (kshape[a] - 1) / 2;
            let pos = (idx[a] as isize - c as isize).rem_euclid(grid[a] as isize) as usize;
            off = off * grid[a] + pos;
        }
        out[off] += v as f64;
    }
    out
}
