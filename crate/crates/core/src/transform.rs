//! Spline rescaling with optional anti-aliasing.
//!
//! Output sample `i` on an axis scaled by `f` maps to input coordinate
//! `(i + 0.5) / f - 0.5`. Orders 2 and up interpolate B-spline coefficients
//! obtained by recursive prefiltering, so sampling at the input grid
//! reproduces the input. Boundaries are mirrored without repeating the edge.

use crate::error::{Error, Result};
use crate::filters::{gaussian_kernel1d, smooth_axis_direct, smooth_axis_lines};
use crate::image::{strides, unravel, Backend, Buffer, NdImage};
use crate::lines::{map_blocks, map_lines_inplace, mirror_index};
use crate::registry::{dispatch, kernel_pair, ExecutionRegistry};

pub type RescaleKernel = fn(&NdImage, &[f64], u8, bool) -> Result<NdImage>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("rescale", Backend::Reference, rescale_ref as RescaleKernel);
    reg.register("rescale", Backend::Accelerated, rescale_acc as RescaleKernel);
}

kernel_pair!(rescale_ref, rescale_acc, rescale_impl, (img: &NdImage, factors: &[f64], order: u8, anti_aliasing: bool) -> Result<NdImage>);

/// Resamples `img` by per-axis `factors` (one entry broadcasts) with a
/// B-spline of degree `order`.
///
/// With `anti_aliasing`, every downscaled axis is first smoothed with a
/// Gaussian of sigma `(1 / f - 1) / 2`. Label and mask images are resized by
/// nearest neighbor and keep their element kind; they only accept order 0.
pub fn rescale(img: &NdImage, factors: &[f64], order: u8, anti_aliasing: bool) -> Result<NdImage> {
    dispatch("rescale", &[img], |k: RescaleKernel| k(img, factors, order, anti_aliasing))
}

/// The benchmark round trip: upscale by 2 without anti-aliasing, then
/// downscale by 0.5 with it. Output shape equals input shape.
pub fn upscale2x_downscale(img: &NdImage, order: u8) -> Result<NdImage> {
    let up = rescale(img, &[2.0], order, false)?;
    rescale(&up, &[0.5], order, true)
}

/// `round(extent * factor)`, at least 1, per axis.
pub fn output_shape(shape: &[usize], factors: &[f64]) -> Vec<usize> {
    shape.iter().zip(factors).map(|(&n, &f)| ((n as f64 * f).round() as usize).max(1)).collect()
}

fn expand_factors(factors: &[f64], ndim: usize) -> Result<Vec<f64>> {
    let f = match factors.len() {
        1 => vec![factors[0]; ndim],
        n if n == ndim => factors.to_vec(),
        _ => return Err(Error::InvalidParameter(format!("{} factors for a {ndim}-D image", factors.len()))),
    };
    if f.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositiveFactor(f));
    }
    Ok(f)
}

fn rescale_impl(img: &NdImage, factors: &[f64], order: u8, anti_aliasing: bool, parallel: bool) -> Result<NdImage> {
    if order > 5 {
        return Err(Error::BadOrder(order));
    }
    let factors = expand_factors(factors, img.ndim())?;
    let out_shape = output_shape(img.shape(), &factors);
    let spacing = img.spacing().map(|s| s.iter().zip(&factors).map(|(s, f)| s / f).collect());
    let out = match img.buffer() {
        Buffer::Label(_) | Buffer::Bool(_) => {
            if order != 0 {
                return Err(Error::InvalidParameter("label and mask images only support order 0".into()));
            }
            let maps: Vec<Vec<usize>> = (0..img.ndim())
                .map(|a| nearest_map(img.shape()[a], out_shape[a], |i| (i as f64 + 0.5) / factors[a] - 0.5))
                .collect();
            gather_nearest(img, &out_shape, &maps)?
        }
        _ => {
            let data = img.values_f32().into_owned();
            let (data, shape) = if parallel {
                separable(data, img.shape(), &factors, order, anti_aliasing)
            } else {
                tensor_product(data, img.shape(), &factors, order, anti_aliasing)
            };
            debug_assert_eq!(shape, out_shape);
            NdImage::from_f32(shape, data)?
        }
    };
    Ok(out.with_spacing_opt(spacing).tagged(img.backend()))
}

/// Nearest-neighbor resize of any image to an exact target shape, mapping
/// sample centers onto each other. Used to bring labels back to the input
/// grid after processing at reduced resolution.
pub(crate) fn resize_nearest_to(img: &NdImage, shape: &[usize]) -> Result<NdImage> {
    if shape.len() != img.ndim() {
        return Err(Error::ShapeMismatch { expected: img.shape().to_vec(), found: shape.to_vec() });
    }
    let maps: Vec<Vec<usize>> = (0..img.ndim())
        .map(|a| {
            let (n, m) = (img.shape()[a], shape[a]);
            nearest_map(n, m, |i| (i as f64 + 0.5) * n as f64 / m as f64 - 0.5)
        })
        .collect();
    Ok(gather_nearest(img, shape, &maps)?.with_spacing_opt(None).tagged(img.backend()))
}

fn nearest_map(n_in: usize, n_out: usize, coord: impl Fn(usize) -> f64) -> Vec<usize> {
    (0..n_out).map(|i| mirror_index((coord(i) + 0.5).floor() as isize, n_in)).collect()
}

fn gather_nearest(img: &NdImage, out_shape: &[usize], maps: &[Vec<usize>]) -> Result<NdImage> {
    fn gather<T: Copy>(src: &[T], shape: &[usize], out_shape: &[usize], maps: &[Vec<usize>]) -> Vec<T> {
        let st = strides(shape);
        let n: usize = out_shape.iter().product();
        let mut c = vec![0usize; out_shape.len()];
        (0..n)
            .map(|i| {
                unravel(i, out_shape, &mut c);
                src[c.iter().enumerate().map(|(a, &ci)| maps[a][ci] * st[a]).sum::<usize>()]
            })
            .collect()
    }
    let (s, o) = (img.shape(), out_shape.to_vec());
    let buffer = match img.buffer() {
        Buffer::F32(b) => Buffer::F32(gather(b, s, &o, maps).into()),
        Buffer::U16(b) => Buffer::U16(gather(b, s, &o, maps).into()),
        Buffer::Label(b) => Buffer::Label(gather(b, s, &o, maps).into()),
        Buffer::Bool(b) => Buffer::Bool(gather(b, s, &o, maps).into()),
    };
    NdImage::new(o, buffer)
}

/// Centered B-spline of degree `n` evaluated at `x`.
pub fn bspline(n: usize, x: f64) -> f64 {
    let h = (n + 1) as f64 / 2.0;
    if x.abs() >= h {
        return 0.0;
    }
    let mut fact = 1.0;
    for k in 2..=n {
        fact *= k as f64;
    }
    let mut binom = 1.0;
    let mut sum = 0.0;
    for k in 0..=n + 1 {
        let t = x + h - k as f64;
        if t > 0.0 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * binom * t.powi(n as i32);
        }
        binom = binom * (n + 1 - k) as f64 / (k + 1) as f64;
    }
    sum / fact
}

/// Poles of the recursive B-spline interpolation prefilter.
pub fn spline_poles(order: u8) -> Vec<f64> {
    match order {
        2 => vec![8f64.sqrt() - 3.0],
        3 => vec![3f64.sqrt() - 2.0],
        4 => vec![
            (664.0 - 438976f64.sqrt()).sqrt() + 304f64.sqrt() - 19.0,
            (664.0 + 438976f64.sqrt()).sqrt() - 304f64.sqrt() - 19.0,
        ],
        5 => vec![
            (135.0 / 2.0 - (17745.0f64 / 4.0).sqrt()).sqrt() + (105.0f64 / 4.0).sqrt() - 13.0 / 2.0,
            (135.0 / 2.0 + (17745.0f64 / 4.0).sqrt()).sqrt() - (105.0f64 / 4.0).sqrt() - 13.0 / 2.0,
        ],
        _ => vec![],
    }
}

/// In-place conversion of samples to B-spline coefficients on one line with
/// mirror boundary conditions.
pub fn prefilter_line(c: &mut [f64], poles: &[f64]) {
    let n = c.len();
    prefilter_block(c, n, 1, poles);
}

/// [`prefilter_line`] applied to `w` interleaved lines of length `n`
/// (element `k` of line `j` at `c[k * w + j]`).
fn prefilter_block(c: &mut [f64], n: usize, w: usize, poles: &[f64]) {
    if n < 2 || poles.is_empty() {
        return;
    }
    let gain: f64 = poles.iter().map(|&z| (1.0 - z) * (1.0 - 1.0 / z)).product();
    c.iter_mut().for_each(|v| *v *= gain);
    let mut first = vec![0.0f64; w];
    for &z in poles {
        first.fill(0.0);
        for (k, &a) in causal_init_weights(n, z).iter().enumerate() {
            for (f, &v) in first.iter_mut().zip(&c[k * w..(k + 1) * w]) {
                *f += a * v;
            }
        }
        c[..w].copy_from_slice(&first);
        for k in 1..n {
            let (prev, cur) = c[(k - 1) * w..(k + 1) * w].split_at_mut(w);
            cur.iter_mut().zip(prev.iter()).for_each(|(x, &p)| *x += z * p);
        }
        let g = z / (z * z - 1.0);
        let (prev, last) = c[(n - 2) * w..n * w].split_at_mut(w);
        last.iter_mut().zip(prev.iter()).for_each(|(x, &p)| *x = g * (*x + z * p));
        for k in (0..n - 1).rev() {
            let (cur, next) = c[k * w..(k + 2) * w].split_at_mut(w);
            cur.iter_mut().zip(next.iter()).for_each(|(x, &nx)| *x = z * (nx - *x));
        }
    }
}

/// Weights `a_k` such that the initial causal coefficient is `sum a_k c[k]`:
/// a truncated geometric series when it converges within the line, the exact
/// mirror-symmetric sum otherwise.
fn causal_init_weights(n: usize, z: f64) -> Vec<f64> {
    let horizon = (1e-12f64.ln() / z.abs().ln()).ceil() as usize;
    if horizon < n {
        let mut a = Vec::with_capacity(horizon);
        let mut zk = 1.0;
        for _ in 0..horizon {
            a.push(zk);
            zk *= z;
        }
        a
    } else {
        let denom = 1.0 - z.powi(2 * n as i32 - 2);
        (0..n)
            .map(|k| {
                let v = if k == 0 {
                    1.0
                } else if k == n - 1 {
                    z.powi(n as i32 - 1)
                } else {
                    z.powi(k as i32) + z.powi(2 * n as i32 - 2 - k as i32)
                };
                v / denom
            })
            .collect()
    }
}

fn prefilter_axis(data: &mut [f32], shape: &[usize], axis: usize, poles: &[f64], parallel: bool) {
    map_lines_inplace(data, shape, axis, parallel, |line: &mut [f32]| {
        let mut buf: Vec<f64> = line.iter().map(|&v| v as f64).collect();
        prefilter_line(&mut buf, poles);
        line.iter_mut().zip(&buf).for_each(|(d, &v)| *d = v as f32);
    });
}

/// Interpolation taps of one axis: for output sample `i`, input indices
/// `idx[i * taps..]` with weights `w[i * taps..]`.
struct AxisTable {
    taps: usize,
    idx: Vec<usize>,
    w: Vec<f64>,
}

fn axis_table(n_in: usize, n_out: usize, factor: f64, order: u8) -> AxisTable {
    let n = order as usize;
    let taps = n + 1;
    let mut idx = Vec::with_capacity(n_out * taps);
    let mut w = Vec::with_capacity(n_out * taps);
    for i in 0..n_out {
        let x = (i as f64 + 0.5) / factor - 0.5;
        if n == 0 {
            idx.push(mirror_index((x + 0.5).floor() as isize, n_in));
            w.push(1.0);
            continue;
        }
        let j0 = if n % 2 == 1 { x.floor() as isize - (n as isize - 1) / 2 } else { (x + 0.5).floor() as isize - n as isize / 2 };
        for k in 0..taps as isize {
            let j = j0 + k;
            idx.push(mirror_index(j, n_in));
            w.push(bspline(n, x - j as f64));
        }
    }
    AxisTable { taps, idx, w }
}

fn aa_taps(factor: f64, anti_aliasing: bool) -> Option<Vec<f32>> {
    let sigma = ((1.0 / factor - 1.0) / 2.0).max(0.0);
    (anti_aliasing && factor < 1.0 && sigma > 0.0).then(|| gaussian_kernel1d(sigma as f32, 4.0))
}

/// Scalar path: smooth, prefilter every axis, then evaluate the full tensor
/// product of per-axis weights at each output voxel (accumulated in f64).
fn tensor_product(mut data: Vec<f32>, shape: &[usize], factors: &[f64], order: u8, aa: bool) -> (Vec<f32>, Vec<usize>) {
    let nd = shape.len();
    for a in 0..nd {
        if let Some(taps) = aa_taps(factors[a], aa) {
            data = smooth_axis_direct(&data, shape, a, &taps);
        }
    }
    let poles = spline_poles(order);
    for a in 0..nd {
        prefilter_axis(&mut data, shape, a, &poles, false);
    }
    let out_shape = output_shape(shape, factors);
    let tables: Vec<AxisTable> = (0..nd).map(|a| axis_table(shape[a], out_shape[a], factors[a], order)).collect();
    let st = strides(shape);
    let last = &tables[nd - 1];
    let lead_shape = &out_shape[..nd - 1];
    let rows: usize = lead_shape.iter().product();
    let mut out = Vec::with_capacity(rows * out_shape[nd - 1]);
    let mut c = vec![0usize; nd - 1];
    let mut combo: Vec<(usize, f64)> = Vec::new();
    for r in 0..rows {
        unravel(r, lead_shape, &mut c);
        // (offset, weight) pairs over the leading axes
        combo.clear();
        combo.push((0, 1.0));
        for a in 0..nd - 1 {
            let t = &tables[a];
            let base = c[a] * t.taps;
            let prev = std::mem::take(&mut combo);
            for &(off, w) in &prev {
                for k in 0..t.taps {
                    combo.push((off + t.idx[base + k] * st[a], w * t.w[base + k]));
                }
            }
        }
        for x in 0..out_shape[nd - 1] {
            let base = x * last.taps;
            let mut acc = 0.0f64;
            for &(off, w) in &combo {
                let mut inner = 0.0f64;
                for k in 0..last.taps {
                    inner += last.w[base + k] * data[off + last.idx[base + k]] as f64;
                }
                acc += w * inner;
            }
            out.push(acc as f32);
        }
    }
    (out, out_shape)
}

/// Parallel path: one axis at a time, shrinking axes first. Each block of
/// lines is smoothed, prefiltered and resampled in a single pass.
fn separable(mut data: Vec<f32>, shape: &[usize], factors: &[f64], order: u8, aa: bool) -> (Vec<f32>, Vec<usize>) {
    let nd = shape.len();
    let mut axes: Vec<usize> = (0..nd).collect();
    axes.sort_by(|&a, &b| factors[a].total_cmp(&factors[b]));
    let poles = spline_poles(order);
    let out_shape = output_shape(shape, factors);
    let mut cur = shape.to_vec();
    for a in axes {
        if let Some(taps) = aa_taps(factors[a], aa) {
            data = smooth_axis_lines(&data, &cur, a, &taps);
        }
        let n = cur[a];
        let table = axis_table(n, out_shape[a], factors[a], order);
        let poles = &poles;
        data = map_blocks(&data, &cur, a, out_shape[a], |block: &[f32], w: usize, out: &mut [f32]| {
            let mut c: Vec<f64> = block.iter().map(|&v| v as f64).collect();
            prefilter_block(&mut c, n, w, poles);
            let mut acc = vec![0.0f64; w];
            for (i, row) in out.chunks_exact_mut(w).enumerate() {
                acc.fill(0.0);
                let base = i * table.taps;
                for k in 0..table.taps {
                    let (wt, j) = (table.w[base + k], table.idx[base + k]);
                    acc.iter_mut().zip(&c[j * w..(j + 1) * w]).for_each(|(s, &v)| *s += wt * v);
                }
                row.iter_mut().zip(&acc).for_each(|(o, &v)| *o = v as f32);
            }
        });
        cur[a] = out_shape[a];
    }
    (data, cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(shape: Vec<usize>) -> NdImage {
        let n = shape.iter().product();
        NdImage::from_f32(shape, (0..n).map(|i| ((i * 37) % 23) as f32 / 23.0).collect()).unwrap()
    }

    #[test]
    fn factor_one_is_identity_for_all_orders() {
        let img = ramp(vec![5, 6, 7]);
        for order in 0..=5u8 {
            for b in Backend::ALL {
                let out = rescale(&img.to_backend(b), &[1.0], order, true).unwrap();
                assert_eq!(out.shape(), img.shape());
                for (o, i) in out.as_f32().unwrap().iter().zip(img.as_f32().unwrap()) {
                    assert!((o - i).abs() < 1e-5, "order {order}: {o} vs {i}");
                }
            }
        }
    }

    #[test]
    fn nearest_duplicates() {
        let img = NdImage::from_f32(vec![2], vec![3.0, 8.0]).unwrap();
        for b in Backend::ALL {
            let out = rescale(&img.to_backend(b), &[2.0], 0, false).unwrap();
            assert_eq!(out.as_f32().unwrap(), &[3.0, 3.0, 8.0, 8.0]);
        }
        let labels = NdImage::from_labels(vec![2, 2], vec![1, 2, 3, 4]).unwrap();
        let up = rescale(&labels, &[2.0], 0, false).unwrap();
        assert_eq!(up.as_labels().unwrap()[..4], [1, 1, 2, 2]);
        assert!(rescale(&labels, &[2.0], 1, false).is_err());
        let back = resize_nearest_to(&up, &[2, 2]).unwrap();
        assert_eq!(back, labels);
    }

    #[test]
    fn errors() {
        let img = ramp(vec![4, 4]);
        assert!(matches!(rescale(&img, &[2.0], 6, false), Err(Error::BadOrder(6))));
        assert!(matches!(rescale(&img, &[0.0, 1.0], 1, false), Err(Error::NonPositiveFactor(_))));
    }

    /// Piecewise-linear interpolant of `v` with mirrored extension.
    fn linear_at(v: &[f64], x: f64) -> f64 {
        let n = v.len() as isize;
        let m = |j: isize| v[mirror_index(j, n as usize)];
        let j = x.floor();
        let t = x - j;
        (1.0 - t) * m(j as isize) + t * m(j as isize + 1)
    }

    #[test]
    fn linear_ramp_round_trip() {
        let n = 16;
        let v: Vec<f64> = (0..n).map(|i| 0.5 + 0.25 * i as f64).collect();
        let img = NdImage::from_f32(vec![n], v.iter().map(|&x| x as f32).collect()).unwrap();
        let up_oracle: Vec<f64> = (0..2 * n).map(|i| linear_at(&v, (i as f64 + 0.5) / 2.0 - 0.5)).collect();
        let down_oracle: Vec<f64> = (0..n).map(|i| linear_at(&up_oracle, (i as f64 + 0.5) * 2.0 - 0.5)).collect();
        for b in Backend::ALL {
            let up = rescale(&img.to_backend(b), &[2.0], 1, false).unwrap();
            let down = rescale(&up, &[0.5], 1, false).unwrap();
            for (i, (&g, &e)) in down.as_f32().unwrap().iter().zip(&down_oracle).enumerate() {
                assert!((g as f64 - e).abs() < 1e-4);
                if i > 0 && i < n - 1 {
                    assert!((g as f64 - v[i]).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn spline_reproduces_grid_samples() {
        let v: Vec<f64> = (0..23).map(|i| ((i * 7919) % 31) as f64 / 31.0).collect();
        for order in 2..=5u8 {
            let mut c = v.clone();
            prefilter_line(&mut c, &spline_poles(order));
            let n = order as isize;
            for (i, &want) in v.iter().enumerate() {
                let got: f64 = (-n..=n)
                    .map(|d| {
                        let j = i as isize + d;
                        c[mirror_index(j, v.len())] * bspline(order as usize, -d as f64)
                    })
                    .sum();
                assert!((got - want).abs() < 1e-4, "order {order} at {i}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn bspline_partition_of_unity() {
        // degree 0 is handled by the nearest-neighbor path
        for n in 1..=5 {
            for x in [0.0, 0.13, 0.5, 0.77] {
                let s: f64 = (-4..=4).map(|k| bspline(n, x - k as f64)).sum();
                assert!((s - 1.0).abs() < 1e-12, "degree {n}");
            }
        }
    }

    #[test]
    fn round_trip_keeps_shape_and_constants() {
        let img = NdImage::filled(vec![6, 10, 12], 0.75).unwrap();
        for order in 0..=5u8 {
            for b in Backend::ALL {
                let out = upscale2x_downscale(&img.to_backend(b), order).unwrap();
                assert_eq!(out.shape(), img.shape());
                assert!(out.as_f32().unwrap().iter().all(|&v| (v - 0.75).abs() < 1e-5));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn backends_agree_and_shapes_follow_rule(
            seed in 0u64..1000,
            fz in 0.3f64..2.5, fy in 0.3f64..2.5, fx in 0.3f64..2.5,
            order in 0u8..=5,
            aa in any::<bool>(),
        ) {
            let shape = vec![5 + (seed % 4) as usize, 7, 9 + (seed % 3) as usize];
            let n: usize = shape.iter().product();
            let v: Vec<f32> = (0..n).map(|i| (((i as u64 + seed) * 2654435761) % 1000) as f32 / 1000.0).collect();
            let img = NdImage::from_f32(shape.clone(), v.clone()).unwrap();
            let f = [fz, fy, fx];
            let a = rescale(&img, &f, order, aa).unwrap();
            let b = rescale(&img.to_backend(Backend::Accelerated), &f, order, aa).unwrap();
            let expect: Vec<usize> = shape.iter().zip(&f).map(|(&s, &k)| ((s as f64 * k).round() as usize).max(1)).collect();
            prop_assert_eq!(a.shape(), expect.as_slice());
            prop_assert_eq!(b.shape(), expect.as_slice());
            let (av, bv) = (a.as_f32().unwrap(), b.as_f32().unwrap());
            let scale = av.iter().fold(0.0f32, |m, x| m.max(x.abs())).max(f32::MIN_POSITIVE);
            for (x, y) in av.iter().zip(bv) {
                prop_assert!((x - y).abs() <= 1e-5 * scale);
            }
            if order <= 1 {
                let (lo, hi) = v.iter().fold((f32::MAX, f32::MIN), |(l, h), &x| (l.min(x), h.max(x)));
                prop_assert!(av.iter().all(|&x| x >= lo - 1e-6 && x <= hi + 1e-6));
            }
        }

        #[test]
        fn nearest_up_down_is_identity(v in prop::collection::vec(-10.0f32..10.0, 3 * 4 * 5)) {
            let img = NdImage::from_f32(vec![3, 4, 5], v).unwrap();
            for b in Backend::ALL {
                let up = rescale(&img.to_backend(b), &[2.0], 0, false).unwrap();
                let down = rescale(&up, &[0.5], 0, false).unwrap();
                prop_assert_eq!(down.buffer(), img.buffer());
            }
        }
    }
}
