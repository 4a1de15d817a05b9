use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::gaussian;
use crate::image::{Backend, NdImage};
use crate::registry::{dispatch, kernel_pair, ExecutionRegistry};

pub type PsnrKernel = fn(&NdImage, &NdImage, Option<f64>) -> Result<f64>;
pub type SiPsnrKernel = fn(&NdImage, &NdImage) -> Result<f64>;
pub type SsimKernel = fn(&NdImage, &NdImage, f64) -> Result<f64>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("psnr", Backend::Reference, psnr_ref as PsnrKernel);
    reg.register("psnr", Backend::Accelerated, psnr_acc as PsnrKernel);
    reg.register("si_psnr", Backend::Reference, si_psnr_ref as SiPsnrKernel);
    reg.register("si_psnr", Backend::Accelerated, si_psnr_acc as SiPsnrKernel);
    reg.register("ssim", Backend::Reference, ssim_ref as SsimKernel);
    reg.register("ssim", Backend::Accelerated, ssim_acc as SsimKernel);
}

kernel_pair!(psnr_ref, psnr_acc, psnr_impl, (x: &NdImage, reference: &NdImage, data_range: Option<f64>) -> Result<f64>);
kernel_pair!(si_psnr_ref, si_psnr_acc, si_psnr_impl, (x: &NdImage, reference: &NdImage) -> Result<f64>);
kernel_pair!(ssim_ref, ssim_acc, ssim_impl, (x: &NdImage, reference: &NdImage, data_range: f64) -> Result<f64>);

/// [`si_psnr`] reports an exact fit when the RMS residual is at most this many
/// f32 epsilons of the fitted prediction's magnitude, the rounding an f32
/// copy of an exact affine map already carries.
pub const SI_PSNR_EXACT_EPS: f64 = 1.0;

/// SSIM window: Gaussian sigma and truncation (in sigmas).
pub const SSIM_SIGMA: f32 = 1.5;
pub const SSIM_TRUNCATE: f32 = 3.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Sum of `f(i)` over `0..n`, accumulated in fixed-size chunks whose partial
/// sums are added in order. Both backends produce the same bits.
pub(crate) fn chunked_sum(n: usize, parallel: bool, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    const CHUNK: usize = 1 << 14;
    let part = |c: usize| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum::<f64>();
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<f64> =
        if parallel { (0..chunks).into_par_iter().map(part).collect() } else { (0..chunks).map(part).collect() };
    parts.iter().sum()
}

pub(crate) fn value_range(v: &[f32]) -> f64 {
    let (lo, hi) = v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    hi as f64 - lo as f64
}

/// Peak signal-to-noise ratio in dB: `10 log10(range^2 / MSE)`.
///
/// `data_range` defaults to `max(reference) - min(reference)`. Zero error
/// gives `+inf`. Not symmetric: the range comes from `reference`.
pub fn psnr(x: &NdImage, reference: &NdImage, data_range: Option<f64>) -> Result<f64> {
    dispatch("psnr", &[x, reference], |k: PsnrKernel| k(x, reference, data_range))
}

/// PSNR after the least-squares affine fit `a x + b` of `x` to `reference`.
pub fn si_psnr(x: &NdImage, reference: &NdImage) -> Result<f64> {
    dispatch("si_psnr", &[x, reference], |k: SiPsnrKernel| k(x, reference))
}

/// Mean structural similarity with a Gaussian window (sigma 1.5, truncated
/// at 3.5 sigma) in as many dimensions as the inputs have.
pub fn ssim(x: &NdImage, reference: &NdImage, data_range: f64) -> Result<f64> {
    dispatch("ssim", &[x, reference], |k: SsimKernel| k(x, reference, data_range))
}

fn to_db(range: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (range * range / mse).log10()
    }
}

fn psnr_impl(x: &NdImage, reference: &NdImage, data_range: Option<f64>, parallel: bool) -> Result<f64> {
    reference.require_shape(x.shape())?;
    let (a, r) = (x.values_f32(), reference.values_f32());
    let range = data_range.unwrap_or_else(|| value_range(&r));
    let sse = chunked_sum(a.len(), parallel, |i| (a[i] as f64 - r[i] as f64).powi(2));
    Ok(to_db(range, sse / a.len() as f64))
}

/// Slope and intercept of the least-squares fit of `reference` by `x`.
pub fn affine_fit(x: &[f32], reference: &[f32]) -> (f64, f64) {
    affine_fit_impl(x, reference, false)
}

fn affine_fit_impl(x: &[f32], r: &[f32], parallel: bool) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = chunked_sum(x.len(), parallel, |i| x[i] as f64) / n;
    let mr = chunked_sum(x.len(), parallel, |i| r[i] as f64) / n;
    let sxx = chunked_sum(x.len(), parallel, |i| (x[i] as f64 - mx).powi(2));
    let sxr = chunked_sum(x.len(), parallel, |i| (x[i] as f64 - mx) * (r[i] as f64 - mr));
    let a = if sxx > 0.0 { sxr / sxx } else { 0.0 };
    (a, mr - a * mx)
}

fn si_psnr_impl(x: &NdImage, reference: &NdImage, parallel: bool) -> Result<f64> {
    reference.require_shape(x.shape())?;
    let (a, r) = (x.values_f32(), reference.values_f32());
    let range = value_range(&r);
    if !(range > 0.0) {
        return Err(Error::DegenerateReference);
    }
    let (slope, icpt) = affine_fit_impl(&a, &r, parallel);
    let mse = chunked_sum(a.len(), parallel, |i| (slope * a[i] as f64 + icpt - r[i] as f64).powi(2)) / a.len() as f64;
    let peak = a.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let floor = SI_PSNR_EXACT_EPS * f32::EPSILON as f64 * slope.abs() * peak;
    if mse <= floor * floor {
        return Ok(f64::INFINITY);
    }
    Ok(to_db(range, mse))
}

fn ssim_impl(x: &NdImage, reference: &NdImage, data_range: f64, _parallel: bool) -> Result<f64> {
    reference.require_shape(x.shape())?;
    if x.shape().iter().any(|&n| n < 7) {
        return Err(Error::TooSmall { min: 7, shape: x.shape().to_vec() });
    }
    let backend = x.backend();
    let (a, b) = (x.values_f32(), reference.values_f32());
    let stat = |v: Vec<f32>| -> Result<Vec<f32>> {
        let img = NdImage::from_f32(x.shape().to_vec(), v)?.tagged(backend);
        Ok(gaussian(&img, &[SSIM_SIGMA], SSIM_TRUNCATE)?.as_f32()?.to_vec())
    };
    let (s, windows) = ssim_map(&a, &b, data_range, stat)?;
    let _ = windows;
    Ok(s)
}

/// Local statistics behind SSIM: window means and (co)variances.
pub struct SsimWindows {
    pub mean_x: Vec<f32>,
    pub mean_y: Vec<f32>,
    pub var_x: Vec<f64>,
    pub var_y: Vec<f64>,
    pub cov: Vec<f64>,
}

/// Mean SSIM together with the window statistics, given a smoothing
/// function that applies the window to a full image.
fn ssim_map(
    a: &[f32],
    b: &[f32],
    data_range: f64,
    smooth: impl Fn(Vec<f32>) -> Result<Vec<f32>>,
) -> Result<(f64, SsimWindows)> {
    let mean_x = smooth(a.to_vec())?;
    let mean_y = smooth(b.to_vec())?;
    let xx = smooth(a.iter().map(|v| v * v).collect())?;
    let yy = smooth(b.iter().map(|v| v * v).collect())?;
    let xy = smooth(a.iter().zip(b).map(|(p, q)| p * q).collect())?;
    let n = a.len();
    let var_x: Vec<f64> = (0..n).map(|i| xx[i] as f64 - (mean_x[i] as f64).powi(2)).collect();
    let var_y: Vec<f64> = (0..n).map(|i| yy[i] as f64 - (mean_y[i] as f64).powi(2)).collect();
    let cov: Vec<f64> = (0..n).map(|i| xy[i] as f64 - mean_x[i] as f64 * mean_y[i] as f64).collect();
    let c1 = (K1 * data_range).powi(2);
    let c2 = (K2 * data_range).powi(2);
    let total = chunked_sum(n, false, |i| {
        let (mx, my) = (mean_x[i] as f64, mean_y[i] as f64);
        let num = (2.0 * mx * my + c1) * (2.0 * cov[i] + c2);
        let den = (mx * mx + my * my + c1) * (var_x[i] + var_y[i] + c2);
        num / den
    });
    Ok((total / n as f64, SsimWindows { mean_x, mean_y, var_x, var_y, cov }))
}

/// Window statistics for `x` and `reference` as used by [`ssim`].
pub fn ssim_windows(x: &NdImage, reference: &NdImage) -> Result<SsimWindows> {
    reference.require_shape(x.shape())?;
    let stat = |v: Vec<f32>| -> Result<Vec<f32>> {
        let img = NdImage::from_f32(x.shape().to_vec(), v)?;
        Ok(gaussian(&img, &[SSIM_SIGMA], SSIM_TRUNCATE)?.as_f32()?.to_vec())
    };
    Ok(ssim_map(&x.values_f32(), &reference.values_f32(), 1.0, stat)?.1)
}

/// PSNR and SSIM between intensities zeroed outside their label masks.
///
/// Both metrics use the masked `b` as reference and its value range as the
/// data range.
pub fn masked_quality(a: &NdImage, b: &NdImage, labels_a: &NdImage, labels_b: &NdImage) -> Result<(f64, f64)> {
    for img in [b, labels_a, labels_b] {
        img.require_shape(a.shape())?;
    }
    let mask = |v: &[f32], l: Vec<bool>| -> Vec<f32> { v.iter().zip(l).map(|(&x, m)| if m { x } else { 0.0 }).collect() };
    let ma = a.like_f32(mask(&a.values_f32(), labels_a.nonzero()));
    let mb = a.like_f32(mask(&b.values_f32(), labels_b.nonzero()));
    let range = value_range(mb.as_f32()?);
    let range = if range > 0.0 { range } else { 1.0 };
    Ok((psnr(&ma, &mb, Some(range))?, ssim(&ma, &mb, range)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> NdImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        NdImage::from_f32(shape.to_vec(), (0..n).map(|_| rng.random_range(0.0..1.0f32)).collect()).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let r = NdImage::from_f32(vec![4], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let x = NdImage::from_f32(vec![4], vec![0.1, 1.1, 0.1, 1.1]).unwrap();
        for b in Backend::ALL {
            let (r, x) = (r.to_backend(b), x.to_backend(b));
            assert_eq!(psnr(&r, &r, None).unwrap(), f64::INFINITY);
            assert!((psnr(&x, &r, None).unwrap() - 20.0).abs() < 1e-5);
        }
        let other = NdImage::zeros(vec![3]).unwrap();
        assert!(matches!(psnr(&other, &r, None), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn psnr_matches_direct_sum() {
        for seed in 0..5 {
            let (a, b) = (random(&[9, 11], seed), random(&[9, 11], seed + 100));
            let (p, q) = (a.as_f32().unwrap(), b.as_f32().unwrap());
            let mse: f64 = p.iter().zip(q).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / p.len() as f64;
            let expect = 10.0 * (value_range(q).powi(2) / mse).log10();
            for bk in Backend::ALL {
                assert!((psnr(&a.to_backend(bk), &b.to_backend(bk), None).unwrap() - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn si_psnr_examples() {
        // 2r + 3 rounds in f32 and still counts as exact
        let reference = random(&[200], 9);
        let r = reference.as_f32().unwrap().to_vec();
        let affine = NdImage::from_f32(vec![200], r.iter().map(|v| 2.0 * v + 3.0).collect()).unwrap();
        let scaled = NdImage::from_f32(vec![200], r.iter().map(|v| -0.25 * v + 1e3).collect()).unwrap();
        for b in Backend::ALL {
            assert_eq!(si_psnr(&affine.to_backend(b), &reference.to_backend(b)).unwrap(), f64::INFINITY);
            assert_eq!(si_psnr(&scaled.to_backend(b), &reference.to_backend(b)).unwrap(), f64::INFINITY);
        }
        // a residual of one part in 10^5 is far above f32 rounding
        let nudged = NdImage::from_f32(vec![200], r.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 1e-5 } else { -1e-5 }).collect()).unwrap();
        let near = si_psnr(&nudged, &reference).unwrap();
        assert!(near.is_finite() && near > 90.0, "{near}");
        for seed in 0..5 {
            let x = random(&[200], seed);
            assert!(si_psnr(&x, &reference).unwrap() >= psnr(&x, &reference, None).unwrap());
        }
        let flat = NdImage::filled(vec![200], 1.0).unwrap();
        assert!(matches!(si_psnr(&affine, &flat), Err(Error::DegenerateReference)));
    }

    #[test]
    fn affine_fit_solves_normal_equations() {
        let x = random(&[300], 1);
        let r = random(&[300], 2);
        let (p, q) = (x.as_f32().unwrap(), r.as_f32().unwrap());
        let (a, b) = affine_fit(p, q);
        // normal equations: [sum x^2, sum x; sum x, n] [a; b] = [sum x r; sum r]
        let (mut sxx, mut sx, mut sxr, mut sr) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (&u, &v) in p.iter().zip(q) {
            let (u, v) = (u as f64, v as f64);
            sxx += u * u;
            sx += u;
            sxr += u * v;
            sr += v;
        }
        let n = p.len() as f64;
        let det = sxx * n - sx * sx;
        let a0 = (sxr * n - sx * sr) / det;
        let b0 = (sxx * sr - sx * sxr) / det;
        assert!((a - a0).abs() < 1e-6 && (b - b0).abs() < 1e-6);
    }

    #[test]
    fn ssim_identities_and_anticorrelation() {
        let x = random(&[16, 16], 3);
        for b in Backend::ALL {
            let x = x.to_backend(b);
            assert_eq!(ssim(&x, &x, 1.0).unwrap(), 1.0);
        }
        let pattern: Vec<f32> = (0..256).map(|i| (((i / 16) / 4 + (i % 16) / 4) % 2) as f32).collect();
        let p = NdImage::from_f32(vec![16, 16], pattern.clone()).unwrap();
        let q = NdImage::from_f32(vec![16, 16], pattern.iter().map(|v| 1.0 - v).collect()).unwrap();
        let s = ssim(&p, &q, 1.0).unwrap();
        assert!(s < 0.2, "{s}");
        assert_eq!(s, ssim(&q, &p, 1.0).unwrap());
        let small = NdImage::zeros(vec![6, 16]).unwrap();
        assert!(matches!(ssim(&small, &small, 1.0), Err(Error::TooSmall { .. })));
    }

    #[test]
    fn ssim_windows_match_dense_sums() {
        let (x, y) = (random(&[12, 13], 5), random(&[12, 13], 6));
        let w = ssim_windows(&x, &y).unwrap();
        let taps = crate::filters::gaussian_kernel1d(SSIM_SIGMA, SSIM_TRUNCATE);
        let r = (taps.len() / 2) as isize;
        let mirror = |i: isize, n: isize| -> usize {
            let mut i = i;
            while i < 0 || i >= n {
                i = if i < 0 { -i } else { 2 * (n - 1) - i };
            }
            i as usize
        };
        let (p, q) = (x.as_f32().unwrap(), y.as_f32().unwrap());
        for i in 0..12isize {
            for j in 0..13isize {
                let (mut mx, mut my, mut sxy) = (0.0f64, 0.0f64, 0.0f64);
                for di in -r..=r {
                    for dj in -r..=r {
                        let wgt = taps[(di + r) as usize] as f64 * taps[(dj + r) as usize] as f64;
                        let k = mirror(i + di, 12) * 13 + mirror(j + dj, 13);
                        mx += wgt * p[k] as f64;
                        my += wgt * q[k] as f64;
                        sxy += wgt * p[k] as f64 * q[k] as f64;
                    }
                }
                let idx = (i * 13 + j) as usize;
                assert!((w.mean_x[idx] as f64 - mx).abs() < 1e-6);
                assert!((w.mean_y[idx] as f64 - my).abs() < 1e-6);
                assert!((w.cov[idx] - (sxy - mx * my)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn masked_quality_examples() {
        let x = random(&[16, 16], 9);
        let l = NdImage::from_labels(vec![16, 16], (0..256).map(|i| (i % 16 > 4) as u32).collect()).unwrap();
        let (p, s) = masked_quality(&x, &x, &l, &l).unwrap();
        assert_eq!((p, s), (f64::INFINITY, 1.0));

        // disjoint masks over a uniform image
        let flat = NdImage::filled(vec![16, 16], 1.0).unwrap();
        let la = NdImage::from_labels(vec![16, 16], (0..256).map(|i| (i % 16 < 8) as u32).collect()).unwrap();
        let lb = NdImage::from_labels(vec![16, 16], (0..256).map(|i| (i % 16 >= 8) as u32).collect()).unwrap();
        assert!(masked_quality(&flat, &flat, &la, &lb).unwrap().1 < 0.5);

        // nested masks growing toward the reference mask
        let mut last = f64::NEG_INFINITY;
        for k in 0..=8 {
            let grow = NdImage::from_labels(vec![16, 16], (0..256).map(|i| (i % 16 < k) as u32).collect()).unwrap();
            let p = masked_quality(&flat, &flat, &grow, &la).unwrap().0;
            assert!(p >= last);
            last = p;
        }
        assert_eq!(last, f64::INFINITY);
    }
}
