use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::fft_nd;
use crate::image::{strides, unravel, Backend, NdImage};
use crate::registry::{dispatch, kernel_pair, retag_noop, ExecutionRegistry, Retag};

pub type FrcKernel = fn(&NdImage, &NdImage, &FrcOptions) -> Result<FrcCurve>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("frc", Backend::Reference, frc_ref as FrcKernel);
    reg.register("frc", Backend::Accelerated, frc_acc as FrcKernel);
}

kernel_pair!(frc_ref, frc_acc, frc_impl, (a: &NdImage, b: &NdImage, opts: &FrcOptions) -> Result<FrcCurve>);

/// Ring width, apodization and sampling offset for [`frc_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrcOptions {
    /// Ring width in frequency samples of the smallest extent.
    pub ring_width: f64,
    /// Apply a Hann window to both inputs before transforming.
    pub hann: bool,
    /// Position of `b`'s sampling grid relative to `a`'s, in samples per
    /// axis (empty for none). The phase ramp it induces is removed from `b`.
    pub offset: Vec<f64>,
}

impl Default for FrcOptions {
    fn default() -> Self {
        FrcOptions { ring_width: 1.0, hann: false, offset: Vec::new() }
    }
}

/// Default crossing threshold for [`frc_resolution`].
pub const FRC_THRESHOLD: f64 = 1.0 / 7.0;

/// A curve counts as resolved only if the count-weighted mean correlation
/// over rings `1..=SUPPORT_RINGS` clears the threshold by three standard
/// errors of uncorrelated noise (`3 / sqrt(coefficients)`).
pub const SUPPORT_RINGS: usize = 3;

/// Correlation per frequency ring (2-D) or shell (3-D).
///
/// `frequency[i]` is the ring radius in cycles per sample, `count[i]` the
/// number of Fourier coefficients in the ring. Ring 0 holds the DC term.
/// Rings without energy in either image report a correlation of 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrcCurve {
    pub frequency: Vec<f64>,
    pub correlation: Vec<f64>,
    pub count: Vec<usize>,
    pub energetic: Vec<bool>,
    pub ring_width: f64,
    pub hann: bool,
}

retag_noop!(FrcCurve);

/// Fourier ring (or shell) correlation of two equally shaped images.
///
/// Rings are `ring_width` frequency samples wide, measured in units of the
/// smallest extent, and stop at Nyquist.
pub fn frc(a: &NdImage, b: &NdImage, ring_width: f64) -> Result<FrcCurve> {
    frc_with(a, b, &FrcOptions { ring_width, ..FrcOptions::default() })
}

pub fn frc_with(a: &NdImage, b: &NdImage, opts: &FrcOptions) -> Result<FrcCurve> {
    dispatch("frc", &[a, b], |k: FrcKernel| k(a, b, opts))
}

fn hann_weights(shape: &[usize]) -> Vec<f64> {
    let per_axis: Vec<Vec<f64>> = shape
        .iter()
        .map(|&n| (0..n).map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos()).collect())
        .collect();
    let mut c = vec![0; shape.len()];
    (0..shape.iter().product())
        .map(|i| {
            unravel(i, shape, &mut c);
            c.iter().zip(&per_axis).map(|(&k, w)| w[k]).product()
        })
        .collect()
}

fn frc_impl(a: &NdImage, b: &NdImage, opts: &FrcOptions, parallel: bool) -> Result<FrcCurve> {
    b.require_shape(a.shape())?;
    let FrcOptions { ring_width, hann, ref offset } = *opts;
    if !offset.is_empty() && offset.len() != a.ndim() {
        return Err(Error::InvalidParameter(format!("offset has {} entries for {} axes", offset.len(), a.ndim())));
    }
    if !(ring_width > 0.0) {
        return Err(Error::InvalidParameter(format!("ring width must be positive, got {ring_width}")));
    }
    let shape = a.shape();
    if shape.iter().any(|&n| n < 2) {
        return Err(Error::TooSmall { min: 2, shape: shape.to_vec() });
    }
    let window = hann.then(|| hann_weights(shape));
    let spectrum = |img: &NdImage| {
        let v = img.values_f32();
        let mut data: Vec<Complex64> = match &window {
            Some(w) => v.iter().zip(w).map(|(&x, &w)| Complex64::new(x as f64 * w, 0.0)).collect(),
            None => v.iter().map(|&x| Complex64::new(x as f64, 0.0)).collect(),
        };
        fft_nd(&mut data, shape, false, parallel);
        data
    };
    let (fa, fb) = (spectrum(a), spectrum(b));

    let n_min = *shape.iter().min().unwrap() as f64;
    let rings = (n_min / (2.0 * ring_width)).floor() as usize + 1;
    let mut cross = vec![0.0f64; rings];
    let mut ea = vec![0.0f64; rings];
    let mut eb = vec![0.0f64; rings];
    let mut count = vec![0usize; rings];
    let mut c = vec![0; shape.len()];
    for i in 0..fa.len() {
        unravel(i, shape, &mut c);
        let freq = c.iter().zip(shape).map(|(&k, &n)| if 2 * k > n { k as f64 - n as f64 } else { k as f64 } / n as f64);
        let rho2: f64 = freq.clone().map(|f| f * f).sum();
        let ring = (rho2.sqrt() * n_min / ring_width).round() as usize;
        if ring >= rings {
            continue;
        }
        let p = fa[i];
        let q = if offset.is_empty() {
            fb[i]
        } else {
            let phase: f64 = freq.zip(offset).map(|(f, d)| f * d).sum();
            fb[i] * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * phase)
        };
        cross[ring] += p.re * q.re + p.im * q.im;
        ea[ring] += p.re * p.re + p.im * p.im;
        eb[ring] += q.re * q.re + q.im * q.im;
        count[ring] += 1;
    }
    let energetic: Vec<bool> = (0..rings).map(|r| ea[r] > 0.0 && eb[r] > 0.0).collect();
    let correlation =
        (0..rings).map(|r| if energetic[r] { (cross[r] / (ea[r] * eb[r]).sqrt()).clamp(-1.0, 1.0) } else { 0.0 }).collect();
    Ok(FrcCurve {
        frequency: (0..rings).map(|r| r as f64 * ring_width / n_min).collect(),
        correlation,
        count,
        energetic,
        ring_width,
        hann,
    })
}

/// Resolution in physical units at the first threshold crossing of the
/// curve after the DC ring, interpolated linearly between rings.
///
/// Returns `+inf` (unresolved) when the curve never crosses, or when it is
/// already below the threshold within the first few rings.
pub fn frc_resolution(curve: &FrcCurve, spacing: f64, threshold: f64) -> f64 {
    let (f, c) = (&curve.frequency, &curve.correlation);
    if c.len() <= SUPPORT_RINGS {
        return f64::INFINITY;
    }
    let n: usize = curve.count[1..=SUPPORT_RINGS].iter().sum();
    let pooled = (1..=SUPPORT_RINGS).map(|r| curve.count[r] as f64 * c[r]).sum::<f64>() / n.max(1) as f64;
    if c[1] <= threshold || pooled < threshold + 3.0 / (n.max(1) as f64).sqrt() {
        return f64::INFINITY;
    }
    for i in 2..c.len() {
        if c[i] <= threshold {
            let t = (c[i - 1] - threshold) / (c[i - 1] - c[i]);
            let crossing = f[i - 1] + t * (f[i] - f[i - 1]);
            return spacing / crossing;
        }
    }
    f64::INFINITY
}

/// The two complementary checkerboard halves of an image: samples with
/// even/even and odd/odd indices on the last two axes. The odd half sits half
/// a sample further along both axes.
pub fn checkerboard_split(img: &NdImage) -> Result<(NdImage, NdImage)> {
    let shape = img.shape();
    let nd = shape.len();
    if nd < 2 {
        return Err(Error::BadShape(format!("checkerboard split needs at least 2 axes, got {shape:?}")));
    }
    if shape[nd - 2] % 2 != 0 || shape[nd - 1] % 2 != 0 {
        return Err(Error::OddExtent(shape.to_vec()));
    }
    let mut half = shape.to_vec();
    half[nd - 2] /= 2;
    half[nd - 1] /= 2;
    let v = img.values_f32();
    let st = strides(shape);
    let mut c = vec![0; nd];
    let mut take = |parity: usize| -> Vec<f32> {
        (0..half.iter().product())
            .map(|i| {
                unravel(i, &half, &mut c);
                c[nd - 2] = 2 * c[nd - 2] + parity;
                c[nd - 1] = 2 * c[nd - 1] + parity;
                v[c.iter().zip(&st).map(|(a, b)| a * b).sum::<usize>()]
            })
            .collect()
    };
    let (even, odd) = (take(0), take(1));
    let tag = img.backend();
    Ok((NdImage::from_f32(half.clone(), even)?.tagged(tag), NdImage::from_f32(half, odd)?.tagged(tag)))
}

/// FRC curve between the checkerboard halves of `img`, with their relative
/// half-sample offset compensated.
pub fn single_image_frc_curve(img: &NdImage, hann: bool) -> Result<FrcCurve> {
    let (a, b) = checkerboard_split(img)?;
    let nd = img.ndim();
    let mut offset = vec![0.0; nd];
    offset[nd - 2] = 0.5;
    offset[nd - 1] = 0.5;
    frc_with(&a, &b, &FrcOptions { ring_width: 1.0, hann, offset })
}

/// Resolution of one image from the FRC of its checkerboard halves, each of
/// which samples at twice `spacing`.
pub fn single_image_frc(img: &NdImage, spacing: f64) -> Result<f64> {
    Ok(frc_resolution(&single_image_frc_curve(img, false)?, 2.0 * spacing, FRC_THRESHOLD))
}
