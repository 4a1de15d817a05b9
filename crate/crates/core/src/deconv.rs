//! Richardson-Lucy deconvolution with metric-guided stopping.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{crop_corner, embed, fft_nd, half_shape, irfft_nd, next_fast_len, rfft_nd, wrap_kernel};
use crate::image::{strides, unravel, Backend, NdImage};
use crate::metrics::{si_psnr, single_image_frc, ssim};
use crate::ops::DIV_EPSILON;
use crate::registry::{dispatch, kernel_pair, ExecutionRegistry};

pub type RlStepKernel = fn(&NdImage, &NdImage, &OpticalTransfer) -> Result<NdImage>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("rl_step", Backend::Reference, rl_ref as RlStepKernel);
    reg.register("rl_step", Backend::Accelerated, rl_acc as RlStepKernel);
}

kernel_pair!(rl_ref, rl_acc, rl_impl, (estimate: &NdImage, observed: &NdImage, otf: &OpticalTransfer) -> Result<NdImage>);

/// Largest tolerated deviation of the PSF sum from 1.
pub const PSF_SUM_TOLERANCE: f64 = 1e-3;

/// Quantity watched between iterations to decide when to stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    /// si-PSNR of the estimate against the observed image. Progress is how
    /// far an iteration moves the estimate away from the input.
    SiPsnrVsInput,
    /// SSIM between consecutive estimates. Progress is `1 - ssim`, the share
    /// of structure an iteration still changes.
    SsimVsPrev,
    /// Single-image FRC resolution of the estimate. Progress is the relative
    /// decrease of the resolution length.
    FrcResolution,
}

impl StopMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            StopMetric::SiPsnrVsInput => "si_psnr_vs_input",
            StopMetric::SsimVsPrev => "ssim_vs_prev",
            StopMetric::FrcResolution => "frc_resolution",
        }
    }

    /// Relative progress made by the iteration that moved the metric from
    /// `prev` to `cur`.
    fn progress(self, prev: f64, cur: f64) -> f64 {
        match self {
            StopMetric::SiPsnrVsInput => {
                if prev.is_finite() && cur.is_finite() {
                    (prev - cur) / prev.abs().max(f64::MIN_POSITIVE)
                } else if prev.is_infinite() && cur.is_finite() {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            StopMetric::SsimVsPrev => 1.0 - cur,
            StopMetric::FrcResolution => {
                if prev.is_finite() && cur.is_finite() {
                    (prev - cur) / prev
                } else if prev.is_infinite() && cur.is_finite() {
                    f64::INFINITY
                } else if prev.is_finite() {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for StopMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StopMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "si_psnr_vs_input" => Ok(StopMetric::SiPsnrVsInput),
            "ssim_vs_prev" => Ok(StopMetric::SsimVsPrev),
            "frc_resolution" => Ok(StopMetric::FrcResolution),
            other => Err(Error::InvalidParameter(format!("unknown stopping metric `{other}`"))),
        }
    }
}

/// Stop once `patience` consecutive iterations each make less than `rel_tol`
/// progress on `metric`, or after `max_iters` iterations. Progress is first
/// measured at iteration 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub metric: StopMetric,
    pub rel_tol: f64,
    pub patience: usize,
    pub max_iters: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule { metric: StopMetric::FrcResolution, rel_tol: 1e-3, patience: 3, max_iters: 100 }
    }
}

impl StoppingRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        if self.patience == 0 || self.max_iters == 0 {
            return Err(Error::InvalidParameter("patience and max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Starting estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    Observed,
    /// Constant image at the mean of the observed data.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub metric: String,
    pub value: f64,
    pub wall_time_s: f64,
}

/// Per-iteration metric values plus run metadata (padding, initialization,
/// stop reason).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub metadata: BTreeMap<String, String>,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.value).collect()
    }

    /// CSV with header `iter,metric,value,wall_time_s`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,metric,value,wall_time_s\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{}\n", r.iter, r.metric, r.value, r.wall_time_s));
        }
        s
    }
}

/// PSF transforms on the FFT grid of a padded deconvolution domain,
/// computed once per run.
///
/// The domain is the observed image padded by half the PSF extent on every
/// side. Convolutions are linear (zero beyond the domain): the grid is at
/// least `domain + psf - 1` long per axis.
#[derive(Debug, Clone)]
pub struct OpticalTransfer {
    domain: Vec<usize>,
    grid: Vec<usize>,
    pad: Vec<usize>,
    forward: Vec<Complex64>,
    adjoint: Vec<Complex64>,
    /// Back-projection of a unit image, `psf_flipped * 1`, on the domain.
    /// It is 1 wherever the PSF footprint stays inside the domain.
    sensitivity: Vec<f64>,
}

impl OpticalTransfer {
    /// Transfer functions of `psf` and its mirror image for deconvolving an
    /// image of shape `observed`.
    pub fn new(psf: &NdImage, observed: &[usize]) -> Result<Self> {
        let k = psf.shape();
        if k.len() != observed.len() {
            return Err(Error::BadShape(format!("{}-D psf for a {}-D image", k.len(), observed.len())));
        }
        if k.iter().any(|&e| e % 2 == 0) {
            return Err(Error::EvenExtent(k.to_vec()));
        }
        let pad: Vec<usize> = k.iter().map(|&e| e / 2).collect();
        let domain: Vec<usize> = observed.iter().zip(&pad).map(|(&n, &p)| n + 2 * p).collect();
        let grid: Vec<usize> = domain.iter().zip(k).map(|(&n, &e)| next_fast_len(n + e - 1)).collect();
        let v = psf.values_f32();
        let flipped: Vec<f32> = v.iter().rev().copied().collect();
        let forward = rfft_nd(&wrap_kernel(&v, k, &grid), &grid, true);
        let adjoint = rfft_nd(&wrap_kernel(&flipped, k, &grid), &grid, true);
        let ones = vec![1.0; domain.iter().product()];
        let mut spec = rfft_nd(&embed(&ones, &domain, &grid), &grid, true);
        spec.iter_mut().zip(&adjoint).for_each(|(a, b)| *a *= b);
        let sensitivity = crop_corner(&irfft_nd(spec, &grid, true), &grid, &domain)
            .into_iter()
            .map(|v| v.max(DIV_EPSILON))
            .collect();
        Ok(OpticalTransfer { domain, grid, pad, forward, adjoint, sensitivity })
    }

    /// Shape of the padded domain the estimate lives on.
    pub fn domain(&self) -> &[usize] {
        &self.domain
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    /// Half the PSF extent per axis, the padding on each side.
    pub fn pad(&self) -> &[usize] {
        &self.pad
    }
}

/// Edge-replicate padding by `pad` voxels on both sides of every axis.
pub fn pad_replicate(img: &NdImage, pad: &[usize]) -> Result<NdImage> {
    let shape = img.shape();
    if pad.len() != shape.len() {
        return Err(Error::BadShape(format!("{} pad widths for a {}-D image", pad.len(), shape.len())));
    }
    let big: Vec<usize> = shape.iter().zip(pad).map(|(&n, &p)| n + 2 * p).collect();
    let v = img.values_f32();
    let st = strides(shape);
    let mut c = vec![0; shape.len()];
    let out = (0..big.iter().product())
        .map(|i| {
            unravel(i, &big, &mut c);
            let src: usize = (0..shape.len()).map(|a| c[a].saturating_sub(pad[a]).min(shape[a] - 1) * st[a]).sum();
            v[src]
        })
        .collect();
    Ok(NdImage::from_f32(big, out)?.tagged(img.backend()).with_spacing_opt(img.spacing().map(<[f64]>::to_vec)))
}

/// The centered `shape`-sized window of a padded image.
pub fn crop_center(img: &NdImage, pad: &[usize], shape: &[usize]) -> Result<NdImage> {
    let big = img.shape();
    if pad.len() != big.len() || shape.len() != big.len() || (0..big.len()).any(|a| shape[a] + 2 * pad[a] != big[a]) {
        return Err(Error::ShapeMismatch { expected: big.to_vec(), found: shape.to_vec() });
    }
    let v = img.values_f32();
    let st = strides(big);
    let mut c = vec![0; big.len()];
    let out = (0..shape.iter().product())
        .map(|i| {
            unravel(i, shape, &mut c);
            v[(0..big.len()).map(|a| (c[a] + pad[a]) * st[a]).sum::<usize>()]
        })
        .collect();
    Ok(NdImage::from_f32(shape.to_vec(), out)?.tagged(img.backend()).with_spacing_opt(img.spacing().map(<[f64]>::to_vec)))
}

/// One multiplicative update on the padded domain:
/// `e * ((observed / max(e * psf, eps)) * psf_flipped) / s` with `*` the
/// linear convolution of `otf` and `s = psf_flipped * 1`, which is 1 away
/// from the domain border. Dividing by `s` keeps the update an EM step where
/// the PSF footprint leaves the domain.
pub fn rl_step(estimate: &NdImage, observed: &NdImage, otf: &OpticalTransfer) -> Result<NdImage> {
    dispatch("rl_step", &[estimate, observed], |k: RlStepKernel| k(estimate, observed, otf))
}

fn rl_impl(estimate: &NdImage, observed: &NdImage, otf: &OpticalTransfer, parallel: bool) -> Result<NdImage> {
    estimate.require_shape(&otf.domain)?;
    observed.require_shape(&otf.domain)?;
    let e = estimate.values_f32();
    let y = observed.values_f32();
    let out = if parallel { step_fused(&e, &y, otf) } else { step_unfused(&e, &y, otf) };
    Ok(estimate.like_f32(out))
}

/// Straightforward composition: full complex transforms and one pass per
/// elementwise stage.
fn step_unfused(e: &[f32], y: &[f32], otf: &OpticalTransfer) -> Vec<f32> {
    let forward = expand_half(&otf.forward, &otf.grid);
    let adjoint = expand_half(&otf.adjoint, &otf.grid);
    let conv = |x: &[f64], h: &[Complex64]| -> Vec<f64> {
        let mut g: Vec<Complex64> =
            embed(x, &otf.domain, &otf.grid).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        fft_nd(&mut g, &otf.grid, false, false);
        g.iter_mut().zip(h).for_each(|(a, b)| *a *= b);
        fft_nd(&mut g, &otf.grid, true, false);
        crop_corner(&g, &otf.grid, &otf.domain).into_iter().map(|c| c.re).collect()
    };
    let e64: Vec<f64> = e.iter().map(|&v| v as f64).collect();
    let blurred = conv(&e64, &forward);
    let ratio: Vec<f64> = y.iter().zip(&blurred).map(|(&o, &b)| o as f64 / b.max(DIV_EPSILON)).collect();
    let correction = conv(&ratio, &adjoint);
    let normalized: Vec<f64> = correction.iter().zip(&otf.sensitivity).map(|(&c, &s)| c / s).collect();
    e64.iter().zip(&normalized).map(|(&a, &c)| (a * c).max(0.0) as f32).collect()
}

/// Real transforms with the ratio and update fused into the grid passes.
fn step_fused(e: &[f32], y: &[f32], otf: &OpticalTransfer) -> Vec<f32> {
    let (domain, grid) = (&otf.domain, &otf.grid);
    let e64: Vec<f64> = e.par_iter().map(|&v| v as f64).collect();
    let mut spec = rfft_nd(&embed(&e64, domain, grid), grid, true);
    spec.par_iter_mut().zip(&otf.forward).for_each(|(a, b)| *a *= b);
    let mut g = irfft_nd(spec, grid, true);
    let inner = *domain.last().unwrap();
    let g_inner = *grid.last().unwrap();
    let rows = domain_rows(domain, grid);
    // ratio in place on the grid; everything outside the domain is zero
    g.par_chunks_mut(g_inner).enumerate().for_each(|(r, row)| match rows.get(&r) {
        Some(&d) => {
            for (x, v) in row[..inner].iter_mut().enumerate() {
                *v = y[d * inner + x] as f64 / v.max(DIV_EPSILON);
            }
            row[inner..].fill(0.0);
        }
        None => row.fill(0.0),
    });
    let mut spec = rfft_nd(&g, grid, true);
    spec.par_iter_mut().zip(&otf.adjoint).for_each(|(a, b)| *a *= b);
    let c = irfft_nd(spec, grid, true);
    let mut out = vec![0.0f32; e.len()];
    out.par_chunks_mut(inner).enumerate().for_each(|(d, row)| {
        let base = row_offset(d, domain, grid);
        for (x, o) in row.iter_mut().enumerate() {
            let i = d * inner + x;
            *o = (e64[i] * (c[base + x] / otf.sensitivity[i])).max(0.0) as f32;
        }
    });
    out
}

/// Grid row index -> domain row index for the rows inside the domain.
fn domain_rows(domain: &[usize], grid: &[usize]) -> std::collections::HashMap<usize, usize> {
    let rows: usize = domain[..domain.len() - 1].iter().product();
    (0..rows).map(|d| (row_offset(d, domain, grid) / grid[grid.len() - 1], d)).collect()
}

/// Grid offset of the first element of domain row `d`.
fn row_offset(d: usize, domain: &[usize], grid: &[usize]) -> usize {
    let nd = domain.len();
    let mut rem = d;
    let mut off = 0;
    let mut scale = grid[nd - 1];
    for a in (0..nd - 1).rev() {
        off += (rem % domain[a]) * scale;
        rem /= domain[a];
        scale *= grid[a];
    }
    off
}

/// Full spectrum of a real signal from its half spectrum.
fn expand_half(half: &[Complex64], grid: &[usize]) -> Vec<Complex64> {
    let nd = grid.len();
    let hshape = half_shape(grid);
    let hst = strides(&hshape);
    let n = grid[nd - 1];
    let mut c = vec![0; nd];
    (0..grid.iter().product())
        .map(|i| {
            unravel(i, grid, &mut c);
            if c[nd - 1] < hshape[nd - 1] {
                half[c.iter().zip(&hst).map(|(a, b)| a * b).sum::<usize>()]
            } else {
                let idx: usize = (0..nd)
                    .map(|a| {
                        let m = if a == nd - 1 { n } else { grid[a] };
                        ((m - c[a]) % m) * hst[a]
                    })
                    .sum();
                half[idx].conj()
            }
        })
        .collect()
}

/// Run options beyond the stopping rule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RlOptions {
    pub rule: StoppingRule,
    pub init: Init,
}

/// Richardson-Lucy deconvolution of `observed` by a normalized, nonnegative
/// `psf` with odd extents, starting from the observed image.
pub fn richardson_lucy(observed: &NdImage, psf: &NdImage, rule: &StoppingRule) -> Result<(NdImage, IterationTrace)> {
    richardson_lucy_with(observed, psf, &RlOptions { rule: rule.clone(), init: Init::Observed })
}

pub fn richardson_lucy_with(observed: &NdImage, psf: &NdImage, opts: &RlOptions) -> Result<(NdImage, IterationTrace)> {
    let rule = &opts.rule;
    rule.validate()?;
    let y = observed.values_f32();
    if y.iter().any(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::NegativeInput);
    }
    let k = psf.values_f32();
    if k.iter().any(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::NegativeInput);
    }
    let sum: f64 = k.iter().map(|&v| v as f64).sum();
    if (sum - 1.0).abs() > PSF_SUM_TOLERANCE {
        return Err(Error::UnnormalizedPsf(sum));
    }
    let psf = psf.to_backend(observed.backend());
    let otf = OpticalTransfer::new(&psf, observed.shape())?;
    let padded = pad_replicate(observed, otf.pad())?;
    let mut estimate = match opts.init {
        Init::Observed => padded.clone(),
        Init::Flat => {
            let mean = y.iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64;
            padded.like_f32(vec![mean as f32; padded.len()])
        }
    };

    let mut trace = IterationTrace::default();
    trace.metadata.insert("padding".into(), format!("edge-replicate {:?} per side, linear FFT grid {:?}", otf.pad(), otf.grid()));
    trace.metadata.insert("init".into(), format!("{:?}", opts.init).to_lowercase());
    trace.metadata.insert("epsilon".into(), DIV_EPSILON.to_string());
    trace.metadata.insert("rule".into(), format!("{} rel_tol={} patience={} max_iters={}", rule.metric, rule.rel_tol, rule.patience, rule.max_iters));

    let mut current = crop_center(&estimate, otf.pad(), observed.shape())?;
    let mut prev_value: Option<f64> = None;
    let mut stalled = 0;
    let mut reason = "max_iters";
    for iter in 1..=rule.max_iters {
        let t = Instant::now();
        estimate = rl_step(&estimate, &padded, &otf)?;
        let next = crop_center(&estimate, otf.pad(), observed.shape())?;
        let value = match rule.metric {
            StopMetric::SiPsnrVsInput => si_psnr(&next, observed)?,
            StopMetric::SsimVsPrev => {
                let range = crate::metrics::value_range(&current.values_f32());
                ssim(&next, &current, if range > 0.0 { range } else { 1.0 })?
            }
            StopMetric::FrcResolution => frc_value(&next)?,
        };
        current = next;
        trace.records.push(IterationRecord {
            iter,
            metric: rule.metric.to_string(),
            value,
            wall_time_s: t.elapsed().as_secs_f64(),
        });
        if let Some(prev) = prev_value {
            if rule.metric.progress(prev, value) < rule.rel_tol {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        prev_value = Some(value);
        if stalled >= rule.patience {
            reason = "converged";
            break;
        }
    }
    trace.metadata.insert("stop_reason".into(), reason.into());
    Ok((current, trace))
}

/// Single-image FRC resolution, trimming a trailing row or column so the
/// split axes are even.
fn frc_value(img: &NdImage) -> Result<f64> {
    let shape = img.shape();
    let nd = shape.len();
    let spacing = img.spacing().map_or(1.0, |s| s[nd - 1]);
    if shape[nd - 2] % 2 == 0 && shape[nd - 1] % 2 == 0 {
        return single_image_frc(img, spacing);
    }
    let even: Vec<usize> =
        shape.iter().enumerate().map(|(a, &n)| if a + 2 >= nd { n - n % 2 } else { n }).collect();
    let src = img.values_f32();
    let st = strides(shape);
    let mut c = vec![0; nd];
    let v = (0..even.iter().product())
        .map(|i| {
            unravel(i, &even, &mut c);
            src[c.iter().zip(&st).map(|(a, b)| a * b).sum::<usize>()]
        })
        .collect();
    single_image_frc(&NdImage::from_f32(even, v)?.tagged(img.backend()), spacing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::fft_convolve;
    use crate::ops::{elementwise, BinaryOp, Operand};
    use crate::synth::{gaussian_psf, generate_blobs, SynthSpec};

    fn phantom(shape: Vec<usize>, seed: u64) -> NdImage {
        let spec = SynthSpec {
            shape,
            n_objects: 2,
            radius_range: [3.0, 4.0],
            seed,
            noise_sigma: 0.0,
            anisotropy: 0.5,
        };
        let (img, _) = generate_blobs(&spec).unwrap();
        // background offset keeps the likelihood finite everywhere
        img.like_f32(img.as_f32().unwrap().iter().map(|v| v + 0.05).collect())
    }

    fn psf() -> NdImage {
        gaussian_psf(&[5, 7, 7], &[1.0, 1.5, 1.5]).unwrap()
    }

    fn blur(x: &NdImage, otf: &OpticalTransfer) -> Vec<f64> {
        let e: Vec<f64> = x.values_f32().iter().map(|&v| v as f64).collect();
        let mut spec = rfft_nd(&embed(&e, &otf.domain, &otf.grid), &otf.grid, false);
        spec.iter_mut().zip(&otf.forward).for_each(|(a, b)| *a *= b);
        crop_corner(&irfft_nd(spec, &otf.grid, false), &otf.grid, &otf.domain)
    }

    #[test]
    fn delta_psf_returns_observed() {
        let obs = phantom(vec![8, 20, 20], 1);
        let delta = gaussian_psf(&[1, 3, 3], &[0.0, 0.0, 0.0]).unwrap();
        let rule = StoppingRule { max_iters: 1, ..StoppingRule::default() };
        let (est, trace) = richardson_lucy(&obs, &delta, &rule).unwrap();
        assert_eq!(trace.iterations(), 1);
        for (a, b) in est.as_f32().unwrap().iter().zip(obs.as_f32().unwrap()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn exact_solution_is_a_fixed_point() {
        let truth = phantom(vec![10, 24, 24], 2);
        let otf = OpticalTransfer::new(&psf(), truth.shape()).unwrap();
        let latent = pad_replicate(&truth, otf.pad()).unwrap();
        let observed = latent.like_f32(blur(&latent, &otf).iter().map(|&v| v as f32).collect());
        for b in Backend::ALL {
            let next = rl_step(&latent.to_backend(b), &observed.to_backend(b), &otf).unwrap();
            for (a, t) in next.as_f32().unwrap().iter().zip(latent.as_f32().unwrap()) {
                assert!((a - t).abs() <= 1e-4 * t.abs().max(1.0), "{a} vs {t}");
            }
        }
    }

    #[test]
    fn step_matches_unfused_composition() {
        let truth = phantom(vec![9, 20, 22], 3);
        let otf = OpticalTransfer::new(&psf(), truth.shape()).unwrap();
        let observed = pad_replicate(&truth, otf.pad()).unwrap();
        let estimate = observed.like_f32(observed.as_f32().unwrap().iter().map(|v| 0.5 + v).collect());
        let flipped = psf().like_f32(psf().as_f32().unwrap().iter().rev().copied().collect());
        let blurred = fft_convolve(&estimate, &psf(), false).unwrap();
        let clamped = elementwise(BinaryOp::Max, &blurred, Operand::Scalar(DIV_EPSILON as f32)).unwrap();
        let ratio = elementwise(BinaryOp::Div, &observed, Operand::Image(&clamped)).unwrap();
        let back = fft_convolve(&ratio, &flipped, false).unwrap();
        let ones = NdImage::filled(observed.shape().to_vec(), 1.0).unwrap();
        let sensitivity = fft_convolve(&ones, &flipped, false).unwrap();
        let normalized = elementwise(BinaryOp::Div, &back, Operand::Image(&sensitivity)).unwrap();
        let oracle = elementwise(BinaryOp::Mul, &estimate, Operand::Image(&normalized)).unwrap();
        for b in Backend::ALL {
            let step = rl_step(&estimate.to_backend(b), &observed.to_backend(b), &otf).unwrap();
            for (a, o) in step.as_f32().unwrap().iter().zip(oracle.as_f32().unwrap()) {
                assert!((a - o).abs() <= 1e-5 * o.abs().max(1.0), "{a} vs {o}");
            }
        }
    }

    #[test]
    fn likelihood_never_decreases() {
        let truth = phantom(vec![12, 28, 28], 4);
        let otf = OpticalTransfer::new(&psf(), truth.shape()).unwrap();
        let latent = pad_replicate(&truth, otf.pad()).unwrap();
        let observed = latent.like_f32(blur(&latent, &otf).iter().map(|&v| v.max(0.0) as f32).collect());
        let y: Vec<f64> = observed.as_f32().unwrap().iter().map(|&v| v as f64).collect();
        let loglik = |e: &NdImage| -> f64 {
            blur(e, &otf).iter().zip(&y).map(|(&m, &o)| o * m.max(DIV_EPSILON).ln() - m).sum()
        };
        let mut e = observed.clone();
        let mut last = loglik(&e);
        for i in 0..20 {
            e = rl_step(&e, &observed, &otf).unwrap();
            assert!(e.as_f32().unwrap().iter().all(|&v| v >= 0.0));
            let l = loglik(&e);
            assert!(l >= last - 1e-7 * last.abs(), "iteration {i}: {l} < {last}");
            last = l;
        }
    }

    #[test]
    fn stopping_rule_bounds() {
        let obs = phantom(vec![8, 24, 24], 5);
        let inf = StoppingRule { rel_tol: f64::INFINITY, patience: 2, max_iters: 50, ..StoppingRule::default() };
        for metric in [StopMetric::SiPsnrVsInput, StopMetric::SsimVsPrev, StopMetric::FrcResolution] {
            let (_, trace) = richardson_lucy(&obs, &psf(), &StoppingRule { metric, ..inf.clone() }).unwrap();
            assert_eq!(trace.iterations(), 3);
            assert_eq!(trace.metadata["stop_reason"], "converged");
            let iters: Vec<usize> = trace.records.iter().map(|r| r.iter).collect();
            assert_eq!(iters, vec![1, 2, 3]);
        }
        let capped = StoppingRule { rel_tol: 1e-300, patience: 1, max_iters: 4, metric: StopMetric::SsimVsPrev };
        let (_, trace) = richardson_lucy(&obs, &psf(), &capped).unwrap();
        assert_eq!(trace.iterations(), 4);
        assert_eq!(trace.metadata["stop_reason"], "max_iters");
        let csv = trace.to_csv();
        assert!(csv.starts_with("iter,metric,value,wall_time_s\n1,ssim_vs_prev,"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn input_validation() {
        let obs = phantom(vec![8, 24, 24], 6);
        let neg = obs.like_f32(obs.as_f32().unwrap().iter().map(|v| v - 1.0).collect());
        assert!(matches!(richardson_lucy(&neg, &psf(), &StoppingRule::default()), Err(Error::NegativeInput)));
        let heavy = psf().like_f32(psf().as_f32().unwrap().iter().map(|v| v * 1.01).collect());
        assert!(matches!(richardson_lucy(&obs, &heavy, &StoppingRule::default()), Err(Error::UnnormalizedPsf(_))));
        let bad = StoppingRule { patience: 0, ..StoppingRule::default() };
        assert!(matches!(richardson_lucy(&obs, &psf(), &bad), Err(Error::InvalidParameter(_))));
        let otf = OpticalTransfer::new(&psf(), obs.shape()).unwrap();
        assert!(matches!(rl_step(&obs, &obs, &otf), Err(Error::ShapeMismatch { .. })));
        assert_eq!("ssim_vs_prev".parse::<StopMetric>().unwrap(), StopMetric::SsimVsPrev);
    }

    #[test]
    fn flux_is_conserved() {
        // blobs at least 8 voxels from every face, then blurred
        let core = phantom(vec![8, 24, 24], 7);
        let margin = [8usize; 3];
        let shape: Vec<usize> = core.shape().iter().zip(&margin).map(|(&n, &m)| n + 2 * m).collect();
        let mut v = vec![0.05f32; shape.iter().product()];
        let c = core.as_f32().unwrap();
        for (i, &x) in c.iter().enumerate() {
            let (z, y, xx) = (i / (24 * 24), (i / 24) % 24, i % 24);
            v[((z + 8) * shape[1] + y + 8) * shape[2] + xx + 8] = x;
        }
        let truth = NdImage::from_f32(shape, v).unwrap();
        let obs = fft_convolve(&truth, &psf(), false).unwrap();
        let rule = StoppingRule { max_iters: 10, rel_tol: 1e-300, ..StoppingRule::default() };
        let (est, _) = richardson_lucy(&obs, &psf(), &rule).unwrap();
        let total = |x: &NdImage| x.as_f32().unwrap().iter().map(|&v| v as f64).sum::<f64>();
        let ratio = total(&est) / total(&obs);
        assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn deconvolution_beats_the_blurred_input() {
        use crate::synth::{generate_deconv_phantom, DeconvSpec};
        let spec = DeconvSpec {
            blobs: SynthSpec { shape: vec![16, 48, 48], n_objects: 10, ..DeconvSpec::default().blobs },
            ..DeconvSpec::default()
        };
        let ph = generate_deconv_phantom(&spec).unwrap();
        let rule = StoppingRule { max_iters: 50, patience: 51, ..StoppingRule::default() };
        let (est, trace) = richardson_lucy(&ph.observed, &ph.psf, &rule).unwrap();
        assert_eq!(trace.iterations(), 50);
        assert!(est.as_f32().unwrap().iter().all(|&v| v >= 0.0));
        assert!(si_psnr(&est, &ph.truth).unwrap() > si_psnr(&ph.observed, &ph.truth).unwrap());
    }

    #[test]
    fn backends_trace_alike() {
        let obs = phantom(vec![8, 24, 24], 8);
        let rule = StoppingRule { metric: StopMetric::SiPsnrVsInput, rel_tol: 1e-300, patience: 1, max_iters: 5 };
        let (a, ta) = richardson_lucy(&obs, &psf(), &rule).unwrap();
        let (b, tb) = richardson_lucy(&obs.to_backend(Backend::Accelerated), &psf(), &rule).unwrap();
        assert_eq!(b.backend(), Backend::Accelerated);
        for (x, y) in ta.values().iter().zip(tb.values()) {
            assert!((x - y).abs() < 1e-3);
        }
        for (x, y) in a.as_f32().unwrap().iter().zip(b.as_f32().unwrap()) {
            assert!((x - y).abs() < 1e-4);
        }
    }
}
