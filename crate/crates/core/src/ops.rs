//! Pointwise arithmetic and intensity normalization.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Backend, NdImage};
use crate::registry::{dispatch, ExecutionRegistry};

/// Denominator guard for division and ratio steps.
pub const DIV_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    /// Denominators with magnitude below [`DIV_EPSILON`] are replaced by it.
    Div,
    Max,
    Min,
}

#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Image(&'a NdImage),
    Scalar(f32),
}

impl BinaryOp {
    #[inline]
    pub fn apply(self, a: f32, b: f32) -> f32 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => (a as f64 / guard(b as f64)) as f32,
            BinaryOp::Max => a.max(b),
            BinaryOp::Min => a.min(b),
        }
    }
}

#[inline]
pub(crate) fn guard(d: f64) -> f64 {
    if d.abs() < DIV_EPSILON {
        DIV_EPSILON
    } else {
        d
    }
}

pub type NormalizeKernel = fn(&NdImage) -> Result<NdImage>;
pub type ElementwiseKernel = fn(BinaryOp, &NdImage, Operand<'_>) -> Result<NdImage>;
pub type ThresholdKernel = fn(&NdImage, f32) -> Result<NdImage>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("normalize_minmax", Backend::Reference, normalize_ref as NormalizeKernel);
    reg.register("normalize_minmax", Backend::Accelerated, normalize_acc as NormalizeKernel);
    reg.register("elementwise", Backend::Reference, elementwise_ref as ElementwiseKernel);
    reg.register("elementwise", Backend::Accelerated, elementwise_acc as ElementwiseKernel);
    reg.register("threshold", Backend::Reference, threshold_ref as ThresholdKernel);
    reg.register("threshold", Backend::Accelerated, threshold_acc as ThresholdKernel);
}

fn normalize_ref(img: &NdImage) -> Result<NdImage> {
    normalize_impl(img, false)
}
fn normalize_acc(img: &NdImage) -> Result<NdImage> {
    normalize_impl(img, true)
}
fn elementwise_ref(op: BinaryOp, a: &NdImage, b: Operand<'_>) -> Result<NdImage> {
    elementwise_impl(op, a, b, false)
}
fn elementwise_acc(op: BinaryOp, a: &NdImage, b: Operand<'_>) -> Result<NdImage> {
    elementwise_impl(op, a, b, true)
}
fn threshold_ref(img: &NdImage, level: f32) -> Result<NdImage> {
    threshold_impl(img, level, false)
}
fn threshold_acc(img: &NdImage, level: f32) -> Result<NdImage> {
    threshold_impl(img, level, true)
}

/// Affine map of the intensity range onto `[0, 1]`; constant images map to 0.
pub fn normalize_minmax(img: &NdImage) -> Result<NdImage> {
    dispatch("normalize_minmax", &[img], |k: NormalizeKernel| k(img))
}

/// Pointwise `a op b`; `b` is an image of the same shape or a scalar.
pub fn elementwise(op: BinaryOp, a: &NdImage, b: Operand<'_>) -> Result<NdImage> {
    match b {
        Operand::Image(bi) => dispatch("elementwise", &[a, bi], |k: ElementwiseKernel| k(op, a, b)),
        Operand::Scalar(_) => dispatch("elementwise", &[a], |k: ElementwiseKernel| k(op, a, b)),
    }
}

/// Boolean mask of voxels with value `>= level`.
pub fn threshold(img: &NdImage, level: f32) -> Result<NdImage> {
    dispatch("threshold", &[img], |k: ThresholdKernel| k(img, level))
}

pub(crate) fn min_max(v: &[f32], parallel: bool) -> (f32, f32) {
    let fold = |(lo, hi): (f32, f32), &x: &f32| (lo.min(x), hi.max(x));
    let init = (f32::INFINITY, f32::NEG_INFINITY);
    if parallel {
        v.par_iter()
            .fold(|| init, fold)
            .reduce(|| init, |a, b| (a.0.min(b.0), a.1.max(b.1)))
    } else {
        v.iter().fold(init, fold)
    }
}

fn normalize_impl(img: &NdImage, parallel: bool) -> Result<NdImage> {
    let v = img.values_f32();
    let (lo, hi) = min_max(&v, parallel);
    let range = hi as f64 - lo as f64;
    let map = |x: f32| if range > 0.0 { ((x as f64 - lo as f64) / range) as f32 } else { 0.0 };
    let out: Vec<f32> = if parallel { v.par_iter().map(|&x| map(x)).collect() } else { v.iter().map(|&x| map(x)).collect() };
    Ok(img.like_f32(out))
}

fn elementwise_impl(op: BinaryOp, a: &NdImage, b: Operand<'_>, parallel: bool) -> Result<NdImage> {
    let av = a.values_f32();
    let out: Vec<f32> = match b {
        Operand::Scalar(s) => {
            if parallel {
                av.par_iter().map(|&x| op.apply(x, s)).collect()
            } else {
                av.iter().map(|&x| op.apply(x, s)).collect()
            }
        }
        Operand::Image(bi) => {
            if bi.shape() != a.shape() {
                return Err(Error::ShapeMismatch { expected: a.shape().to_vec(), found: bi.shape().to_vec() });
            }
            let bv = bi.values_f32();
            if parallel {
                av.par_iter().zip(bv.par_iter()).map(|(&x, &y)| op.apply(x, y)).collect()
            } else {
                av.iter().zip(bv.iter()).map(|(&x, &y)| op.apply(x, y)).collect()
            }
        }
    };
    Ok(a.like_f32(out))
}

fn threshold_impl(img: &NdImage, level: f32, parallel: bool) -> Result<NdImage> {
    let v = img.values_f32();
    let out: Vec<bool> =
        if parallel { v.par_iter().map(|&x| x >= level).collect() } else { v.iter().map(|&x| x >= level).collect() };
    Ok(img.like_mask(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(v: &[f32]) -> NdImage {
        NdImage::from_f32(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        for b in Backend::ALL {
            let out = normalize_minmax(&f(&[2.0, 4.0, 6.0]).to_backend(b)).unwrap();
            assert_eq!(out.as_f32().unwrap(), &[0.0, 0.5, 1.0]);
            assert_eq!(out.backend(), b);
            let flat = normalize_minmax(&f(&[3.0; 4]).to_backend(b)).unwrap();
            assert_eq!(flat.as_f32().unwrap(), &[0.0; 4]);
        }
        let u = NdImage::from_u16(vec![2], vec![0, 65535]).unwrap();
        assert_eq!(normalize_minmax(&u).unwrap().as_f32().unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn elementwise_examples() {
        let a = f(&[1.0, 5.0]);
        let m = elementwise(BinaryOp::Max, &a, Operand::Image(&f(&[4.0, 2.0]))).unwrap();
        assert_eq!(m.as_f32().unwrap(), &[4.0, 5.0]);

        let d = elementwise(BinaryOp::Div, &f(&[1.0, 1.0]), Operand::Image(&f(&[0.0, 2.0]))).unwrap();
        assert_eq!(d.as_f32().unwrap(), &[1e12_f32, 0.5]);

        let id = elementwise(BinaryOp::Mul, &a, Operand::Scalar(1.0)).unwrap();
        assert_eq!(id, a);
    }

    #[test]
    fn elementwise_errors() {
        let a = f(&[1.0, 2.0]);
        assert!(matches!(
            elementwise(BinaryOp::Add, &a, Operand::Image(&f(&[1.0]))),
            Err(Error::ShapeMismatch { .. })
        ));
        let acc = a.to_backend(Backend::Accelerated);
        assert!(matches!(elementwise(BinaryOp::Add, &a, Operand::Image(&acc)), Err(Error::MixedBackends { .. })));
    }

    #[test]
    fn threshold_is_inclusive() {
        let m = threshold(&f(&[0.1, 0.5, 0.9]), 0.5).unwrap();
        assert_eq!(m.as_mask().unwrap(), &[false, true, true]);
    }
}
