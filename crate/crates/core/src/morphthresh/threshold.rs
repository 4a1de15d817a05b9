use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Backend, NdImage};
use crate::registry::{dispatch, kernel_pair, ExecutionRegistry};

pub type OtsuKernel = fn(&NdImage, usize) -> Result<f32>;
pub type MultiOtsuKernel = fn(&NdImage, usize, usize) -> Result<Vec<f32>>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("otsu_threshold", Backend::Reference, otsu_ref as OtsuKernel);
    reg.register("otsu_threshold", Backend::Accelerated, otsu_acc as OtsuKernel);
    reg.register("multi_otsu", Backend::Reference, multi_otsu_ref as MultiOtsuKernel);
    reg.register("multi_otsu", Backend::Accelerated, multi_otsu_acc as MultiOtsuKernel);
}

kernel_pair!(otsu_ref, otsu_acc, otsu_impl, (img: &NdImage, bins: usize) -> Result<f32>);
kernel_pair!(multi_otsu_ref, multi_otsu_acc, multi_otsu_impl, (img: &NdImage, classes: usize, bins: usize) -> Result<Vec<f32>>);

/// Equal-width histogram over `[min, max]` of an image.
///
/// Bin `i` covers `[edge(i), edge(i + 1))` with the last bin closed on the
/// right. Bin membership is decided against the same `f32` edges that
/// thresholds are reported as, so `v >= edge(i)` holds exactly for every
/// value counted in bin `i` or above.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub min: f32,
    pub max: f32,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn of(values: &[f32], bins: usize) -> Result<Self> {
        histogram(values, bins, false)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Left edge of bin `i`.
    pub fn edge(&self, i: usize) -> f32 {
        let w = (self.max as f64 - self.min as f64) / self.bins() as f64;
        (self.min as f64 + i as f64 * w) as f32
    }

    fn bin_of(&self, v: f32) -> usize {
        let n = self.bins();
        let w = (self.max as f64 - self.min as f64) / n as f64;
        let mut i = (((v as f64 - self.min as f64) / w) as usize).min(n - 1);
        while i > 0 && v < self.edge(i) {
            i -= 1;
        }
        while i + 1 < n && v >= self.edge(i + 1) {
            i += 1;
        }
        i
    }
}

fn histogram(values: &[f32], bins: usize, parallel: bool) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 bins, got {bins}")));
    }
    let fold = |(lo, hi): (f32, f32), &v: &f32| if v.is_nan() { (lo, hi) } else { (lo.min(v), hi.max(v)) };
    let (min, max) = if parallel {
        values
            .par_iter()
            .fold(|| (f32::INFINITY, f32::NEG_INFINITY), fold)
            .reduce(|| (f32::INFINITY, f32::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1)))
    } else {
        values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), fold)
    };
    if !(min < max) {
        return Err(Error::DegenerateImage("image has fewer than two distinct values".into()));
    }
    let mut h = Histogram { min, max, counts: vec![0; bins] };
    let count = |chunk: &[f32]| {
        let mut c = vec![0u64; bins];
        for &v in chunk.iter().filter(|v| !v.is_nan()) {
            c[h.bin_of(v)] += 1;
        }
        c
    };
    h.counts = if parallel {
        // per-chunk partials merged in chunk order
        let parts: Vec<Vec<u64>> = values.par_chunks(1 << 16).map(count).collect();
        parts.into_iter().fold(vec![0u64; bins], |mut acc, p| {
            acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
            acc
        })
    } else {
        count(values)
    };
    Ok(h)
}

/// Threshold maximizing the between-class variance of a two-class split.
///
/// Candidates are the left edges of bins `1..bins`; voxels `>= threshold` form
/// the upper class. Ties resolve to the lowest candidate.
pub fn otsu_threshold(img: &NdImage, bins: usize) -> Result<f32> {
    dispatch("otsu_threshold", &[img], |k: OtsuKernel| k(img, bins))
}

/// `classes - 1` strictly increasing thresholds maximizing the total
/// between-class variance, found by exhaustive search over bin-edge tuples.
pub fn multi_otsu(img: &NdImage, classes: usize, bins: usize) -> Result<Vec<f32>> {
    dispatch("multi_otsu", &[img], |k: MultiOtsuKernel| k(img, classes, bins))
}

fn otsu_impl(img: &NdImage, bins: usize, parallel: bool) -> Result<f32> {
    Ok(multi_otsu_impl(img, 2, bins, parallel)?[0])
}

fn multi_otsu_impl(img: &NdImage, classes: usize, bins: usize, parallel: bool) -> Result<Vec<f32>> {
    if classes < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 classes, got {classes}")));
    }
    let h = histogram(&img.values_f32(), bins, parallel)?;
    let cuts = best_cuts(&h.counts, classes)
        .ok_or_else(|| Error::DegenerateImage(format!("fewer than {classes} occupied histogram bins")))?;
    Ok(cuts.into_iter().map(|c| h.edge(c)).collect())
}

/// Cut indices `0 < c_1 < ... < c_{k-1} < bins` maximizing
/// `sum_k S_k^2 / W_k` (class mass `W` and first moment `S` in bin units),
/// which differs from the between-class variance by a constant. Every class
/// must be nonempty. Tuples are visited in lexicographic order and only a
/// strict improvement replaces the incumbent.
pub(crate) fn best_cuts(counts: &[u64], classes: usize) -> Option<Vec<usize>> {
    let n = counts.len();
    // prefix sums: w[i], s[i] cover bins 0..i
    let mut w = vec![0.0f64; n + 1];
    let mut s = vec![0.0f64; n + 1];
    for (i, &c) in counts.iter().enumerate() {
        w[i + 1] = w[i] + c as f64;
        s[i + 1] = s[i] + c as f64 * i as f64;
    }
    let term = |a: usize, b: usize| -> Option<f64> {
        let m = w[b] - w[a];
        (m > 0.0).then(|| (s[b] - s[a]).powi(2) / m)
    };

    struct Search<'a> {
        n: usize,
        k: usize,
        term: &'a dyn Fn(usize, usize) -> Option<f64>,
        cuts: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }
    fn visit(st: &mut Search, start: usize, acc: f64) {
        let depth = st.cuts.len();
        let lo = st.cuts.last().copied().unwrap_or(0);
        if depth == st.k - 1 {
            if let Some(t) = (st.term)(lo, st.n) {
                let total = acc + t;
                if st.best.as_ref().is_none_or(|(b, _)| total > *b) {
                    st.best = Some((total, st.cuts.clone()));
                }
            }
            return;
        }
        let remaining = st.k - 1 - depth;
        for c in start..=st.n - remaining {
            if let Some(t) = (st.term)(lo, c) {
                st.cuts.push(c);
                visit(st, c + 1, acc + t);
                st.cuts.pop();
            }
        }
    }
    if classes > n {
        return None;
    }
    let mut st = Search { n, k: classes, term: &term, cuts: Vec::new(), best: None };
    visit(&mut st, 1, 0.0);
    st.best.map(|(_, c)| c)
}
