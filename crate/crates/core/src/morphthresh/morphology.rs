use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::StructuringElement;
use crate::image::{strides, unravel, Backend, NdImage};
use crate::registry::{dispatch, kernel_pair, ExecutionRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MorphOp {
    Erode,
    Dilate,
    Open,
    Close,
}

impl std::str::FromStr for MorphOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erode" => Ok(MorphOp::Erode),
            "dilate" => Ok(MorphOp::Dilate),
            "open" => Ok(MorphOp::Open),
            "close" => Ok(MorphOp::Close),
            other => Err(Error::InvalidParameter(format!("unknown morphology op `{other}`"))),
        }
    }
}

pub type MorphologyKernel = fn(&NdImage, &StructuringElement, MorphOp) -> Result<NdImage>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("binary_morphology", Backend::Reference, morph_ref as MorphologyKernel);
    reg.register("binary_morphology", Backend::Accelerated, morph_acc as MorphologyKernel);
}

kernel_pair!(morph_ref, morph_acc, morph_impl, (mask: &NdImage, se: &StructuringElement, op: MorphOp) -> Result<NdImage>);

/// Binary erosion, dilation, opening or closing of a boolean mask.
///
/// Dilation sets `x` when some `x - b` is set for an offset `b` of `se`;
/// erosion keeps `x` when every `x + b` is set. Voxels outside the volume
/// count as background for both, so erosion eats into the border.
pub fn binary_morphology(mask: &NdImage, se: &StructuringElement, op: MorphOp) -> Result<NdImage> {
    dispatch("binary_morphology", &[mask], |k: MorphologyKernel| k(mask, se, op))
}

fn morph_impl(mask: &NdImage, se: &StructuringElement, op: MorphOp, parallel: bool) -> Result<NdImage> {
    if se.ndim() != mask.ndim() {
        return Err(Error::InvalidParameter(format!(
            "{}-D structuring element on a {}-D mask",
            se.ndim(),
            mask.ndim()
        )));
    }
    let m = mask.as_mask()?;
    let shape = mask.shape();
    let pass = |src: &[bool], erode: bool| -> Vec<bool> {
        if parallel {
            pass_rows(src, shape, se, erode)
        } else {
            pass_direct(src, shape, se, erode)
        }
    };
    let out = match op {
        MorphOp::Erode => pass(m, true),
        MorphOp::Dilate => pass(m, false),
        MorphOp::Open => pass(&pass(m, true), false),
        MorphOp::Close => pass(&pass(m, false), true),
    };
    Ok(mask.like_mask(out))
}

/// Per-voxel scan of the footprint with explicit bounds checks.
fn pass_direct(src: &[bool], shape: &[usize], se: &StructuringElement, erode: bool) -> Vec<bool> {
    let nd = shape.len();
    let st = strides(shape);
    let offs: Vec<&[isize]> = se.offsets().collect();
    let sign = if erode { 1 } else { -1 };
    let mut coord = vec![0usize; nd];
    let mut out = vec![false; src.len()];
    for (i, o) in out.iter_mut().enumerate() {
        unravel(i, shape, &mut coord);
        let hit = |off: &&[isize]| {
            let mut j = 0isize;
            for a in 0..nd {
                let c = coord[a] as isize + sign * off[a];
                if c < 0 || c >= shape[a] as isize {
                    return false;
                }
                j += c * st[a] as isize;
            }
            src[j as usize]
        };
        *o = if erode { offs.iter().all(hit) } else { offs.iter().any(hit) };
    }
    out
}

/// Row-parallel pass. The footprint is split into contiguous last-axis runs,
/// one per leading-axis offset, and each run is answered from a prefix count
/// of set voxels along the source row.
fn pass_rows(src: &[bool], shape: &[usize], se: &StructuringElement, erode: bool) -> Vec<bool> {
    let nd = shape.len();
    let w = shape[nd - 1];
    let lead = &shape[..nd - 1];
    let lead_strides = strides(lead);
    let sign: isize = if erode { 1 } else { -1 };
    let mut runs: BTreeMap<Vec<isize>, (isize, isize)> = BTreeMap::new();
    for o in se.offsets() {
        let prefix: Vec<isize> = o[..nd - 1].iter().map(|&d| sign * d).collect();
        let x = sign * o[nd - 1];
        let e = runs.entry(prefix).or_insert((x, x));
        e.0 = e.0.min(x);
        e.1 = e.1.max(x);
    }
    // prefix[r * (w + 1) + x] = set voxels in row r before column x
    let mut prefix = vec![0u32; src.len() / w * (w + 1)];
    prefix.par_chunks_mut(w + 1).zip(src.par_chunks(w)).for_each(|(p, row)| {
        for x in 0..w {
            p[x + 1] = p[x] + row[x] as u32;
        }
    });
    let wi = w as isize;
    let mut out = vec![false; src.len()];
    out.par_chunks_mut(w).enumerate().for_each(|(row, orow)| {
        let mut p = vec![0usize; nd - 1];
        unravel(row, lead, &mut p);
        let rows: Vec<Option<(&[u32], isize, isize)>> = runs
            .iter()
            .map(|(d, &(lo, hi))| {
                let mut r = 0usize;
                for a in 0..nd - 1 {
                    let c = p[a] as isize + d[a];
                    if c < 0 || c >= lead[a] as isize {
                        return None;
                    }
                    r += c as usize * lead_strides[a];
                }
                Some((&prefix[r * (w + 1)..(r + 1) * (w + 1)], lo, hi))
            })
            .collect();
        if erode && rows.iter().any(|r| r.is_none()) {
            return; // part of the footprint lies outside the volume
        }
        let rows: Vec<(&[u32], isize, isize)> = rows.into_iter().flatten().collect();
        for (x, o) in orow.iter_mut().enumerate() {
            let x = x as isize;
            *o = if erode {
                rows.iter().all(|&(pr, lo, hi)| {
                    let (a, b) = (x + lo, x + hi);
                    a >= 0 && b < wi && (pr[(b + 1) as usize] - pr[a as usize]) as isize == b - a + 1
                })
            } else {
                rows.iter().any(|&(pr, lo, hi)| {
                    let (a, b) = ((x + lo).max(0), (x + hi).min(wi - 1));
                    a <= b && pr[(b + 1) as usize] > pr[a as usize]
                })
            };
        }
    });
    out
}
