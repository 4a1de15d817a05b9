use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::StructuringElement;
use crate::image::{strides, unravel, Backend, NdImage};
use crate::registry::{dispatch, kernel_pair, ExecutionRegistry};
use crate::segmentation::components::{label_mask, Connectivity};

pub type SeedsKernel = fn(&NdImage, &StructuringElement) -> Result<NdImage>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("find_seeds", Backend::Reference, seeds_ref as SeedsKernel);
    reg.register("find_seeds", Backend::Accelerated, seeds_acc as SeedsKernel);
}

kernel_pair!(seeds_ref, seeds_acc, seeds_impl, (distance: &NdImage, se: &StructuringElement) -> Result<NdImage>);

/// Labels the maxima of a nonnegative field.
///
/// A voxel is a candidate when its value is positive and no in-bounds voxel
/// under `se` is larger. Candidates are grouped into seeds by full
/// connectivity and numbered in scan order, so a flat plateau yields a single
/// seed.
pub fn find_seeds(distance: &NdImage, se: &StructuringElement) -> Result<NdImage> {
    dispatch("find_seeds", &[distance], |k: SeedsKernel| k(distance, se))
}

fn seeds_impl(distance: &NdImage, se: &StructuringElement, parallel: bool) -> Result<NdImage> {
    if se.ndim() != distance.ndim() {
        return Err(Error::InvalidParameter(format!(
            "{}-D structuring element on a {}-D field",
            se.ndim(),
            distance.ndim()
        )));
    }
    let v = distance.values_f32();
    let shape = distance.shape();
    let nd = shape.len();
    let st = strides(shape);
    let offs: Vec<&[isize]> = se.offsets().collect();
    let lin = se.linear_offsets(&st);
    let reach: Vec<usize> = (0..nd).map(|a| se.reach(a)).collect();

    let is_peak = |i: usize, coord: &mut [usize]| -> bool {
        let x = v[i];
        if !(x > 0.0) {
            return false;
        }
        unravel(i, shape, coord);
        let interior = (0..nd).all(|a| coord[a] >= reach[a] && coord[a] + reach[a] < shape[a]);
        if interior {
            return lin.iter().all(|&l| v[(i as isize + l) as usize] <= x);
        }
        offs.iter().zip(&lin).all(|(off, &l)| {
            let inside = (0..nd).all(|a| {
                let c = coord[a] as isize + off[a];
                c >= 0 && c < shape[a] as isize
            });
            !inside || v[(i as isize + l) as usize] <= x
        })
    };
    let candidates: Vec<bool> = if parallel {
        (0..v.len()).into_par_iter().map_init(|| vec![0usize; nd], |c, i| is_peak(i, c)).collect()
    } else {
        let mut c = vec![0usize; nd];
        (0..v.len()).map(|i| is_peak(i, &mut c)).collect()
    };
    let (labels, _) = label_mask(&candidates, shape, Connectivity::Full, parallel);
    Ok(distance.like_labels(labels))
}
