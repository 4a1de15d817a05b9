use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::StructuringElement;
use crate::image::{strides, unravel, Backend, NdImage};
use crate::registry::{dispatch, kernel_pair, ExecutionRegistry};

pub type ErodeLabelsKernel = fn(&NdImage, &StructuringElement) -> Result<NdImage>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("erode_labels", Backend::Reference, erode_ref as ErodeLabelsKernel);
    reg.register("erode_labels", Backend::Accelerated, erode_acc as ErodeLabelsKernel);
}

kernel_pair!(erode_ref, erode_acc, erode_impl, (labels: &NdImage, se: &StructuringElement) -> Result<NdImage>);

/// Erodes every label separately: a voxel keeps its id only when the whole
/// footprint around it lies inside the volume and carries the same id.
/// Touching labels therefore pull apart instead of merging.
pub fn erode_labels(labels: &NdImage, se: &StructuringElement) -> Result<NdImage> {
    dispatch("erode_labels", &[labels], |k: ErodeLabelsKernel| k(labels, se))
}

fn erode_impl(labels: &NdImage, se: &StructuringElement, parallel: bool) -> Result<NdImage> {
    if se.ndim() != labels.ndim() {
        return Err(Error::InvalidParameter(format!(
            "{}-D structuring element on a {}-D label image",
            se.ndim(),
            labels.ndim()
        )));
    }
    let l = labels.as_labels()?;
    let shape = labels.shape();
    let nd = shape.len();
    let lin = se.linear_offsets(&strides(shape));
    let reach: Vec<usize> = (0..nd).map(|a| se.reach(a)).collect();
    let keep = |i: usize, coord: &mut [usize]| -> u32 {
        let id = l[i];
        if id == 0 {
            return 0;
        }
        unravel(i, shape, coord);
        // a footprint that leaves the volume erodes the voxel
        let interior = (0..nd).all(|a| coord[a] >= reach[a] && coord[a] + reach[a] < shape[a]);
        if interior && lin.iter().all(|&o| l[(i as isize + o) as usize] == id) {
            id
        } else {
            0
        }
    };
    let out: Vec<u32> = if parallel {
        (0..l.len()).into_par_iter().map_init(|| vec![0usize; nd], |c, i| keep(i, c)).collect()
    } else {
        let mut c = vec![0usize; nd];
        (0..l.len()).map(|i| keep(i, &mut c)).collect()
    };
    Ok(labels.like_labels(out))
}
