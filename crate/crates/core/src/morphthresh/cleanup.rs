use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::Result;
use crate::image::{unravel, Backend, NdImage};
use crate::registry::{dispatch, kernel_pair, ExecutionRegistry};
use crate::segmentation::{label_mask, Connectivity};

pub type FillHolesKernel = fn(&NdImage, Option<usize>) -> Result<NdImage>;
pub type RemoveSmallKernel = fn(&NdImage, usize) -> Result<NdImage>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("fill_holes", Backend::Reference, fill_ref as FillHolesKernel);
    reg.register("fill_holes", Backend::Accelerated, fill_acc as FillHolesKernel);
    reg.register("remove_small_objects", Backend::Reference, remove_ref as RemoveSmallKernel);
    reg.register("remove_small_objects", Backend::Accelerated, remove_acc as RemoveSmallKernel);
}

kernel_pair!(fill_ref, fill_acc, fill_impl, (mask: &NdImage, max_hole_size: Option<usize>) -> Result<NdImage>);
kernel_pair!(remove_ref, remove_acc, remove_impl, (labels: &NdImage, min_size: usize) -> Result<NdImage>);

/// Fills background components (face connectivity) that do not touch the
/// volume border and hold at most `max_hole_size` voxels. `None` fills every
/// enclosed component.
pub fn fill_holes(mask: &NdImage, max_hole_size: Option<usize>) -> Result<NdImage> {
    dispatch("fill_holes", &[mask], |k: FillHolesKernel| k(mask, max_hole_size))
}

/// Zeroes every label with fewer than `min_size` voxels; survivors keep
/// their ids.
pub fn remove_small_objects(labels: &NdImage, min_size: usize) -> Result<NdImage> {
    dispatch("remove_small_objects", &[labels], |k: RemoveSmallKernel| k(labels, min_size))
}

fn fill_impl(mask: &NdImage, max_hole_size: Option<usize>, parallel: bool) -> Result<NdImage> {
    let m = mask.as_mask()?;
    let shape = mask.shape();
    let background: Vec<bool> = m.iter().map(|&v| !v).collect();
    let (ids, count) = label_mask(&background, shape, Connectivity::Face, parallel);
    let sizes = label_sizes(&ids, count as usize, parallel);

    let mut enclosed = vec![true; count as usize + 1];
    enclosed[0] = false;
    let mut coord = vec![0usize; shape.len()];
    for (i, &id) in ids.iter().enumerate() {
        if id != 0 && enclosed[id as usize] {
            unravel(i, shape, &mut coord);
            if coord.iter().zip(shape).any(|(&c, &n)| c == 0 || c + 1 == n) {
                enclosed[id as usize] = false;
            }
        }
    }
    let fill: Vec<bool> = (0..=count as usize)
        .map(|id| enclosed[id] && max_hole_size.is_none_or(|max| sizes[id] <= max))
        .collect();
    let out: Vec<bool> = m.iter().zip(&ids).map(|(&v, &id)| v || fill[id as usize]).collect();
    Ok(mask.like_mask(out))
}

/// Voxel count per id for ids in `0..=count`.
fn label_sizes(ids: &[u32], count: usize, parallel: bool) -> Vec<usize> {
    let tally = |chunk: &[u32]| {
        let mut c = vec![0usize; count + 1];
        chunk.iter().for_each(|&id| c[id as usize] += 1);
        c
    };
    if parallel {
        ids.par_chunks(1 << 18).map(tally).reduce(
            || vec![0usize; count + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
    } else {
        tally(ids)
    }
}

fn remove_impl(labels: &NdImage, min_size: usize, parallel: bool) -> Result<NdImage> {
    let l = labels.as_labels()?;
    if min_size == 0 {
        return Ok(labels.clone());
    }
    let max = l.iter().copied().max().unwrap_or(0) as usize;
    let out: Vec<u32> = if max <= l.len() {
        let sizes = label_sizes(l, max, parallel);
        let keep = |id: u32| sizes[id as usize] >= min_size;
        if parallel {
            l.par_iter().map(|&id| if keep(id) { id } else { 0 }).collect()
        } else {
            l.iter().map(|&id| if keep(id) { id } else { 0 }).collect()
        }
    } else {
        // sparse ids
        let mut sizes: HashMap<u32, usize> = HashMap::new();
        l.iter().for_each(|&id| *sizes.entry(id).or_default() += 1);
        l.iter().map(|&id| if sizes[&id] >= min_size { id } else { 0 }).collect()
    };
    Ok(labels.like_labels(out))
}
