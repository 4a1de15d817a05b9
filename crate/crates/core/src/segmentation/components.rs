use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{strides, unravel, Backend, NdImage};
use crate::registry::{dispatch, kernel_pair, ExecutionRegistry};

/// Neighborhood used for labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Connectivity {
    /// Neighbors share a face (6 in 3-D).
    Face,
    /// Neighbors share at least a corner (26 in 3-D).
    Full,
}

impl std::str::FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face" => Ok(Connectivity::Face),
            "full" => Ok(Connectivity::Full),
            other => Err(Error::InvalidParameter(format!("unknown connectivity `{other}`"))),
        }
    }
}

pub type ComponentsKernel = fn(&NdImage, Connectivity) -> Result<NdImage>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("connected_components", Backend::Reference, cc_ref as ComponentsKernel);
    reg.register("connected_components", Backend::Accelerated, cc_acc as ComponentsKernel);
}

kernel_pair!(cc_ref, cc_acc, cc_impl, (mask: &NdImage, connectivity: Connectivity) -> Result<NdImage>);

/// Labels the connected foreground components of a mask (nonzero voxels of any
/// element kind). Ids are consecutive from 1, in order of each component's
/// first voxel in row-major scan order.
pub fn connected_components(mask: &NdImage, connectivity: Connectivity) -> Result<NdImage> {
    dispatch("connected_components", &[mask], |k: ComponentsKernel| k(mask, connectivity))
}

fn cc_impl(mask: &NdImage, connectivity: Connectivity, parallel: bool) -> Result<NdImage> {
    let m = mask.nonzero();
    let (labels, _) = label_mask(&m, mask.shape(), connectivity, parallel);
    Ok(mask.like_labels(labels))
}

/// Scan-order component labels and their count.
pub(crate) fn label_mask(mask: &[bool], shape: &[usize], connectivity: Connectivity, parallel: bool) -> (Vec<u32>, u32) {
    let n = mask.len();
    let mut parent: Vec<u32> = (0..n as u32).collect();
    let back = backward_offsets(shape.len(), connectivity);
    let planes = shape[0];
    let plane = n / planes.max(1);
    if parallel && planes > 1 {
        let slabs = (rayon::current_num_threads() * 4).min(planes);
        let per = planes.div_ceil(slabs);
        parent.par_chunks_mut(per * plane).enumerate().for_each(|(s, chunk)| {
            let z0 = s * per;
            let z1 = (z0 + per).min(planes);
            unite_range(chunk, z0 * plane, mask, shape, &back, z0, z0 * plane..z1 * plane);
        });
        // stitch each slab to the one before it
        let lower: Vec<Vec<isize>> = back.iter().filter(|d| d[0] == -1).cloned().collect();
        for z in (per..planes).step_by(per) {
            unite_range(&mut parent, 0, mask, shape, &lower, 0, z * plane..(z + 1) * plane);
        }
    } else {
        unite_range(&mut parent, 0, mask, shape, &back, 0, 0..n);
    }

    let mut labels = vec![0u32; n];
    let mut next = 0u32;
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let r = find(&mut parent, i as u32, 0) as usize;
        labels[i] = if r == i {
            next += 1;
            next
        } else {
            labels[r]
        };
    }
    (labels, next)
}

/// Offsets that precede the origin in scan order.
fn backward_offsets(nd: usize, connectivity: Connectivity) -> Vec<Vec<isize>> {
    match connectivity {
        Connectivity::Face => (0..nd)
            .map(|a| {
                let mut d = vec![0isize; nd];
                d[a] = -1;
                d
            })
            .collect(),
        Connectivity::Full => {
            let total = 3usize.pow(nd as u32);
            (0..total / 2)
                .map(|mut k| {
                    let mut d = vec![0isize; nd];
                    for a in (0..nd).rev() {
                        d[a] = (k % 3) as isize - 1;
                        k /= 3;
                    }
                    d
                })
                .collect()
        }
    }
}

/// Unions every foreground voxel in `range` with its foreground backward
/// neighbors whose first coordinate is at least `z_min`. `parent` holds the
/// entries for indices starting at `base`.
fn unite_range(
    parent: &mut [u32],
    base: usize,
    mask: &[bool],
    shape: &[usize],
    back: &[Vec<isize>],
    z_min: usize,
    range: std::ops::Range<usize>,
) {
    let nd = shape.len();
    let st = strides(shape);
    let lin: Vec<isize> = back.iter().map(|d| d.iter().zip(&st).map(|(&a, &s)| a * s as isize).sum()).collect();
    let mut coord = vec![0usize; nd];
    for i in range {
        if !mask[i] {
            continue;
        }
        unravel(i, shape, &mut coord);
        for (d, &l) in back.iter().zip(&lin) {
            let ok = (0..nd).all(|a| {
                let c = coord[a] as isize + d[a];
                c >= 0 && c < shape[a] as isize
            }) && (coord[0] as isize + d[0]) as usize >= z_min;
            if ok {
                let j = (i as isize + l) as usize;
                if mask[j] {
                    union(parent, i as u32, j as u32, base as u32);
                }
            }
        }
    }
}

fn find(parent: &mut [u32], mut x: u32, base: u32) -> u32 {
    while parent[(x - base) as usize] != x {
        let p = parent[(x - base) as usize];
        parent[(x - base) as usize] = parent[(p - base) as usize];
        x = p;
    }
    x
}

/// Links two sets, keeping the smaller index as the root.
fn union(parent: &mut [u32], a: u32, b: u32, base: u32) {
    let (ra, rb) = (find(parent, a, base), find(parent, b, base));
    if ra < rb {
        parent[(rb - base) as usize] = ra;
    } else if rb < ra {
        parent[(ra - base) as usize] = rb;
    }
}
