use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::image::{strides, unravel, Backend, NdImage};
use crate::registry::{dispatch, ExecutionRegistry};

pub type WatershedKernel = fn(&NdImage, &NdImage, Option<&NdImage>) -> Result<NdImage>;

/// The flood is inherently sequential, so only a reference kernel exists;
/// accelerated callers go through the registry fallback.
pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("watershed", Backend::Reference, watershed_impl as WatershedKernel);
}

/// Seeded priority flood over face neighbors.
///
/// Seed voxels are queued by ascending label id (scan order within a label).
/// The queue pops the lowest landscape value first and, among equal values,
/// the voxel queued first. A popped voxel hands its label to every unlabeled
/// in-mask neighbor. Voxels outside `mask`, or not reachable from a seed,
/// stay 0.
pub fn watershed(landscape: &NdImage, seeds: &NdImage, mask: Option<&NdImage>) -> Result<NdImage> {
    let mut images = vec![landscape, seeds];
    images.extend(mask);
    dispatch("watershed", &images, |k: WatershedKernel| k(landscape, seeds, mask))
}

/// Integer key ordered like `f32::total_cmp`.
fn order_key(v: f32) -> u32 {
    let b = v.to_bits();
    if b & 0x8000_0000 != 0 {
        !b
    } else {
        b | 0x8000_0000
    }
}

fn watershed_impl(landscape: &NdImage, seeds: &NdImage, mask: Option<&NdImage>) -> Result<NdImage> {
    let shape = landscape.shape();
    seeds.require_shape(shape)?;
    let s = seeds.as_labels()?;
    let inside: Vec<bool> = match mask {
        Some(m) => {
            m.require_shape(shape)?;
            m.as_mask()?.to_vec()
        }
        None => vec![true; s.len()],
    };
    let v = landscape.values_f32();

    let mut order: Vec<(u32, usize)> = s.iter().enumerate().filter(|(_, &l)| l != 0).map(|(i, &l)| (l, i)).collect();
    if let Some(&(label, index)) = order.iter().find(|&&(_, i)| !inside[i]) {
        return Err(Error::SeedOutsideMask { label, index });
    }
    order.sort_unstable();

    let nd = shape.len();
    let st = strides(shape);
    let mut out = s.to_vec();
    let mut heap = BinaryHeap::with_capacity(order.len());
    let mut age = 0u64;
    for &(_, i) in &order {
        heap.push(Reverse((order_key(v[i]), age, i)));
        age += 1;
    }
    let mut coord = vec![0usize; nd];
    while let Some(Reverse((_, _, i))) = heap.pop() {
        let label = out[i];
        unravel(i, shape, &mut coord);
        for a in 0..nd {
            for up in [false, true] {
                let j = if up {
                    if coord[a] + 1 >= shape[a] {
                        continue;
                    }
                    i + st[a]
                } else {
                    if coord[a] == 0 {
                        continue;
                    }
                    i - st[a]
                };
                if inside[j] && out[j] == 0 {
                    out[j] = label;
                    heap.push(Reverse((order_key(v[j]), age, j)));
                    age += 1;
                }
            }
        }
    }
    Ok(landscape.like_labels(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{connected_components, Connectivity};
    use proptest::prelude::*;

    fn labels(v: Vec<u32>) -> NdImage {
        NdImage::from_labels(vec![v.len()], v).unwrap()
    }

    #[test]
    fn flat_bar_splits_at_midpoint() {
        let land = NdImage::zeros(vec![7]).unwrap();
        let out = watershed(&land, &labels(vec![1, 0, 0, 0, 0, 0, 2]), None).unwrap();
        // the midpoint is reached by both fronts in the same round; label 1 was queued first
        assert_eq!(out.as_labels().unwrap(), &[1, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn ridge_goes_to_first_seed() {
        let land = NdImage::from_f32(vec![3], vec![0.0, 1.0, 0.0]).unwrap();
        let out = watershed(&land, &labels(vec![1, 0, 2]), None).unwrap();
        assert_eq!(out.as_labels().unwrap(), &[1, 1, 2]);
        let basins = NdImage::from_f32(vec![7], vec![0.0, 1.0, 2.0, 5.0, 1.0, 0.5, 0.0]).unwrap();
        let out = watershed(&basins, &labels(vec![1, 0, 0, 0, 0, 0, 2]), None).unwrap();
        assert_eq!(out.as_labels().unwrap(), &[1, 1, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn single_seed_fills_mask_and_respects_it() {
        let land = NdImage::from_f32(vec![2, 3], vec![3.0, 1.0, 2.0, 0.0, 5.0, 1.0]).unwrap();
        let mask = NdImage::from_mask(vec![2, 3], vec![true, true, false, true, true, true]).unwrap();
        let seeds = NdImage::from_labels(vec![2, 3], vec![0, 0, 0, 0, 0, 4]).unwrap();
        let out = watershed(&land, &seeds, Some(&mask)).unwrap();
        assert_eq!(out.as_labels().unwrap(), &[4, 4, 0, 4, 4, 4]);
        let bad = NdImage::from_labels(vec![2, 3], vec![0, 0, 7, 0, 0, 0]).unwrap();
        assert!(matches!(watershed(&land, &bad, Some(&mask)), Err(Error::SeedOutsideMask { label: 7, index: 2 })));
    }

    #[test]
    fn accelerated_input_falls_back() {
        let land = NdImage::zeros(vec![5]).unwrap().to_backend(Backend::Accelerated);
        let seeds = labels(vec![0, 3, 0, 0, 0]).to_backend(Backend::Accelerated);
        let out = watershed(&land, &seeds, None).unwrap();
        assert_eq!(out.backend(), Backend::Accelerated);
        assert_eq!(out.as_labels().unwrap(), &[3; 5]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn labels_come_from_seeds_and_regions_are_connected(
            land in prop::collection::vec(0.0f32..1.0, 6 * 7 * 8),
            picks in prop::collection::vec(0usize..6 * 7 * 8, 1..6),
        ) {
            let shape = vec![6, 7, 8];
            let mut s = vec![0u32; 6 * 7 * 8];
            for (k, &p) in picks.iter().enumerate() {
                s[p] = k as u32 + 1;
            }
            let seeds = NdImage::from_labels(shape.clone(), s.clone()).unwrap();
            let out = watershed(&NdImage::from_f32(shape.clone(), land).unwrap(), &seeds, None).unwrap();
            let o = out.as_labels().unwrap();
            for (i, &l) in s.iter().enumerate() {
                if l != 0 {
                    prop_assert_eq!(o[i], l);
                }
            }
            prop_assert!(o.iter().all(|&l| l != 0 && s.contains(&l)));
            for l in 1..=picks.len() as u32 {
                if !s.contains(&l) {
                    continue;
                }
                let region = NdImage::from_mask(shape.clone(), o.iter().map(|&x| x == l).collect()).unwrap();
                prop_assert_eq!(connected_components(&region, Connectivity::Face).unwrap().label_count().unwrap(), 1);
            }
        }
    }
}
