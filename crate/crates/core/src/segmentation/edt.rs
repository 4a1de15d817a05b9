use crate::error::Result;
use crate::image::{Backend, NdImage};
use crate::lines::map_lines;
use crate::registry::{dispatch, kernel_pair, ExecutionRegistry};

pub type DistanceKernel = fn(&NdImage) -> Result<NdImage>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("distance_transform", Backend::Reference, edt_ref as DistanceKernel);
    reg.register("distance_transform", Backend::Accelerated, edt_acc as DistanceKernel);
}

kernel_pair!(edt_ref, edt_acc, edt_impl, (mask: &NdImage) -> Result<NdImage>);

/// Exact Euclidean distance from every foreground (nonzero) voxel to the
/// nearest background voxel, in physical units when the image has spacing.
///
/// Space beyond the volume border is not background, so a mask with no
/// background voxels maps to `+inf` everywhere.
pub fn distance_transform(mask: &NdImage) -> Result<NdImage> {
    dispatch("distance_transform", &[mask], |k: DistanceKernel| k(mask))
}

fn edt_impl(mask: &NdImage, parallel: bool) -> Result<NdImage> {
    let spacing = mask.spacing_or_unit();
    let shape = mask.shape();
    let mut d: Vec<f64> = mask.nonzero().iter().map(|&fg| if fg { f64::INFINITY } else { 0.0 }).collect();
    for (axis, &h) in spacing.iter().enumerate() {
        let n = shape[axis];
        d = map_lines(&d, shape, axis, n, parallel, |line: &[f64], out: &mut [f64]| lower_envelope(line, h, out));
    }
    Ok(mask.like_f32(d.iter().map(|&v| v.sqrt() as f32).collect()))
}

/// One pass of the separable squared-distance transform along a line of
/// sample spacing `h`: `out[q] = min_p f[p] + (h (q - p))^2` over finite
/// `f[p]`, computed from the lower envelope of the parabolas.
fn lower_envelope(f: &[f64], h: f64, out: &mut [f64]) {
    let sites: Vec<usize> = (0..f.len()).filter(|&p| f[p].is_finite()).collect();
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let x = |p: usize| p as f64 * h;
    // where the parabola at q overtakes the one at p (q > p)
    let cross = |p: usize, q: usize| ((f[q] + x(q) * x(q)) - (f[p] + x(p) * x(p))) / (2.0 * (x(q) - x(p)));
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len());
    // z[i] is where v[i + 1] takes over from v[i]
    for &q in &sites {
        while let Some(&p) = v.last() {
            let s = cross(p, q);
            if z.last().is_some_and(|&b| s <= b) {
                v.pop();
                z.pop();
            } else {
                z.push(s);
                break;
            }
        }
        v.push(q);
    }
    let mut k = 0;
    for (qi, o) in out.iter_mut().enumerate() {
        let xq = x(qi);
        while k < z.len() && z[k] < xq {
            k += 1;
        }
        let p = v[k];
        let dx = xq - x(p);
        *o = f[p] + dx * dx;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive nearest-background search.
    fn oracle(m: &[bool], shape: [usize; 3], spacing: [f64; 3]) -> Vec<f32> {
        let coords: Vec<[f64; 3]> = (0..m.len())
            .map(|i| {
                let c = [i / (shape[1] * shape[2]), (i / shape[2]) % shape[1], i % shape[2]];
                [c[0] as f64 * spacing[0], c[1] as f64 * spacing[1], c[2] as f64 * spacing[2]]
            })
            .collect();
        let bg: Vec<&[f64; 3]> = coords.iter().zip(m).filter(|(_, &fg)| !fg).map(|(c, _)| c).collect();
        coords
            .iter()
            .zip(m)
            .map(|(c, &fg)| {
                if !fg {
                    return 0.0;
                }
                bg.iter()
                    .map(|b| (0..3).map(|a| (c[a] - b[a]).powi(2)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
                    .sqrt() as f32
            })
            .collect()
    }

    #[test]
    fn small_cases() {
        // 3x3 foreground inside a background ring
        let v: Vec<bool> = (0..25).map(|i| (1..4).contains(&(i / 5)) && (1..4).contains(&(i % 5))).collect();
        let img = NdImage::from_mask(vec![5, 5], v).unwrap();
        let single = NdImage::from_mask(vec![3, 3], (0..9).map(|i| i == 4).collect()).unwrap();
        let full = NdImage::from_mask(vec![5, 5], vec![true; 25]).unwrap();
        for b in Backend::ALL {
            let d = distance_transform(&img.to_backend(b)).unwrap();
            assert_eq!(d.as_f32().unwrap()[12], 2.0);
            assert_eq!(d.as_f32().unwrap()[6], 1.0);
            assert_eq!(distance_transform(&single.to_backend(b)).unwrap().as_f32().unwrap()[4], 1.0);
            assert!(distance_transform(&full.to_backend(b)).unwrap().as_f32().unwrap().iter().all(|v| v.is_infinite()));
        }
    }

    #[test]
    fn anisotropic_spacing() {
        let v: Vec<bool> = (0..7 * 7 * 7).map(|i| i != 0).collect();
        let spacing = [2.0, 0.5, 1.0];
        let img = NdImage::from_mask(vec![7, 7, 7], v.clone()).unwrap().with_spacing(spacing.to_vec()).unwrap();
        let d = distance_transform(&img).unwrap();
        assert_eq!(d.as_f32().unwrap(), oracle(&v, [7, 7, 7], spacing).as_slice());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn matches_brute_force(v in prop::collection::vec(prop::bool::weighted(0.85), 16 * 16 * 16)) {
            let img = NdImage::from_mask(vec![16, 16, 16], v.clone()).unwrap();
            let expect = oracle(&v, [16, 16, 16], [1.0; 3]);
            for b in Backend::ALL {
                let d = distance_transform(&img.to_backend(b)).unwrap();
                prop_assert_eq!(d.as_f32().unwrap(), expect.as_slice());
            }
        }
    }
}
