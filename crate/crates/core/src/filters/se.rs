/// Discrete Euclidean ball used as a footprint by rank filters and morphology.
///
/// Offsets are stored sorted by distance from the origin so that scans that can
/// stop early (local-maximum tests, erosion) look at near neighbors first.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuringElement {
    ndim: usize,
    radius: f64,
    offsets: Vec<isize>,
}

impl StructuringElement {
    /// All integer offsets with Euclidean norm `<= radius`.
    pub fn ball(ndim: usize, radius: f64) -> Self {
        Self::build(ndim, radius, ndim)
    }

    /// 2-D disk.
    pub fn disk(radius: f64) -> Self {
        Self::ball(2, radius)
    }

    /// Disk lying in the last two axes of an `ndim`-dimensional image, i.e. a
    /// per-plane footprint for volumes.
    pub fn planar_disk(ndim: usize, radius: f64) -> Self {
        Self::build(ndim, radius, 2.min(ndim))
    }

    fn build(ndim: usize, radius: f64, active: usize) -> Self {
        assert!(ndim >= 1 && radius >= 0.0);
        let r = radius.floor() as isize;
        let r2 = radius * radius;
        let first_active = ndim - active;
        let mut pts: Vec<Vec<isize>> = vec![vec![]];
        for a in 0..ndim {
            let range = if a >= first_active { -r..=r } else { 0..=0 };
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    range.clone().map(move |v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        let norm2 = |p: &[isize]| p.iter().map(|&v| (v * v) as f64).sum::<f64>();
        pts.retain(|p| norm2(p) <= r2 + 1e-9);
        pts.sort_by(|a, b| norm2(a).total_cmp(&norm2(b)).then_with(|| a.cmp(b)));
        StructuringElement { ndim, radius, offsets: pts.concat() }
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.offsets.len() / self.ndim
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> impl Iterator<Item = &[isize]> + '_ {
        self.offsets.chunks(self.ndim)
    }

    /// Largest absolute offset along `axis`.
    pub fn reach(&self, axis: usize) -> usize {
        self.offsets().map(|o| o[axis].unsigned_abs()).max().unwrap_or(0)
    }

    /// Linear offsets for an image with the given strides.
    pub(crate) fn linear_offsets(&self, strides: &[usize]) -> Vec<isize> {
        self.offsets().map(|o| o.iter().zip(strides).map(|(&d, &s)| d * s as isize).sum()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_sizes_and_symmetry() {
        assert_eq!(StructuringElement::ball(3, 1.0).len(), 7);
        assert_eq!(StructuringElement::ball(3, 3.0).len(), 123);
        assert_eq!(StructuringElement::ball(3, 5.0).len(), 515);
        assert_eq!(StructuringElement::disk(1.0).len(), 5);
        let se = StructuringElement::ball(3, 2.5);
        assert_eq!(se.offsets().next().unwrap(), &[0, 0, 0]);
        let all: Vec<Vec<isize>> = se.offsets().map(|o| o.to_vec()).collect();
        for o in &all {
            let neg: Vec<isize> = o.iter().map(|v| -v).collect();
            assert!(all.contains(&neg));
        }
        let flat = StructuringElement::planar_disk(3, 2.0);
        assert!(flat.offsets().all(|o| o[0] == 0));
        assert_eq!(flat.len(), StructuringElement::disk(2.0).len());
    }
}
