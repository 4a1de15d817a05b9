use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::StructuringElement;
use crate::image::{strides, unravel, Backend, NdImage};
use crate::registry::{dispatch, kernel_pair, ExecutionRegistry};

pub type MedianKernel = fn(&NdImage, &StructuringElement) -> Result<NdImage>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("median", Backend::Reference, median_ref as MedianKernel);
    reg.register("median", Backend::Accelerated, median_acc as MedianKernel);
}

kernel_pair!(median_ref, median_acc, median_impl, (img: &NdImage, se: &StructuringElement) -> Result<NdImage>);

/// Rank filter returning the lower median of the in-bounds neighbors under
/// `se` (element `(n - 1) / 2` of the sorted neighborhood).
pub fn median(img: &NdImage, se: &StructuringElement) -> Result<NdImage> {
    dispatch("median", &[img], |k: MedianKernel| k(img, se))
}

fn median_impl(img: &NdImage, se: &StructuringElement, parallel: bool) -> Result<NdImage> {
    if se.ndim() != img.ndim() {
        return Err(Error::InvalidParameter(format!(
            "{}-D structuring element on a {}-D image",
            se.ndim(),
            img.ndim()
        )));
    }
    let src = img.values_f32();
    let out = if parallel { median_sliding(&src, img.shape(), se) } else { median_direct(&src, img.shape(), se) };
    Ok(img.like_f32(out))
}

fn median_direct(src: &[f32], shape: &[usize], se: &StructuringElement) -> Vec<f32> {
    let nd = shape.len();
    let lin = se.linear_offsets(&strides(shape));
    let offs: Vec<&[isize]> = se.offsets().collect();
    let mut coord = vec![0usize; nd];
    let mut buf = Vec::with_capacity(se.len());
    let mut out = vec![0.0f32; src.len()];
    for (i, o) in out.iter_mut().enumerate() {
        unravel(i, shape, &mut coord);
        buf.clear();
        for (off, &l) in offs.iter().zip(&lin) {
            let inside = (0..nd).all(|a| {
                let c = coord[a] as isize + off[a];
                c >= 0 && c < shape[a] as isize
            });
            if inside {
                buf.push(src[(i as isize + l) as usize]);
            }
        }
        let k = (buf.len() - 1) / 2;
        let (_, m, _) = buf.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
        *o = *m;
    }
    out
}

/// Order-preserving map from `f32` to `u32`: comparing keys as integers gives
/// the same order as `f32::total_cmp`.
#[inline]
fn key(v: f32) -> u32 {
    let b = v.to_bits();
    if b & 0x8000_0000 != 0 {
        !b
    } else {
        b | 0x8000_0000
    }
}

#[inline]
fn unkey(k: u32) -> f32 {
    f32::from_bits(if k & 0x8000_0000 != 0 { k & 0x7fff_ffff } else { !k })
}

/// Output rows handled together; their neighborhoods are ranked jointly.
const TILE_ROWS: usize = 32;

/// Tiled sliding median in rank space.
///
/// For each tile of output rows, the input rows it touches are ranked by value
/// (ties broken by position, so ranks are unique). Along each row the window's
/// ranks live in a small hierarchical bitset and the median rank is walked up
/// or down as runs of the footprint enter and leave. That costs a few word
/// operations per step instead of a full selection.
fn median_sliding(src: &[f32], shape: &[usize], se: &StructuringElement) -> Vec<f32> {
    let nd = shape.len();
    let w = shape[nd - 1];
    let lead = &shape[..nd - 1];
    let mut runs: BTreeMap<Vec<isize>, (isize, isize)> = BTreeMap::new();
    for o in se.offsets() {
        let e = runs.entry(o[..nd - 1].to_vec()).or_insert((o[nd - 1], o[nd - 1]));
        e.0 = e.0.min(o[nd - 1]);
        e.1 = e.1.max(o[nd - 1]);
    }
    let runs: Vec<(Vec<isize>, isize, isize)> = runs.into_iter().map(|(p, (lo, hi))| (p, lo, hi)).collect();
    let lead_strides = strides(lead);
    // input row under `prefix` for output row `row`, if inside the image
    let source_row = |row: usize, prefix: &[isize], p: &mut [usize]| -> Option<usize> {
        unravel(row, lead, p);
        let mut r = 0usize;
        for a in 0..nd - 1 {
            let c = p[a] as isize + prefix[a];
            if c < 0 || c >= lead[a] as isize {
                return None;
            }
            r += c as usize * lead_strides[a];
        }
        Some(r)
    };

    let keys: Vec<u32> = src.par_iter().map(|&v| key(v)).collect();
    let mut out = vec![0.0f32; src.len()];
    out.par_chunks_mut(TILE_ROWS * w).enumerate().for_each_init(
        || (RankSet::new(0), Vec::new(), Vec::new(), Vec::new()),
        |(set, order, scratch, rank), (tile, otile)| {
            let first = tile * TILE_ROWS;
            let rows = otile.len() / w;
            let mut p = vec![0usize; nd - 1];
            let mut needed: Vec<usize> = (first..first + rows)
                .flat_map(|row| runs.iter().map(move |(prefix, _, _)| (row, prefix)))
                .filter_map(|(row, prefix)| source_row(row, prefix, &mut p))
                .collect();
            needed.sort_unstable();
            needed.dedup();

            let n = needed.len() * w;
            order.clear();
            for (slot, &r) in needed.iter().enumerate() {
                let line = &keys[r * w..(r + 1) * w];
                order.extend(line.iter().enumerate().map(|(x, &k)| (k as u64) << 32 | (slot * w + x) as u64));
            }
            radix_sort_high(order, scratch);
            rank.resize(n, 0u32);
            for (r, &e) in order.iter().enumerate() {
                rank[(e & 0xffff_ffff) as usize] = r as u32;
            }
            if set.capacity() < n {
                *set = RankSet::new(n);
            }

            for (i, orow) in otile.chunks_mut(w).enumerate() {
                let active: Vec<(&[u32], isize, isize)> = runs
                    .iter()
                    .filter_map(|(prefix, lo, hi)| {
                        let r = source_row(first + i, prefix, &mut p)?;
                        let slot = needed.binary_search(&r).unwrap();
                        Some((&rank[slot * w..(slot + 1) * w], *lo, *hi))
                    })
                    .collect();
                walk_row(set, &active, orow, |r| unkey((order[r] >> 32) as u32));
            }
        },
    );
    out
}

/// Slides the footprint along one row, writing the lower median of each
/// window. `set` must be empty on entry and is left empty.
fn walk_row(set: &mut RankSet, active: &[(&[u32], isize, isize)], orow: &mut [f32], value: impl Fn(usize) -> f32) {
    let wi = orow.len() as isize;
    let mut total = 0usize;
    for &(line, lo, hi) in active {
        for x in lo.max(0)..=hi.min(wi - 1) {
            set.insert(line[x as usize] as usize);
            total += 1;
        }
    }
    // walk from the smallest rank up to the lower median
    let mut m = set.next(0).expect("footprint contains its origin");
    let mut below = 0usize;
    while below < (total - 1) / 2 {
        m = set.next(m + 1).unwrap();
        below += 1;
    }
    orow[0] = value(m);

    for x in 1..wi {
        for &(line, lo, hi) in active {
            let gone = x - 1 + lo;
            if (0..wi).contains(&gone) {
                let r = line[gone as usize] as usize;
                set.remove(r);
                below -= (r < m) as usize;
                total -= 1;
            }
            let new = x + hi;
            if (0..wi).contains(&new) {
                let r = line[new as usize] as usize;
                set.insert(r);
                below += (r < m) as usize;
                total += 1;
            }
        }
        if !set.contains(m) {
            m = match set.next(m) {
                Some(r) => r,
                None => {
                    below -= 1;
                    set.prev(m).unwrap()
                }
            };
        }
        let k = (total - 1) / 2;
        while below > k {
            m = set.prev(m - 1).unwrap();
            below -= 1;
        }
        while below < k {
            m = set.next(m + 1).unwrap();
            below += 1;
        }
        orow[x as usize] = value(m);
    }

    let x = wi - 1;
    for &(line, lo, hi) in active {
        for y in (x + lo).max(0)..=(x + hi).min(wi - 1) {
            set.remove(line[y as usize] as usize);
        }
    }
}

/// Stable LSD radix sort on the upper 32 bits.
fn radix_sort_high(v: &mut Vec<u64>, tmp: &mut Vec<u64>) {
    tmp.resize(v.len(), 0);
    for shift in [32u32, 40, 48, 56] {
        let mut count = [0usize; 257];
        for &e in v.iter() {
            count[((e >> shift) & 0xff) as usize + 1] += 1;
        }
        if count[1..].iter().any(|&c| c == v.len()) {
            continue;
        }
        for b in 0..256 {
            count[b + 1] += count[b];
        }
        for &e in v.iter() {
            let b = ((e >> shift) & 0xff) as usize;
            tmp[count[b]] = e;
            count[b] += 1;
        }
        std::mem::swap(v, tmp);
    }
}

/// Set of integers below a fixed bound, stored as a 64-ary tree of bit words
/// so successor and predecessor queries touch one word per level.
struct RankSet {
    levels: Vec<Vec<u64>>,
}

impl RankSet {
    fn new(n: usize) -> Self {
        let mut levels = Vec::new();
        let mut len = n.max(1);
        loop {
            len = len.div_ceil(64);
            levels.push(vec![0u64; len]);
            if len == 1 {
                break;
            }
        }
        RankSet { levels }
    }

    fn capacity(&self) -> usize {
        self.levels[0].len() * 64
    }

    #[inline]
    fn contains(&self, i: usize) -> bool {
        self.levels[0][i >> 6] >> (i & 63) & 1 == 1
    }

    #[inline]
    fn insert(&mut self, mut i: usize) {
        for level in &mut self.levels {
            let word = &mut level[i >> 6];
            let was = *word;
            *word |= 1 << (i & 63);
            if was != 0 {
                return;
            }
            i >>= 6;
        }
    }

    #[inline]
    fn remove(&mut self, mut i: usize) {
        for level in &mut self.levels {
            let word = &mut level[i >> 6];
            *word &= !(1u64 << (i & 63));
            if *word != 0 {
                return;
            }
            i >>= 6;
        }
    }

    /// Smallest member `>= i`.
    fn next(&self, mut i: usize) -> Option<usize> {
        let mut l = 0;
        loop {
            let level = self.levels.get(l)?;
            let w = i >> 6;
            let bits = level.get(w)? & (!0u64 << (i & 63));
            if bits != 0 {
                i = (w << 6) | bits.trailing_zeros() as usize;
                break;
            }
            i = w + 1;
            l += 1;
        }
        while l > 0 {
            l -= 1;
            i = (i << 6) | self.levels[l][i].trailing_zeros() as usize;
        }
        Some(i)
    }

    /// Largest member `<= i`, for `i` below the bound.
    fn prev(&self, mut i: usize) -> Option<usize> {
        let mut l = 0;
        loop {
            let level = self.levels.get(l)?;
            let w = i >> 6;
            let b = i & 63;
            let mask = if b == 63 { !0u64 } else { (1u64 << (b + 1)) - 1 };
            let bits = level[w] & mask;
            if bits != 0 {
                i = (w << 6) | (63 - bits.leading_zeros() as usize);
                break;
            }
            if w == 0 {
                return None;
            }
            i = w - 1;
            l += 1;
        }
        while l > 0 {
            l -= 1;
            i = (i << 6) | (63 - self.levels[l][i].leading_zeros() as usize);
        }
        Some(i)
    }
}
