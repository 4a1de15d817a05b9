//! Axis-line traversal shared by the separable kernels.
//!
//! A "line" along `axis` is the 1-D run of voxels obtained by fixing every other
//! coordinate. Separable filters, spline prefilters, resampling and FFTs are all
//! expressed as a per-line function applied to every line of one axis.

use rayon::prelude::*;

/// Whole-sample symmetric index: `... c b | a b c d | c b ...`.
#[inline]
pub(crate) fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

struct SyncPtr<T>(*mut T);

// Lines along one axis address disjoint element sets, so concurrent writes
// through the pointer never alias.
unsafe impl<T: Send> Send for SyncPtr<T> {}
unsafe impl<T: Send> Sync for SyncPtr<T> {}

impl<T> SyncPtr<T> {
    #[inline]
    fn get(&self) -> *mut T {
        self.0
    }
}

fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Applies `f(input_line, output_line)` to every line along `axis` and
/// assembles the results into an array whose `axis` extent is `out_len`.
pub(crate) fn map_lines<T, U, F>(
    src: &[T],
    shape: &[usize],
    axis: usize,
    out_len: usize,
    parallel: bool,
    f: F,
) -> Vec<U>
where
    T: Copy + Send + Sync,
    U: Copy + Default + Send + Sync,
    F: Fn(&[T], &mut [U]) + Sync,
{
    let (outer, n, inner) = split(shape, axis);
    let mut dst = vec![U::default(); outer * out_len * inner];
    if inner == 1 {
        if parallel {
            dst.par_chunks_mut(out_len).zip(src.par_chunks(n)).for_each(|(d, s)| f(s, d));
        } else {
            dst.chunks_mut(out_len).zip(src.chunks(n)).for_each(|(d, s)| f(s, d));
        }
        return dst;
    }

    let ptr = SyncPtr(dst.as_mut_ptr());
    let job = |line: usize, ibuf: &mut Vec<T>, obuf: &mut Vec<U>| {
        let (o, i) = (line / inner, line % inner);
        let sbase = o * n * inner + i;
        let dbase = o * out_len * inner + i;
        ibuf.clear();
        ibuf.extend((0..n).map(|k| src[sbase + k * inner]));
        f(ibuf, obuf);
        let p = ptr.get();
        for (k, &v) in obuf.iter().enumerate() {
            // SAFETY: dbase + k * inner < dst.len() and no other line writes it.
            unsafe { *p.add(dbase + k * inner) = v };
        }
    };
    let lines = outer * inner;
    if parallel {
        (0..lines).into_par_iter().for_each_init(
            || (Vec::with_capacity(n), vec![U::default(); out_len]),
            |(ib, ob), line| job(line, ib, ob),
        );
    } else {
        let (mut ib, mut ob) = (Vec::with_capacity(n), vec![U::default(); out_len]);
        for line in 0..lines {
            job(line, &mut ib, &mut ob);
        }
    }
    dst
}

/// In-place variant of [`map_lines`]; `f` sees a contiguous copy of each line.
pub(crate) fn map_lines_inplace<T, F>(data: &mut [T], shape: &[usize], axis: usize, parallel: bool, f: F)
where
    T: Copy + Default + Send + Sync,
    F: Fn(&mut [T]) + Sync,
{
    let (outer, n, inner) = split(shape, axis);
    if inner == 1 {
        if parallel {
            data.par_chunks_mut(n).for_each(|l| f(l));
        } else {
            data.chunks_mut(n).for_each(|l| f(l));
        }
        return;
    }
    let ptr = SyncPtr(data.as_mut_ptr());
    let job = |line: usize, buf: &mut Vec<T>| {
        let (o, i) = (line / inner, line % inner);
        let base = o * n * inner + i;
        let p = ptr.get();
        buf.clear();
        // SAFETY: indices stay inside `data`; each line is touched by one job only.
        buf.extend((0..n).map(|k| unsafe { *p.add(base + k * inner) }));
        f(buf);
        for (k, &v) in buf.iter().enumerate() {
            unsafe { *p.add(base + k * inner) = v };
        }
    };
    let lines = outer * inner;
    if parallel {
        (0..lines).into_par_iter().for_each_init(|| Vec::with_capacity(n), |b, line| job(line, b));
    } else {
        let mut b = Vec::with_capacity(n);
        for line in 0..lines {
            job(line, &mut b);
        }
    }
}

/// Column width of the blocks used by [`map_blocks`].
const BLOCK: usize = 128;

/// Blocked, always-parallel variant of [`map_lines`] for kernels that can
/// process several lines at once. `f(input, width, output)` receives `width`
/// neighboring lines interleaved row by row: element `k` of line `c` is at
/// `input[k * width + c]`, and the output uses the same layout with `out_len`
/// rows. Rows are contiguous in memory, so kernels vectorize across lines
/// instead of gathering strided samples.
pub(crate) fn map_blocks<T, U, F>(src: &[T], shape: &[usize], axis: usize, out_len: usize, f: F) -> Vec<U>
where
    T: Copy + Default + Send + Sync,
    U: Copy + Default + Send + Sync,
    F: Fn(&[T], usize, &mut [U]) + Sync,
{
    let (outer, n, inner) = split(shape, axis);
    if inner == 1 {
        return map_lines(src, shape, axis, out_len, true, |i: &[T], o: &mut [U]| f(i, 1, o));
    }
    let mut dst = vec![U::default(); outer * out_len * inner];
    let ptr = SyncPtr(dst.as_mut_ptr());
    let per_outer = inner.div_ceil(BLOCK);
    (0..outer * per_outer).into_par_iter().for_each_init(
        || (Vec::with_capacity(n * BLOCK), vec![U::default(); out_len * BLOCK]),
        |(ib, ob), task| {
            let (o, j0) = (task / per_outer, (task % per_outer) * BLOCK);
            let w = BLOCK.min(inner - j0);
            ib.clear();
            for k in 0..n {
                let s = o * n * inner + k * inner + j0;
                ib.extend_from_slice(&src[s..s + w]);
            }
            let ob = &mut ob[..out_len * w];
            f(ib, w, ob);
            let p = ptr.get();
            for i in 0..out_len {
                let d = o * out_len * inner + i * inner + j0;
                // SAFETY: each task owns columns j0..j0 + w of its outer slab.
                unsafe { std::ptr::copy_nonoverlapping(ob[i * w..].as_ptr(), p.add(d), w) };
            }
        },
    );
    dst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_does_not_repeat_edge() {
        let got: Vec<usize> = (-3..7).map(|i| mirror_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(mirror_index(-5, 1), 0);
    }

    #[test]
    fn map_lines_matches_manual_transpose() {
        let shape = [2, 3, 4];
        let src: Vec<u32> = (0..24).collect();
        for parallel in [false, true] {
            // reverse every line along axis 1 and append its sum
            let out = map_lines(&src, &shape, 1, 4, parallel, |i: &[u32], o: &mut [u32]| {
                o[..3].copy_from_slice(&[i[2], i[1], i[0]]);
                o[3] = i.iter().sum();
            });
            for z in 0..2 {
                for x in 0..4 {
                    let col: Vec<u32> = (0..3).map(|y| src[z * 12 + y * 4 + x]).collect();
                    let got: Vec<u32> = (0..4).map(|y| out[z * 16 + y * 4 + x]).collect();
                    assert_eq!(got, vec![col[2], col[1], col[0], col.iter().sum()]);
                }
            }
            let blocked = map_blocks(&src, &shape, 1, 4, |i: &[u32], w: usize, o: &mut [u32]| {
                for c in 0..w {
                    for k in 0..3 {
                        o[k * w + c] = i[(2 - k) * w + c];
                    }
                    o[3 * w + c] = (0..3).map(|k| i[k * w + c]).sum();
                }
            });
            assert_eq!(blocked, out);
            let mut inplace = src.clone();
            map_lines_inplace(&mut inplace, &shape, 0, parallel, |l: &mut [u32]| l.reverse());
            assert_eq!(&inplace[..12], &src[12..]);
        }
    }

    #[test]
    fn blocks_cover_wide_inner_axes() {
        let shape = [3, 5, 300];
        let src: Vec<f64> = (0..4500).map(|i| (i as f64 * 0.37).sin()).collect();
        let lines = map_lines(&src, &shape, 1, 2, false, |i: &[f64], o: &mut [f64]| {
            o[0] = i.iter().sum();
            o[1] = i[4] - i[0];
        });
        let blocks = map_blocks(&src, &shape, 1, 2, |i: &[f64], w: usize, o: &mut [f64]| {
            for c in 0..w {
                o[c] = (0..5).map(|k| i[k * w + c]).sum();
                o[w + c] = i[4 * w + c] - i[c];
            }
        });
        assert_eq!(lines, blocks);
    }
}
