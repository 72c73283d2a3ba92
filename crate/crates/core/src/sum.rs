//! Pairwise (tree) summation.
//!
//! Every reduction in the attention kernels goes through these helpers so the
//! summation order depends only on the number of terms, never on how work is
//! split across threads.

const BLOCK: usize = 16;

/// Pairwise sum of a slice of scalars.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= BLOCK {
        let mut acc = 0.0;
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let mid = split_point(values.len());
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `n` vector-valued terms of width `width`.
///
/// `add_term(j, acc)` must add term `j` into `acc`. The result is written to
/// `out` (which is overwritten). `scratch` is grown as needed and can be
/// reused across calls to avoid allocation.
pub fn pairwise_accumulate<F>(n: usize, width: usize, out: &mut [f64], scratch: &mut Vec<f64>, mut add_term: F)
where
    F: FnMut(usize, &mut [f64]),
{
    debug_assert_eq!(out.len(), width);
    let depth = usize::BITS as usize - n.leading_zeros() as usize + 1;
    if scratch.len() < depth * width {
        scratch.resize(depth * width, 0.0);
    }
    accumulate_range(0, n, width, out, scratch, &mut add_term);
}

fn accumulate_range<F>(start: usize, end: usize, width: usize, out: &mut [f64], scratch: &mut [f64], add_term: &mut F)
where
    F: FnMut(usize, &mut [f64]),
{
    out.fill(0.0);
    let n = end - start;
    if n <= BLOCK {
        for j in start..end {
            add_term(j, out);
        }
        return;
    }
    let mid = start + split_point(n);
    accumulate_range(start, mid, width, out, scratch, add_term);
    let (right, rest) = scratch.split_at_mut(width);
    accumulate_range(mid, end, width, right, rest, add_term);
    for (o, r) in out.iter_mut().zip(right.iter()) {
        *o += *r;
    }
}

// Splits on a block boundary so leaves stay full-width.
fn split_point(n: usize) -> usize {
    let blocks = n.div_ceil(BLOCK);
    (blocks / 2).max(1) * BLOCK
}
