use std::ops::Range;

/// Split `data` (which starts at absolute index `base`) into disjoint mutable
/// pieces for consecutive, non-overlapping `ranges`.
pub(crate) fn split_ranges_mut<'a, T>(mut data: &'a mut [T], base: usize, ranges: &[Range<usize>]) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(ranges.len());
    let mut pos = base;
    for r in ranges {
        let (_, rest) = data.split_at_mut(r.start - pos);
        let (piece, rest) = rest.split_at_mut(r.len());
        out.push(piece);
        data = rest;
        pos = r.end;
    }
    out
}

/// Half-sample symmetric reflection of `i` into `[0, n)` (period `2n`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let p = 2 * n as isize;
    let m = i.rem_euclid(p);
    if m < n as isize {
        m as usize
    } else {
        (p - 1 - m) as usize
    }
}
