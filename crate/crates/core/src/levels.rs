//! Target resolution levels and the level solver that turns them into a
//! balanced partition of particle cells.

use crate::access::{grid_dims, level_bounds, AccessBuilder, LinearAccess};
use crate::volume::{Dims, PixelVolume};

/// Per-pixel target level in `[l_min, l_max]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetLevels {
    pub dims: Dims,
    pub l_min: usize,
    pub l_max: usize,
    pub levels: Vec<u8>,
}

impl TargetLevels {
    pub fn uniform(dims: Dims, level: usize) -> Self {
        let (l_min, l_max) = level_bounds(dims);
        TargetLevels { dims, l_min, l_max, levels: vec![level.clamp(l_min, l_max) as u8; dims.len()] }
    }
}

/// Smallest `k >= 0` with `2^k >= r`.
fn ceil_log2(r: f64) -> usize {
    if !(r > 1.0) {
        return 0;
    }
    if !r.is_finite() {
        return usize::MAX;
    }
    let mut k = r.log2().ceil().max(0.0) as i32;
    while k > 0 && 2f64.powi(k - 1) >= r {
        k -= 1;
    }
    while 2f64.powi(k) < r {
        k += 1;
    }
    k as usize
}

/// Level for one pixel: `ceil(log2(|Omega| / L))` with `L = E sigma / |grad f|`
/// and `|Omega| = 2^l_max`, clamped to `[l_min, l_max]`. A zero gradient maps
/// to `l_min`.
pub fn pixel_level(grad: f64, sigma: f64, error_bound: f64, l_min: usize, l_max: usize) -> usize {
    if grad <= 0.0 {
        return l_min;
    }
    let r = (1u64 << l_max) as f64 * grad / (error_bound * sigma);
    ceil_log2(r).clamp(l_min, l_max)
}

/// Evaluate the level function at every pixel.
pub fn level_function(grad: &PixelVolume, sigma: &PixelVolume, error_bound: f64) -> TargetLevels {
    let dims = grad.dims();
    let (l_min, l_max) = level_bounds(dims);
    let levels = grad
        .values()
        .iter()
        .zip(sigma.values())
        .map(|(&g, &s)| pixel_level(f64::from(g), f64::from(s), error_bound, l_min, l_max) as u8)
        .collect();
    TargetLevels { dims, l_min, l_max, levels }
}

/// Fold each fine cell into its parent with `f`.
pub(crate) fn reduce_to_parent<T: Copy>(fine: &[T], fd: Dims, cd: Dims, init: T, f: impl Fn(T, T) -> T) -> Vec<T> {
    let mut out = vec![init; cd.len()];
    for z in 0..fd.z {
        for x in 0..fd.x {
            let prow = cd.index(z / 2, x / 2, 0);
            let frow = fd.index(z, x, 0);
            for y in 0..fd.y {
                let p = prow + y / 2;
                out[p] = f(out[p], fine[frow + y]);
            }
        }
    }
    out
}

/// Grow a mask by one cell in all 26 directions, clipped to the grid.
fn dilate(mask: &[bool], d: Dims) -> Vec<bool> {
    let mut a = mask.to_vec();
    let mut b = vec![false; a.len()];
    let strides = [d.x * d.y, d.y, 1];
    let extents = d.as_array();
    for axis in 0..3 {
        let s = strides[axis];
        let n = extents[axis];
        for (i, out) in b.iter_mut().enumerate() {
            let c = (i / s) % n;
            let mut v = a[i];
            if c > 0 {
                v |= a[i - s];
            }
            if c + 1 < n {
                v |= a[i + s];
            }
            *out = v;
        }
        std::mem::swap(&mut a, &mut b);
    }
    a
}

/// Leaf cells for `targets` with no extra split requests.
pub fn solve_levels(targets: &TargetLevels) -> LinearAccess {
    solve_levels_with(targets, &[])
}

/// Leaf cells for `targets`, additionally splitting every cell flagged in
/// `forced[l - l_min]` (a mask over the level-`l` grid; missing levels are
/// treated as all false).
///
/// A cell is split when a target level inside it exceeds its level, when it
/// is forced, or when one of its children is within one cell of a split cell
/// on the next finer level. The last rule keeps neighbouring leaves (26-way)
/// within one level of each other. Leaves are the unsplit cells whose parent
/// is split.
pub fn solve_levels_with(targets: &TargetLevels, forced: &[Vec<bool>]) -> LinearAccess {
    let dims = targets.dims;
    let (l_min, l_max) = (targets.l_min, targets.l_max);
    let ld = |l: usize| grid_dims(dims, l_max, l);

    // need[l - l_min]: the cell at level l must be split.
    let mut need: Vec<Vec<bool>> = Vec::with_capacity(l_max + 1 - l_min);
    let mut by_level: Vec<Vec<u8>> = vec![Vec::new(); l_max + 1 - l_min];
    by_level[l_max - l_min] = targets.levels.clone();
    for l in (l_min..l_max).rev() {
        by_level[l - l_min] = reduce_to_parent(&by_level[l + 1 - l_min], ld(l + 1), ld(l), 0u8, u8::max);
    }
    for l in l_min..=l_max {
        let mt = &by_level[l - l_min];
        let mut m: Vec<bool> = mt.iter().map(|&t| t as usize > l).collect();
        if l < l_max {
            if let Some(f) = forced.get(l - l_min) {
                for (a, &b) in m.iter_mut().zip(f) {
                    *a |= b;
                }
            }
        } else {
            m.iter_mut().for_each(|a| *a = false);
        }
        need.push(m);
    }
    drop(by_level);

    for l in (l_min..l_max).rev() {
        let spread = dilate(&need[l + 1 - l_min], ld(l + 1));
        let up = reduce_to_parent(&spread, ld(l + 1), ld(l), false, |a, b| a | b);
        for (a, b) in need[l - l_min].iter_mut().zip(up) {
            *a |= b;
        }
    }

    let mut b = AccessBuilder::new(l_min, l_max, l_max, dims);
    for l in l_min..=l_max {
        let d = ld(l);
        let pd = if l > l_min { ld(l - 1) } else { d };
        let here = &need[l - l_min];
        for z in 0..d.z {
            for x in 0..d.x {
                let row = d.index(z, x, 0);
                if l == l_min {
                    b.push_row((0..d.y).filter(|&y| !here[row + y]).map(|y| y as u16));
                } else {
                    let parent = &need[l - 1 - l_min];
                    let prow = pd.index(z / 2, x / 2, 0);
                    b.push_row((0..d.y).filter(|&y| parent[prow + y / 2] && !here[row + y]).map(|y| y as u16));
                }
            }
        }
    }
    b.finish()
}

/// Hierarchical averages of a volume at every level.
///
/// Sums are accumulated level by level in `f64` and divided by the clipped
/// footprint volume; the finest level holds the pixels unchanged.
#[derive(Debug, Clone)]
pub struct MeanPyramid {
    dims: Dims,
    l_min: usize,
    l_max: usize,
    means: Vec<Vec<f32>>,
    mins: Vec<Vec<f32>>,
    maxs: Vec<Vec<f32>>,
}

impl MeanPyramid {
    pub fn new(v: &PixelVolume, l_min: usize) -> Self {
        let dims = v.dims();
        let (_, l_max) = level_bounds(dims);
        let n = l_max + 1 - l_min;
        let mut means = vec![Vec::new(); n];
        let mut mins = vec![Vec::new(); n];
        let mut maxs = vec![Vec::new(); n];
        let mut sums: Vec<f64> = v.values().iter().map(|&x| f64::from(x)).collect();
        means[n - 1] = v.values().to_vec();
        mins[n - 1] = v.values().to_vec();
        maxs[n - 1] = v.values().to_vec();
        let mut fd = dims;
        for l in (l_min..l_max).rev() {
            let cd = grid_dims(dims, l_max, l);
            let i = l - l_min;
            sums = reduce_to_parent(&sums, fd, cd, 0.0, |a, b| a + b);
            mins[i] = reduce_to_parent(&mins[i + 1], fd, cd, f32::INFINITY, f32::min);
            maxs[i] = reduce_to_parent(&maxs[i + 1], fd, cd, f32::NEG_INFINITY, f32::max);
            let shift = l_max - l;
            let mut m = Vec::with_capacity(cd.len());
            for z in 0..cd.z {
                let vz = crate::tree::extent(dims.z, shift, z);
                for x in 0..cd.x {
                    let vzx = vz * crate::tree::extent(dims.x, shift, x);
                    for y in 0..cd.y {
                        let count = vzx * crate::tree::extent(dims.y, shift, y);
                        m.push((sums[cd.index(z, x, y)] / count as f64) as f32);
                    }
                }
            }
            means[i] = m;
            fd = cd;
        }
        MeanPyramid { dims, l_min, l_max, means, mins, maxs }
    }

    pub fn l_min(&self) -> usize {
        self.l_min
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn level_dims(&self, level: usize) -> Dims {
        grid_dims(self.dims, self.l_max, level)
    }

    pub fn means(&self, level: usize) -> &[f32] {
        &self.means[level - self.l_min]
    }

    pub fn mean(&self, level: usize, z: usize, x: usize, y: usize) -> f32 {
        self.means[level - self.l_min][self.level_dims(level).index(z, x, y)]
    }

    pub fn mins(&self, level: usize) -> &[f32] {
        &self.mins[level - self.l_min]
    }

    pub fn maxs(&self, level: usize) -> &[f32] {
        &self.maxs[level - self.l_min]
    }
}
