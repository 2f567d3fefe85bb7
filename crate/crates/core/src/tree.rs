//! The APR tree: interior nodes above the leaf particle cells.
//!
//! The tree is stored as a second [`LinearAccess`] covering levels
//! `l_min - 1 ..= l_max - 1`, sharing the pixel geometry of the leaves. A node
//! exists iff it is a proper ancestor of some leaf, so the single node at level
//! 0 always covers the whole (padded) domain.

use rayon::prelude::*;

use crate::access::{grid_dims, AccessBuilder, LinearAccess};
use crate::apr::{check_len, Apr, ParticleValues};
use crate::error::{Error, Result};
use crate::util::split_ranges_mut;

/// Derive the interior-node structure of a leaf access structure.
pub fn init_tree_structure(access: &LinearAccess) -> LinearAccess {
    let dims = access.pixel_dims();
    let l_max = access.l_max();
    if l_max == 0 {
        // A single-voxel volume has no interior nodes. Keep one empty row so
        // the structure is well formed.
        let mut b = AccessBuilder::new(0, 0, 0, dims);
        for _ in 0..grid_dims(dims, 0, 0).z * grid_dims(dims, 0, 0).x {
            b.push_row([]);
        }
        return b.finish();
    }
    let t_min = access.l_min() - 1;
    let t_max = l_max - 1;

    // Built finest first; each entry is (y_idx, row ends relative to the level).
    let mut levels: Vec<(Vec<u16>, Vec<usize>)> = Vec::with_capacity(t_max + 1 - t_min);
    let mut scratch: Vec<u16> = Vec::new();
    for lt in (t_min..=t_max).rev() {
        let d = grid_dims(dims, l_max, lt);
        let cd = grid_dims(dims, l_max, lt + 1);
        let finer = levels.last();
        let mut ys = Vec::new();
        let mut ends = Vec::with_capacity(d.z * d.x);
        for z in 0..d.z {
            for x in 0..d.x {
                scratch.clear();
                for cz in 2 * z..(2 * z + 2).min(cd.z) {
                    for cx in 2 * x..(2 * x + 2).min(cd.x) {
                        scratch.extend(access.row_y(lt + 1, cz, cx).iter().map(|&y| y / 2));
                        if let Some((fy, fe)) = finer {
                            let r = cz * cd.x + cx;
                            let begin = if r == 0 { 0 } else { fe[r - 1] };
                            scratch.extend(fy[begin..fe[r]].iter().map(|&y| y / 2));
                        }
                    }
                }
                scratch.sort_unstable();
                scratch.dedup();
                ys.extend_from_slice(&scratch);
                ends.push(ys.len());
            }
        }
        levels.push((ys, ends));
    }

    let mut b = AccessBuilder::new(t_min, t_max, l_max, dims);
    for (ys, ends) in levels.iter().rev() {
        let mut begin = 0;
        for &end in ends {
            b.push_row(ys[begin..end].iter().copied());
            begin = end;
        }
    }
    b.finish()
}

/// Walk the row `(level, z, x)` of `child` together with its parent row
/// `(level - 1, z / 2, x / 2)` of `parent`, reporting `(child index, parent
/// index)` pairs. The parent cursor only moves forward.
pub fn synchronized_parent_pass(
    child: &LinearAccess,
    parent: &LinearAccess,
    level: usize,
    z: usize,
    x: usize,
    mut visit: impl FnMut(usize, usize),
) -> Result<()> {
    let (cb, ce) = child.get_row(level, z, x)?;
    if level == 0 {
        return Err(Error::RowOutOfRange { level: 0, z, x });
    }
    let (pb, pe) = parent.get_row(level - 1, z / 2, x / 2)?;
    sync_rows(&child.y_idx()[cb..ce], cb, &parent.y_idx()[pb..pe], pb, &mut visit).map_err(|y| {
        Error::integrity(format!("no parent for particle y = {y} in row ({level}, {z}, {x})"))
    })
}

/// Core of the synchronized iteration. On failure returns the child `y` that
/// has no parent.
#[inline]
pub(crate) fn sync_rows(
    child_y: &[u16],
    child_start: usize,
    parent_y: &[u16],
    parent_start: usize,
    visit: &mut impl FnMut(usize, usize),
) -> std::result::Result<(), u16> {
    let mut j = 0;
    for (k, &y) in child_y.iter().enumerate() {
        let target = y / 2;
        while j < parent_y.len() && parent_y[j] < target {
            j += 1;
        }
        if j == parent_y.len() || parent_y[j] != target {
            return Err(y);
        }
        visit(child_start + k, parent_start + j);
    }
    Ok(())
}

#[inline]
pub(crate) fn extent(n: usize, shift: usize, i: usize) -> usize {
    ((i + 1) << shift).min(n) - (i << shift).min(n)
}

/// Fill interior-node values by average reduction, finest level first.
///
/// Each node receives the footprint-volume weighted mean of its children, so
/// its value is the mean of the piecewise-constant reconstruction over its
/// (clipped) footprint. Work is split over parent `z`-slices; every slice
/// reduces sequentially, so the result does not depend on the thread count.
pub fn fill_tree(apr: &Apr, leaf_values: &[f32]) -> Result<ParticleValues> {
    let access = apr.access();
    let tree = apr.tree();
    check_len(access, leaf_values.len())?;
    let n_t = tree.num_particles();
    if n_t == 0 {
        return Ok(ParticleValues::zeros(0));
    }
    let dims = access.pixel_dims();
    let l_max = access.l_max();
    let mut sums = vec![0f64; n_t];

    for lt in tree.levels().rev() {
        let range = tree.level_range(lt);
        let (head, finer) = sums.split_at_mut(range.end);
        let finer: &[f64] = finer;
        let this = &mut head[range.start..];
        let d = tree.level_dims(lt);
        let cd = grid_dims(dims, l_max, lt + 1);
        let slices: Vec<_> = (0..d.z).map(|z| tree.slice_range(lt, z)).collect();
        let chunks = split_ranges_mut(this, range.start, &slices);
        let child_shift = l_max - (lt + 1);
        let has_finer_tree = lt < tree.l_max();
        let finer_base = range.end;

        let failed = chunks.into_par_iter().enumerate().map(|(z, out)| -> Result<()> {
            let base = slices[z].start;
            for x in 0..d.x {
                let prow = tree.row(lt, z, x);
                let py = &tree.y_idx()[prow.clone()];
                for cz in 2 * z..(2 * z + 2).min(cd.z) {
                    let vz = extent(dims.z, child_shift, cz);
                    for cx in 2 * x..(2 * x + 2).min(cd.x) {
                        let vzx = (vz * extent(dims.x, child_shift, cx)) as f64;
                        let crow = access.row(lt + 1, cz, cx);
                        let cy = &access.y_idx()[crow.clone()];
                        sync_rows(cy, crow.start, py, prow.start, &mut |i, p| {
                            let vy = extent(dims.y, child_shift, access.y_idx()[i] as usize);
                            out[p - base] += vzx * vy as f64 * f64::from(leaf_values[i]);
                        })
                        .map_err(|y| Error::integrity(format!("leaf ({}, {cz}, {cx}, {y}) has no parent", lt + 1)))?;
                        if has_finer_tree {
                            let trow = tree.row(lt + 1, cz, cx);
                            let ty = &tree.y_idx()[trow.clone()];
                            sync_rows(ty, trow.start, py, prow.start, &mut |i, p| {
                                let vy = extent(dims.y, child_shift, tree.y_idx()[i] as usize);
                                out[p - base] += vzx * vy as f64 * finer[i - finer_base];
                            })
                            .map_err(|y| Error::integrity(format!("node ({}, {cz}, {cx}, {y}) has no parent", lt + 1)))?;
                        }
                    }
                }
                let shift = l_max - lt;
                let vzx = (extent(dims.z, shift, z) * extent(dims.x, shift, x)) as f64;
                for (k, &y) in py.iter().enumerate() {
                    out[prow.start - base + k] /= vzx * extent(dims.y, shift, y as usize) as f64;
                }
            }
            Ok(())
        });
        let errs: Vec<Error> = failed.filter_map(|r| r.err()).collect();
        if let Some(e) = errs.into_iter().next() {
            return Err(e);
        }
    }
    Ok(ParticleValues::new(sums.into_iter().map(|v| v as f32).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::access::level_bounds;
    use crate::volume::Dims;

    #[test]
    fn dense_two_cube_has_single_root() {
        let apr = Apr::dense(Dims::cube(2));
        let t = apr.tree();
        assert_eq!((t.l_min(), t.l_max()), (0, 0));
        assert_eq!(t.y_idx(), &[0]);
        let vals: Vec<f32> = (0..8).map(|v| v as f32).collect();
        let tv = fill_tree(&apr, &vals).unwrap();
        assert_eq!(&*tv, &[3.5]);
    }

    #[test]
    fn constant_leaves_give_constant_tree() {
        let apr = Apr::dense(Dims::new(5, 3, 7));
        let tv = fill_tree(&apr, &vec![2.25; apr.num_particles()]).unwrap();
        assert!(tv.iter().all(|&v| v == 2.25));
    }

    #[test]
    fn sync_pass_maps_halved_y() {
        let dims = Dims::new(1, 1, 8);
        let (_, l_max) = level_bounds(dims);
        assert_eq!(l_max, 3);
        let mut child = AccessBuilder::new(3, 3, 3, dims);
        child.push_row([0, 1, 5]);
        let child = child.finish();
        let mut parent = AccessBuilder::new(2, 2, 3, dims);
        parent.push_row([0, 2]);
        let parent = parent.finish();
        let mut pairs = Vec::new();
        synchronized_parent_pass(&child, &parent, 3, 0, 0, |i, j| pairs.push((i, j))).unwrap();
        assert_eq!(pairs, [(0, 0), (1, 0), (2, 1)]);

        let mut orphan = AccessBuilder::new(2, 2, 3, dims);
        orphan.push_row([0]);
        let orphan = orphan.finish();
        assert!(matches!(
            synchronized_parent_pass(&child, &orphan, 3, 0, 0, |_, _| {}),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn single_voxel_has_empty_tree() {
        let apr = Apr::dense(Dims::cube(1));
        assert_eq!(apr.num_tree_nodes(), 0);
        assert!(fill_tree(&apr, &[4.0]).unwrap().is_empty());
    }
}
