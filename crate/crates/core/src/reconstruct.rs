//! Piecewise-constant reconstruction of full volumes, single levels and
//! padded patches.

use std::ops::Range;

use rayon::prelude::*;

use crate::access::grid_dims;
use crate::apr::{check_len, Apr};
use crate::error::{Error, Result};
use crate::util::reflect_index;
use crate::volume::{Dims, PixelVolume};

/// Boundary handling outside the image domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PadMode {
    Zero,
    /// Half-sample symmetric: `-1 -> 0`, `n -> n - 1`.
    #[default]
    Reflect,
}

impl std::str::FromStr for PadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(PadMode::Zero),
            "reflect" => Ok(PadMode::Reflect),
            _ => Err(Error::param(format!("unknown pad mode '{s}'"))),
        }
    }
}

/// Fill `out[y - y_lo]` for `y` in `y_lo..y_hi` with the level-`level` image
/// of row `(z, x)`.
///
/// Leaves at levels `l_min..=level` cover what they can (case 1); the rest is
/// taken from tree nodes at `level` (case 2). Positions not covered by either
/// are left untouched.
pub(crate) fn fill_level_row(
    apr: &Apr,
    values: &[f32],
    tree_values: &[f32],
    level: usize,
    z: usize,
    x: usize,
    y_lo: usize,
    y_hi: usize,
    out: &mut [f32],
) {
    let access = apr.access();
    for lp in access.l_min()..=level {
        let s = level - lp;
        let r = access.row(lp, z >> s, x >> s);
        let ys = &access.y_idx()[r.clone()];
        let first = ys.partition_point(|&y| ((y as usize + 1) << s) <= y_lo);
        for (k, &y) in ys.iter().enumerate().skip(first) {
            let lo = (y as usize) << s;
            if lo >= y_hi {
                break;
            }
            let hi = (lo + (1 << s)).min(y_hi);
            out[lo.max(y_lo) - y_lo..hi - y_lo].fill(values[r.start + k]);
        }
    }
    if level < access.l_max() {
        let tree = apr.tree();
        let r = tree.row(level, z, x);
        let ys = &tree.y_idx()[r.clone()];
        let first = ys.partition_point(|&y| (y as usize) < y_lo);
        for (k, &y) in ys.iter().enumerate().skip(first) {
            let y = y as usize;
            if y >= y_hi {
                break;
            }
            out[y - y_lo] = tree_values[r.start + k];
        }
    }
}

fn check_tree_len(apr: &Apr, tree_values: &[f32]) -> Result<()> {
    if tree_values.len() != apr.num_tree_nodes() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} tree values", apr.num_tree_nodes()),
            found: tree_values.len().to_string(),
        });
    }
    Ok(())
}

/// Every pixel takes the value of its covering leaf.
pub fn reconstruct_full(apr: &Apr, values: &[f32]) -> Result<PixelVolume> {
    check_len(apr.access(), values.len())?;
    Ok(paint_level(apr, values, &[], apr.l_max()))
}

/// The image at `level`: cells covered by a leaf at that level or coarser take
/// the leaf value, all others the tree value at `level`.
pub fn reconstruct_level(apr: &Apr, values: &[f32], tree_values: &[f32], level: usize) -> Result<PixelVolume> {
    check_len(apr.access(), values.len())?;
    if !apr.access().contains_level(level) {
        return Err(Error::param(format!(
            "level {level} outside [{}, {}]",
            apr.l_min(),
            apr.l_max()
        )));
    }
    if level < apr.l_max() {
        check_tree_len(apr, tree_values)?;
    }
    Ok(paint_level(apr, values, tree_values, level))
}

fn paint_level(apr: &Apr, values: &[f32], tree_values: &[f32], level: usize) -> PixelVolume {
    let d = grid_dims(apr.dims(), apr.l_max(), level);
    let mut out = vec![0f32; d.len()];
    if !out.is_empty() {
        out.par_chunks_mut(d.x * d.y).enumerate().for_each(|(z, slab)| {
            for (x, row) in slab.chunks_mut(d.y).enumerate() {
                fill_level_row(apr, values, tree_values, level, z, x, 0, d.y, row);
            }
        });
    }
    PixelVolume::new(d, out).expect("length matches dims")
}

/// A window of a level image spanning the whole `y` extent, with `pad` cells
/// of boundary on every side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSpec {
    pub level: usize,
    pub z_range: Range<usize>,
    pub x_range: Range<usize>,
    pub pad: usize,
    pub pad_mode: PadMode,
}

/// Reconstruct the window described by `spec` at its level. Padding cells
/// inside the domain take real data; outside they follow `spec.pad_mode`.
pub fn reconstruct_patch(apr: &Apr, values: &[f32], tree_values: &[f32], spec: &PatchSpec) -> Result<PixelVolume> {
    check_len(apr.access(), values.len())?;
    let level = spec.level;
    if !apr.access().contains_level(level) {
        return Err(Error::param(format!("patch level {level} outside [{}, {}]", apr.l_min(), apr.l_max())));
    }
    if level < apr.l_max() {
        check_tree_len(apr, tree_values)?;
    }
    let d = grid_dims(apr.dims(), apr.l_max(), level);
    if spec.z_range.end > d.z || spec.x_range.end > d.x || spec.z_range.start > spec.z_range.end || spec.x_range.start > spec.x_range.end {
        return Err(Error::param(format!("patch {:?} x {:?} outside level grid {d}", spec.z_range, spec.x_range)));
    }
    let p = spec.pad;
    let od = Dims::new(spec.z_range.len() + 2 * p, spec.x_range.len() + 2 * p, d.y + 2 * p);
    let mut out = vec![0f32; od.len()];
    if out.is_empty() {
        return PixelVolume::new(od, out);
    }
    let map = |i: isize, n: usize| -> Option<usize> {
        if (0..n as isize).contains(&i) {
            Some(i as usize)
        } else {
            match spec.pad_mode {
                PadMode::Zero => None,
                PadMode::Reflect => Some(reflect_index(i, n)),
            }
        }
    };
    for (iz, slab) in out.chunks_mut(od.x * od.y).enumerate() {
        let Some(gz) = map(spec.z_range.start as isize + iz as isize - p as isize, d.z) else {
            continue;
        };
        for (ix, row) in slab.chunks_mut(od.y).enumerate() {
            let Some(gx) = map(spec.x_range.start as isize + ix as isize - p as isize, d.x) else {
                continue;
            };
            fill_level_row(apr, values, tree_values, level, gz, gx, 0, d.y, &mut row[p..p + d.y]);
            if spec.pad_mode == PadMode::Reflect {
                for j in 0..p {
                    row[j] = row[p + reflect_index(j as isize - p as isize, d.y)];
                    row[p + d.y + j] = row[p + reflect_index((d.y + j) as isize, d.y)];
                }
            }
        }
    }
    PixelVolume::new(od, out)
}
