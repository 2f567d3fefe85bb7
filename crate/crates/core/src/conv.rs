//! Discrete convolution on the APR and on dense pixel volumes.
//!
//! Each output particle at level `l` is the level-`l` stencil applied to the
//! level-`l` image around it. Work is split into `(level, z)` slices. A worker
//! keeps `k_z * k_x` rows of that image in a buffer of length
//! `y_dim + k_y - 1`, refilling only the rows that enter as `x` advances.

use rayon::prelude::*;

use crate::access::grid_dims;
use crate::apr::{check_len, Apr, ParticleValues};
use crate::error::{Error, Result};
use crate::reconstruct::{fill_level_row, PadMode};
use crate::stencil::{Stencil, StencilPyramid};
use crate::tree::fill_tree;
use crate::util::{reflect_index, split_ranges_mut};
use crate::volume::PixelVolume;

pub const DEFAULT_MAX_EXTENT: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvOptions {
    pub pad: PadMode,
    /// Visit only rows holding particles and clip the `y` traversal to their
    /// occupied span.
    pub skip_empty_rows: bool,
    /// Largest stencil extent accepted per axis.
    pub max_extent: usize,
}

impl Default for ConvOptions {
    fn default() -> Self {
        ConvOptions { pad: PadMode::Reflect, skip_empty_rows: true, max_extent: DEFAULT_MAX_EXTENT }
    }
}

/// An occupied row of one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowSpan {
    pub z: usize,
    pub x: usize,
    pub y_min: usize,
    pub y_max: usize,
}

/// Occupied rows per level, in storage order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIndex {
    l_min: usize,
    levels: Vec<Vec<RowSpan>>,
}

impl RowIndex {
    pub fn level(&self, level: usize) -> &[RowSpan] {
        &self.levels[level - self.l_min]
    }

    pub fn num_rows(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }
}

/// Rows with at least one leaf particle, with their `y` span.
pub fn nonempty_row_index(apr: &Apr) -> RowIndex {
    let a = apr.access();
    let levels = a
        .levels()
        .map(|l| {
            let d = a.level_dims(l);
            let mut rows = Vec::new();
            for z in 0..d.z {
                for x in 0..d.x {
                    let ys = a.row_y(l, z, x);
                    if let (Some(&lo), Some(&hi)) = (ys.first(), ys.last()) {
                        rows.push(RowSpan { z, x, y_min: lo as usize, y_max: hi as usize });
                    }
                }
            }
            rows
        })
        .collect();
    RowIndex { l_min: a.l_min(), levels }
}

/// Dot product of `w` with `v`, accumulated in four interleaved `f64` lanes.
#[inline]
fn dot(w: &[f64], v: &[f32]) -> f64 {
    let n = w.len();
    let v = &v[..n];
    let mut acc = [0f64; 4];
    let mut i = 0;
    while i + 4 <= n {
        acc[0] += w[i] * f64::from(v[i]);
        acc[1] += w[i + 1] * f64::from(v[i + 1]);
        acc[2] += w[i + 2] * f64::from(v[i + 2]);
        acc[3] += w[i + 3] * f64::from(v[i + 3]);
        i += 4;
    }
    while i < n {
        acc[i & 3] += w[i] * f64::from(v[i]);
        i += 1;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Per-row evaluation of a stencil against its `kz * kx` padded input rows.
///
/// Separable stencils take one combined `z`-`x` pass over the row window
/// followed by a `ky` dot per output; others a full dot per output. Values
/// depend only on the row contents, not on the window.
enum RowKernel {
    Full { wf: Vec<f64>, ky: usize },
    Separable { zx: Vec<f64>, y: Vec<f64> },
}

impl RowKernel {
    fn new(w: &Stencil) -> Self {
        let wf = w.flip();
        match wf.factor() {
            Some([fz, fx, fy]) => RowKernel::Separable { zx: fz.iter().flat_map(|a| fx.iter().map(move |b| a * b)).collect(), y: fy },
            None => RowKernel::Full { wf: wf.weights().to_vec(), ky: w.size()[2] },
        }
    }

    /// Call `emit(y, value)` for each `y` in `ys`. Buffer positions `lo..hi`
    /// of every row must be filled and cover `y..y + ky` for each `y`.
    fn run(&self, rows: &[&[f32]], lo: usize, hi: usize, tmp: &mut Vec<f64>, ys: impl Iterator<Item = usize>, mut emit: impl FnMut(usize, f32)) {
        match self {
            RowKernel::Full { wf, ky } => {
                for y in ys {
                    let mut s = 0f64;
                    for (r, row) in rows.iter().enumerate() {
                        s += dot(&wf[r * ky..(r + 1) * ky], &row[y..y + ky]);
                    }
                    emit(y, s as f32);
                }
            }
            RowKernel::Separable { zx, y: wy } => {
                tmp.clear();
                tmp.resize(hi - lo, 0.0);
                for (&f, row) in zx.iter().zip(rows) {
                    if f == 0.0 {
                        continue;
                    }
                    for (t, &v) in tmp.iter_mut().zip(&row[lo..hi]) {
                        *t += f * f64::from(v);
                    }
                }
                for y in ys {
                    emit(y, dot64(wy, &tmp[y - lo..]) as f32);
                }
            }
        }
    }
}

#[inline]
fn dot64(w: &[f64], v: &[f64]) -> f64 {
    let n = w.len();
    let v = &v[..n];
    let mut acc = [0f64; 4];
    let mut i = 0;
    while i + 4 <= n {
        acc[0] += w[i] * v[i];
        acc[1] += w[i + 1] * v[i + 1];
        acc[2] += w[i + 2] * v[i + 2];
        acc[3] += w[i + 3] * v[i + 3];
        i += 4;
    }
    while i < n {
        acc[i & 3] += w[i] * v[i];
        i += 1;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

fn check_extent(w: &Stencil, max_extent: usize) -> Result<()> {
    if w.size().iter().any(|&k| k > max_extent) {
        return Err(Error::Capability(format!(
            "{} exceeds the maximum extent {max_extent} per axis",
            w
        )));
    }
    Ok(())
}

/// Map a possibly out-of-domain coordinate; `None` means a zero row.
#[inline]
fn map_coord(i: isize, n: usize, pad: PadMode) -> Option<usize> {
    if (0..n as isize).contains(&i) {
        Some(i as usize)
    } else {
        match pad {
            PadMode::Zero => None,
            PadMode::Reflect => Some(reflect_index(i, n)),
        }
    }
}

/// Fill the `y` boundary of a padded row whose in-domain part
/// `row[c .. c + n]` is already set.
fn pad_row_y(row: &mut [f32], c: usize, n: usize, lo: usize, hi: usize, pad: PadMode) {
    for p in (lo..hi).filter(|&p| p < c || p >= c + n) {
        row[p] = match pad {
            PadMode::Zero => 0.0,
            PadMode::Reflect => row[c + reflect_index(p as isize - c as isize, n)],
        };
    }
}

struct Slot {
    /// Virtual (unmapped) x coordinate held, and the filled window of
    /// buffer positions.
    vx: isize,
    lo: usize,
    hi: usize,
}

/// Reusable convolution state for one APR: the occupied-row index.
#[derive(Debug, Clone)]
pub struct Convolver<'a> {
    apr: &'a Apr,
    rows: RowIndex,
    opts: ConvOptions,
}

impl<'a> Convolver<'a> {
    pub fn new(apr: &'a Apr, opts: ConvOptions) -> Self {
        Convolver { apr, rows: nonempty_row_index(apr), opts }
    }

    pub fn options(&self) -> ConvOptions {
        self.opts
    }

    pub fn row_index(&self) -> &RowIndex {
        &self.rows
    }

    /// Convolve with a pyramid, filling the tree from `values` first.
    pub fn convolve(&self, values: &[f32], pyramid: &StencilPyramid) -> Result<ParticleValues> {
        let tree = fill_tree(self.apr, values)?;
        self.convolve_with_tree(values, &tree, pyramid)
    }

    pub fn convolve_with_tree(&self, values: &[f32], tree_values: &[f32], pyramid: &StencilPyramid) -> Result<ParticleValues> {
        let mut out = vec![0f32; values.len()];
        self.convolve_into(values, tree_values, pyramid, &mut out)?;
        Ok(ParticleValues::new(out))
    }

    /// Write the convolution of `values` into `out`.
    pub fn convolve_into(&self, values: &[f32], tree_values: &[f32], pyramid: &StencilPyramid, out: &mut [f32]) -> Result<()> {
        let apr = self.apr;
        let access = apr.access();
        check_len(access, values.len())?;
        check_len(access, out.len())?;
        if tree_values.len() != apr.num_tree_nodes() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} tree values", apr.num_tree_nodes()),
                found: tree_values.len().to_string(),
            });
        }
        if !pyramid.covers(apr.l_min(), apr.l_max()) {
            return Err(Error::param(format!(
                "pyramid covers levels {}..={}, APR needs {}..={}",
                pyramid.l_min(),
                pyramid.l_max(),
                apr.l_min(),
                apr.l_max()
            )));
        }
        for l in access.levels() {
            check_extent(pyramid.level(l), self.opts.max_extent)?;
        }

        // One unit per (level, z) slice holding particles, in storage order.
        let mut units = Vec::new();
        let mut ranges = Vec::new();
        for l in access.levels() {
            let rows = self.rows.level(l);
            let mut i = 0;
            while i < rows.len() {
                let z = rows[i].z;
                let j = i + rows[i..].partition_point(|r| r.z == z);
                units.push((l, z, i..j));
                ranges.push(access.slice_range(l, z));
                i = j;
            }
        }
        let chunks = split_ranges_mut(out, 0, &ranges);
        units
            .into_par_iter()
            .zip(chunks)
            .with_max_len(1)
            .for_each(|((l, z, span), chunk)| {
                let base = access.slice_range(l, z).start;
                self.slice(values, tree_values, pyramid.level(l), l, z, &self.rows.level(l)[span], chunk, base);
            });
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn slice(
        &self,
        values: &[f32],
        tree_values: &[f32],
        w: &Stencil,
        l: usize,
        z: usize,
        spans: &[RowSpan],
        out: &mut [f32],
        base: usize,
    ) {
        let apr = self.apr;
        let access = apr.access();
        let pad = self.opts.pad;
        let d = grid_dims(apr.dims(), apr.l_max(), l);
        let [kz, kx, ky] = w.size();
        let [cz, cx, cy] = w.center();
        let kernel = RowKernel::new(w);
        let mut tmp = Vec::new();
        let len = d.y + ky - 1;
        let mut buf = vec![0f32; kz * kx * len];
        let mut slots: Vec<Slot> = (0..kz * kx).map(|_| Slot { vx: isize::MIN, lo: 0, hi: 0 }).collect();
        let gz: Vec<Option<usize>> = (0..kz).map(|qa| map_coord(z as isize - cz as isize + qa as isize, d.z, pad)).collect();

        let full = RowSpan { z, x: 0, y_min: 0, y_max: d.y.saturating_sub(1) };
        let all_x: Vec<RowSpan> = if self.opts.skip_empty_rows {
            Vec::new()
        } else {
            (0..d.x).map(|x| RowSpan { x, ..full }).collect()
        };
        let todo: &[RowSpan] = if self.opts.skip_empty_rows { spans } else { &all_x };

        for span in todo {
            let x = span.x;
            let prow = access.row(l, z, x);
            if prow.is_empty() {
                continue;
            }
            // Buffer positions needed: [y_min, y_max + ky - 1].
            let (lo, hi) = if self.opts.skip_empty_rows { (span.y_min, span.y_max + ky) } else { (0, len) };
            for qa in 0..kz {
                for qb in 0..kx {
                    let vx = x as isize - cx as isize + qb as isize;
                    let s = qa * kx + vx.rem_euclid(kx as isize) as usize;
                    let slot = &mut slots[s];
                    if slot.vx == vx && slot.lo <= lo && hi <= slot.hi {
                        continue;
                    }
                    let row = &mut buf[s * len..(s + 1) * len];
                    let src = match (gz[qa], map_coord(vx, d.x, pad)) {
                        (Some(a), Some(b)) => Some((a, b)),
                        _ => None,
                    };
                    match src {
                        None => row[lo..hi].fill(0.0),
                        Some((sz, sx)) => {
                            let inside_lo = lo.max(cy) - cy;
                            let inside_hi = (hi - cy).min(d.y);
                            let spills = lo < cy || hi > cy + d.y;
                            let (fl, fh) = if spills && pad == PadMode::Reflect { (0, d.y) } else { (inside_lo, inside_hi) };
                            if fl < fh {
                                fill_level_row(apr, values, tree_values, l, sz, sx, fl, fh, &mut row[cy + fl..cy + fh]);
                            }
                            if spills {
                                pad_row_y(row, cy, d.y, lo, hi, pad);
                            }
                        }
                    }
                    if slot.vx == vx && slot.lo <= hi && lo <= slot.hi {
                        slot.lo = slot.lo.min(lo);
                        slot.hi = slot.hi.max(hi);
                    } else {
                        *slot = Slot { vx, lo, hi };
                    }
                }
            }
            let rows: Vec<&[f32]> = (0..kz * kx)
                .map(|r| {
                    let (qa, qb) = (r / kx, r % kx);
                    let vx = x as isize - cx as isize + qb as isize;
                    let s = qa * kx + vx.rem_euclid(kx as isize) as usize;
                    &buf[s * len..(s + 1) * len]
                })
                .collect();
            let ys = &access.y_idx()[prow.clone()];
            let mut i = prow.start - base;
            kernel.run(&rows, lo, hi, &mut tmp, ys.iter().map(|&y| y as usize), |_, v| {
                out[i] = v;
                i += 1;
            });
        }
    }
}

/// Convolve the particle values with a per-level stencil pyramid. Requires
/// the filled tree values (see [`fill_tree`]).
pub fn convolve_apr(
    apr: &Apr,
    values: &[f32],
    tree_values: &[f32],
    pyramid: &StencilPyramid,
    opts: ConvOptions,
) -> Result<ParticleValues> {
    Convolver::new(apr, opts).convolve_with_tree(values, tree_values, pyramid)
}

/// Dense convolution of a pixel volume.
pub fn convolve_pixels(v: &PixelVolume, w: &Stencil, pad: PadMode) -> Result<PixelVolume> {
    let d = v.dims();
    if d.is_empty() {
        return Ok(v.clone());
    }
    let [kz, kx, ky] = w.size();
    let [cz, cx, cy] = w.center();
    let kernel = RowKernel::new(w);
    let len = d.y + ky - 1;
    // Padded copies of every (z, x) row, including the z/x halo.
    let pz = d.z + kz - 1;
    let px = d.x + kx - 1;
    let mut padded = vec![0f32; pz * px * len];
    for iz in 0..pz {
        let sz = map_coord(iz as isize - cz as isize, d.z, pad);
        for ix in 0..px {
            let sx = map_coord(ix as isize - cx as isize, d.x, pad);
            let row = &mut padded[(iz * px + ix) * len..(iz * px + ix + 1) * len];
            if let (Some(sz), Some(sx)) = (sz, sx) {
                let b = d.index(sz, sx, 0);
                row[cy..cy + d.y].copy_from_slice(&v.values()[b..b + d.y]);
                pad_row_y(row, cy, d.y, 0, len, pad);
            }
        }
    }
    let mut out = vec![0f32; d.len()];
    out.par_chunks_mut(d.x * d.y).enumerate().for_each(|(z, slab)| {
        let mut rows: Vec<&[f32]> = Vec::with_capacity(kz * kx);
        let mut tmp = Vec::new();
        for (x, orow) in slab.chunks_mut(d.y).enumerate() {
            rows.clear();
            for qa in 0..kz {
                for qb in 0..kx {
                    let r = (z + qa) * px + x + qb;
                    rows.push(&padded[r * len..(r + 1) * len]);
                }
            }
            kernel.run(&rows, 0, len, &mut tmp, 0..d.y, |y, v| orow[y] = v);
        }
    });
    PixelVolume::new(d, out)
}
