//! Linear (CSR-style) access structure over particle cells.
//!
//! Particles are indexed linearly in `level -> z -> x -> y` order. Each level
//! is a sparse image whose rows run along `y`; `y_idx` holds the `y` index of
//! every particle and `xz_end` the cumulative end offset of every `(level, z,
//! x)` row. `level_offset` locates the first row of each level in `xz_end`.
//!
//! The same structure describes both the leaf particles of an APR and the
//! interior nodes of its tree.

use std::ops::Range;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::volume::Dims;

/// Finest level and coarsest leaf level for a volume of the given extent.
///
/// The finest level `l_max` is the smallest `k` with `2^k >= max edge`; the
/// coarsest leaf level is 1, or 0 for a single-voxel volume.
pub fn level_bounds(dims: Dims) -> (usize, usize) {
    let edge = dims.max_edge().max(1);
    let l_max = edge.next_power_of_two().trailing_zeros() as usize;
    (l_max.min(1), l_max)
}

/// Grid extent at `level` for a volume whose pixels live at `pixel_level`.
pub fn grid_dims(pixel_dims: Dims, pixel_level: usize, level: usize) -> Dims {
    let shift = pixel_level - level;
    let up = |n: usize| (n + (1 << shift) - 1) >> shift;
    Dims::new(up(pixel_dims.z), up(pixel_dims.x), up(pixel_dims.y))
}

/// Cell-center coordinate, in pixel units, of index `index` at `level`.
///
/// A cell at level `l` spans `2^(l_max - l)` pixels; its origin is
/// `index * 2^(l_max - l)` and its center sits half a cell further along.
pub fn particle_position(level: usize, index: [usize; 3], l_max: usize) -> [f64; 3] {
    let size = (1u64 << (l_max - level)) as f64;
    index.map(|i| (i as f64 + 0.5) * size - 0.5)
}

/// A particle cell: a level plus a multi-index on that level's grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParticleCell {
    pub level: usize,
    pub z: usize,
    pub x: usize,
    pub y: usize,
}

impl ParticleCell {
    pub fn position(&self, l_max: usize) -> [f64; 3] {
        particle_position(self.level, [self.z, self.x, self.y], l_max)
    }

    pub fn parent(&self) -> ParticleCell {
        ParticleCell { level: self.level - 1, z: self.z / 2, x: self.x / 2, y: self.y / 2 }
    }
}

/// A visited particle: its cell and its position in the value vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParticleRef {
    pub cell: ParticleCell,
    pub index: usize,
}

/// First structural problem found by [`LinearAccess::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("level_offset has {found} entries, expected {expected}")]
    LevelOffsetLength { expected: usize, found: usize },
    #[error("level {level} spans {found} rows, expected {expected}")]
    LevelRowCount { level: usize, expected: u64, found: u64 },
    #[error("xz_end has {found} rows, expected {expected}")]
    RowCount { expected: usize, found: usize },
    #[error("xz_end decreases at row {row}")]
    RowEndDecreasing { row: usize },
    #[error("xz_end ends at {found}, but y_idx has {expected} entries")]
    RowEndMismatch { expected: usize, found: u64 },
    #[error("non-increasing y in row ({level}, {z}, {x}) at particle {index}")]
    NonIncreasingY { level: usize, z: usize, x: usize, index: usize },
    #[error("y index {y} out of range in row ({level}, {z}, {x})")]
    YOutOfRange { level: usize, z: usize, x: usize, y: usize },
    #[error("double coverage of pixel ({z}, {x}, {y})")]
    DoubleCoverage { z: usize, x: usize, y: usize },
    #[error("pixel ({z}, {x}, {y}) is not covered by any particle cell")]
    Uncovered { z: usize, x: usize, y: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearAccess {
    l_min: usize,
    l_max: usize,
    /// Level at which one cell is one pixel. Equals `l_max` for leaf access
    /// and `l_max + 1` for tree access.
    pixel_level: usize,
    pixel_dims: Dims,
    level_dims: Vec<Dims>,
    y_idx: Vec<u16>,
    xz_end: Vec<u64>,
    level_offset: Vec<u64>,
}

impl LinearAccess {
    /// Assemble from raw arrays. The arrays are not checked; call
    /// [`validate`](Self::validate) for untrusted input.
    pub fn from_parts(
        l_min: usize,
        l_max: usize,
        pixel_level: usize,
        pixel_dims: Dims,
        y_idx: Vec<u16>,
        xz_end: Vec<u64>,
        level_offset: Vec<u64>,
    ) -> Self {
        let level_dims = (l_min..=l_max).map(|l| grid_dims(pixel_dims, pixel_level, l)).collect();
        LinearAccess { l_min, l_max, pixel_level, pixel_dims, level_dims, y_idx, xz_end, level_offset }
    }

    pub fn l_min(&self) -> usize {
        self.l_min
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<usize> {
        self.l_min..=self.l_max
    }

    pub fn pixel_level(&self) -> usize {
        self.pixel_level
    }

    pub fn pixel_dims(&self) -> Dims {
        self.pixel_dims
    }

    pub fn level_dims(&self, level: usize) -> Dims {
        self.level_dims[level - self.l_min]
    }

    pub fn y_idx(&self) -> &[u16] {
        &self.y_idx
    }

    pub fn xz_end(&self) -> &[u64] {
        &self.xz_end
    }

    pub fn level_offset(&self) -> &[u64] {
        &self.level_offset
    }

    pub fn num_particles(&self) -> usize {
        self.y_idx.len()
    }

    pub fn num_rows(&self) -> usize {
        self.xz_end.len()
    }

    pub fn contains_level(&self, level: usize) -> bool {
        (self.l_min..=self.l_max).contains(&level)
    }

    #[inline]
    fn row_number(&self, level: usize, z: usize, x: usize) -> usize {
        self.level_offset[level - self.l_min] as usize + z * self.level_dims[level - self.l_min].x + x
    }

    /// Particle index range of row `(level, z, x)`, checked.
    pub fn get_row(&self, level: usize, z: usize, x: usize) -> Result<(usize, usize)> {
        if !self.contains_level(level) {
            return Err(Error::RowOutOfRange { level, z, x });
        }
        let d = self.level_dims(level);
        if z >= d.z || x >= d.x {
            return Err(Error::RowOutOfRange { level, z, x });
        }
        let r = self.row(level, z, x);
        Ok((r.start, r.end))
    }

    /// Particle index range of row `(level, z, x)`. Coordinates must be in range.
    #[inline]
    pub fn row(&self, level: usize, z: usize, x: usize) -> Range<usize> {
        let row = self.row_number(level, z, x);
        let begin = if row == 0 { 0 } else { self.xz_end[row - 1] as usize };
        begin..self.xz_end[row] as usize
    }

    /// `y` indices of row `(level, z, x)`.
    #[inline]
    pub fn row_y(&self, level: usize, z: usize, x: usize) -> &[u16] {
        &self.y_idx[self.row(level, z, x)]
    }

    /// Particle index range covering all of `level`.
    pub fn level_range(&self, level: usize) -> Range<usize> {
        let i = level - self.l_min;
        let first = self.level_offset[i] as usize;
        let last = self.level_offset[i + 1] as usize;
        let begin = if first == 0 { 0 } else { self.xz_end[first - 1] as usize };
        let end = if last == 0 { 0 } else { self.xz_end[last - 1] as usize };
        begin..end
    }

    /// Particle index range covering `z`-slice `z` of `level`.
    pub fn slice_range(&self, level: usize, z: usize) -> Range<usize> {
        let d = self.level_dims(level);
        if d.x == 0 {
            return 0..0;
        }
        let first = self.row(level, z, 0).start;
        let last = self.row(level, z, d.x - 1).end;
        first..last
    }

    /// Index of the particle at `(level, z, x, y)`, if present.
    pub fn find(&self, level: usize, z: usize, x: usize, y: usize) -> Option<usize> {
        if !self.contains_level(level) {
            return None;
        }
        let d = self.level_dims(level);
        if z >= d.z || x >= d.x || y > u16::MAX as usize {
            return None;
        }
        let r = self.row(level, z, x);
        self.y_idx[r.clone()].binary_search(&(y as u16)).ok().map(|k| r.start + k)
    }

    /// Visit every particle in `level -> z -> x -> y` order.
    pub fn for_each_particle(&self, mut visit: impl FnMut(usize, usize, usize, usize, usize)) {
        for level in self.levels() {
            let d = self.level_dims(level);
            for z in 0..d.z {
                for x in 0..d.x {
                    for i in self.row(level, z, x) {
                        visit(level, z, x, self.y_idx[i] as usize, i);
                    }
                }
            }
        }
    }

    pub fn particles(&self) -> Particles<'_> {
        Particles::new(self)
    }

    /// Pixel ranges covered by a cell, clipped to the volume.
    pub fn footprint(&self, level: usize, z: usize, x: usize, y: usize) -> [Range<usize>; 3] {
        cell_footprint(self.pixel_dims, self.pixel_level, level, [z, x, y])
    }

    /// Number of pixels covered by a cell after clipping.
    pub fn footprint_volume(&self, level: usize, z: usize, x: usize, y: usize) -> u64 {
        self.footprint(level, z, x, y).iter().map(|r| r.len() as u64).product()
    }

    /// Level of the unique cell covering pixel `(z, x, y)`.
    pub fn resolution_level_at(&self, z: usize, x: usize, y: usize) -> Result<usize> {
        if !self.pixel_dims.contains(z, x, y) {
            return Err(Error::PixelOutOfRange { z, x, y });
        }
        let mut found = None;
        for level in self.levels() {
            let s = self.pixel_level - level;
            if self.find(level, z >> s, x >> s, y >> s).is_some() {
                if found.is_some() {
                    return Err(Error::integrity(format!("pixel ({z}, {x}, {y}) is covered twice")));
                }
                found = Some(level);
            }
        }
        found.ok_or_else(|| Error::integrity(format!("pixel ({z}, {x}, {y}) is not covered")))
    }

    /// Check the array invariants, then that the cells partition the volume.
    /// Empty rows are legal.
    ///
    /// Tree access does not partition the volume; use
    /// [`validate_arrays`](Self::validate_arrays) for it.
    pub fn validate(&self) -> Result<(), Violation> {
        self.validate_arrays()?;
        self.validate_partition()
    }

    /// Array-level invariants only (no coverage check).
    pub fn validate_arrays(&self) -> Result<(), Violation> {
        let n_levels = self.l_max + 1 - self.l_min;
        if self.level_offset.len() != n_levels + 1 {
            return Err(Violation::LevelOffsetLength { expected: n_levels + 1, found: self.level_offset.len() });
        }
        if self.level_offset[0] != 0 {
            return Err(Violation::LevelRowCount { level: self.l_min, expected: 0, found: self.level_offset[0] });
        }
        for level in self.levels() {
            let i = level - self.l_min;
            let d = self.level_dims[i];
            let expected = (d.z * d.x) as u64;
            let found = self.level_offset[i + 1].wrapping_sub(self.level_offset[i]);
            if found != expected {
                return Err(Violation::LevelRowCount { level, expected, found });
            }
        }
        let rows = *self.level_offset.last().unwrap_or(&0) as usize;
        if self.xz_end.len() != rows {
            return Err(Violation::RowCount { expected: rows, found: self.xz_end.len() });
        }
        for row in 1..self.xz_end.len() {
            if self.xz_end[row] < self.xz_end[row - 1] {
                return Err(Violation::RowEndDecreasing { row });
            }
        }
        let last = self.xz_end.last().copied().unwrap_or(0);
        if last != self.y_idx.len() as u64 {
            return Err(Violation::RowEndMismatch { expected: self.y_idx.len(), found: last });
        }
        for level in self.levels() {
            let d = self.level_dims(level);
            for z in 0..d.z {
                for x in 0..d.x {
                    let r = self.row(level, z, x);
                    let ys = &self.y_idx[r.clone()];
                    for (k, &y) in ys.iter().enumerate() {
                        if y as usize >= d.y {
                            return Err(Violation::YOutOfRange { level, z, x, y: y as usize });
                        }
                        if k > 0 && ys[k - 1] >= y {
                            return Err(Violation::NonIncreasingY { level, z, x, index: r.start + k });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_partition(&self) -> Result<(), Violation> {
        let dims = self.pixel_dims;
        let mut cover = vec![0u8; dims.len()];
        let mut first_double = None;
        self.for_each_particle(|level, z, x, y, _| {
            let [rz, rx, ry] = self.footprint(level, z, x, y);
            for pz in rz {
                for px in rx.clone() {
                    let base = dims.index(pz, px, 0);
                    for py in ry.clone() {
                        let c = &mut cover[base + py];
                        if *c > 0 && first_double.is_none() {
                            first_double = Some((pz, px, py));
                        }
                        *c = c.saturating_add(1);
                    }
                }
            }
        });
        if let Some((z, x, y)) = first_double {
            return Err(Violation::DoubleCoverage { z, x, y });
        }
        if let Some(i) = cover.iter().position(|&c| c == 0) {
            let y = i % dims.y;
            let x = (i / dims.y) % dims.x;
            let z = i / (dims.y * dims.x);
            return Err(Violation::Uncovered { z, x, y });
        }
        Ok(())
    }
}

/// Pixel ranges covered by cell `index` at `level`, clipped to `pixel_dims`.
pub fn cell_footprint(pixel_dims: Dims, pixel_level: usize, level: usize, index: [usize; 3]) -> [Range<usize>; 3] {
    let s = pixel_level - level;
    let n = pixel_dims.as_array();
    [0, 1, 2].map(|d| {
        let lo = (index[d] << s).min(n[d]);
        let hi = ((index[d] + 1) << s).min(n[d]);
        lo..hi
    })
}

/// Iterator over the particles of a [`LinearAccess`] in storage order.
pub struct Particles<'a> {
    access: &'a LinearAccess,
    level: usize,
    z: usize,
    x: usize,
    next: usize,
    row_end: usize,
    done: bool,
}

impl<'a> Particles<'a> {
    fn new(access: &'a LinearAccess) -> Self {
        let mut it = Particles { access, level: access.l_min, z: 0, x: 0, next: 0, row_end: 0, done: false };
        it.load_row();
        it
    }

    fn load_row(&mut self) {
        while self.level <= self.access.l_max {
            let d = self.access.level_dims(self.level);
            if self.z < d.z {
                if self.x < d.x {
                    let r = self.access.row(self.level, self.z, self.x);
                    self.next = r.start;
                    self.row_end = r.end;
                    return;
                }
                self.x = 0;
                self.z += 1;
                continue;
            }
            self.z = 0;
            self.x = 0;
            self.level += 1;
        }
        self.done = true;
    }

    fn advance_row(&mut self) {
        self.x += 1;
        self.load_row();
    }
}

impl Iterator for Particles<'_> {
    type Item = ParticleRef;

    fn next(&mut self) -> Option<ParticleRef> {
        while !self.done {
            if self.next < self.row_end {
                let index = self.next;
                self.next += 1;
                let cell = ParticleCell {
                    level: self.level,
                    z: self.z,
                    x: self.x,
                    y: self.access.y_idx[index] as usize,
                };
                return Some(ParticleRef { cell, index });
            }
            self.advance_row();
        }
        None
    }
}

/// Row-by-row assembly of a [`LinearAccess`].
///
/// Rows must be pushed in `level -> z -> x` order, one call per row, with
/// strictly increasing `y` within each row.
#[derive(Debug)]
pub struct AccessBuilder {
    l_min: usize,
    l_max: usize,
    pixel_level: usize,
    pixel_dims: Dims,
    y_idx: Vec<u16>,
    xz_end: Vec<u64>,
    level_offset: Vec<u64>,
}

impl AccessBuilder {
    pub fn new(l_min: usize, l_max: usize, pixel_level: usize, pixel_dims: Dims) -> Self {
        let mut level_offset = Vec::with_capacity(l_max + 2 - l_min);
        let mut rows = 0u64;
        level_offset.push(0);
        for l in l_min..=l_max {
            let d = grid_dims(pixel_dims, pixel_level, l);
            rows += (d.z * d.x) as u64;
            level_offset.push(rows);
        }
        AccessBuilder {
            l_min,
            l_max,
            pixel_level,
            pixel_dims,
            y_idx: Vec::new(),
            xz_end: Vec::with_capacity(rows as usize),
            level_offset,
        }
    }

    pub fn push_row(&mut self, ys: impl IntoIterator<Item = u16>) {
        self.y_idx.extend(ys);
        self.xz_end.push(self.y_idx.len() as u64);
    }

    pub fn rows_pushed(&self) -> usize {
        self.xz_end.len()
    }

    pub fn finish(self) -> LinearAccess {
        debug_assert_eq!(self.xz_end.len() as u64, *self.level_offset.last().unwrap());
        LinearAccess::from_parts(
            self.l_min,
            self.l_max,
            self.pixel_level,
            self.pixel_dims,
            self.y_idx,
            self.xz_end,
            self.level_offset,
        )
    }
}
