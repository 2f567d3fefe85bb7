//! Dense voxel volumes in `(z, x, y)` order with `y` contiguous.

use std::fmt;

use crate::error::{Error, Result};

/// Extent of a volume as `(n_z, n_x, n_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub z: usize,
    pub x: usize,
    pub y: usize,
}

impl Dims {
    pub const fn new(z: usize, x: usize, y: usize) -> Self {
        Dims { z, x, y }
    }

    pub const fn cube(n: usize) -> Self {
        Dims { z: n, x: n, y: n }
    }

    pub const fn len(&self) -> usize {
        self.z * self.x * self.y
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, z: usize, x: usize, y: usize) -> usize {
        (z * self.x + x) * self.y + y
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.z, self.x, self.y]
    }

    pub const fn from_array(a: [usize; 3]) -> Self {
        Dims { z: a[0], x: a[1], y: a[2] }
    }

    pub fn max_edge(&self) -> usize {
        self.z.max(self.x).max(self.y)
    }

    pub fn contains(&self, z: usize, x: usize, y: usize) -> bool {
        z < self.z && x < self.x && y < self.y
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.z, self.x, self.y)
    }
}

/// Dense scalar field. Values are stored as `f32`; 16-bit input is converted
/// on ingest.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelVolume {
    dims: Dims,
    values: Vec<f32>,
}

impl PixelVolume {
    pub fn new(dims: Dims, values: Vec<f32>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values for {dims}", dims.len()),
                found: values.len().to_string(),
            });
        }
        Ok(PixelVolume { dims, values })
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        PixelVolume { dims, values: vec![value; dims.len()] }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(dims.len());
        for z in 0..dims.z {
            for x in 0..dims.x {
                for y in 0..dims.y {
                    values.push(f(z, x, y));
                }
            }
        }
        PixelVolume { dims, values }
    }

    pub fn from_u16(dims: Dims, data: &[u16]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| f32::from(v)).collect())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, z: usize, x: usize, y: usize) -> f32 {
        self.values[self.dims.index(z, x, y)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, x: usize, y: usize, v: f32) {
        let i = self.dims.index(z, x, y);
        self.values[i] = v;
    }

    /// `(min, max)` over all values; `(0, 0)` for an empty volume.
    pub fn min_max(&self) -> (f32, f32) {
        if self.values.is_empty() {
            return (0.0, 0.0);
        }
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn range(&self) -> f32 {
        let (lo, hi) = self.min_max();
        hi - lo
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|&v| f64::from(v)).sum::<f64>() / self.values.len() as f64
    }

    pub(crate) fn ensure_same_dims(&self, other: &PixelVolume) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims.to_string(),
                found: other.dims.to_string(),
            });
        }
        Ok(())
    }
}
