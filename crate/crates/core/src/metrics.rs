//! Image quality metrics, effective throughput and memory accounting.

use crate::access::{grid_dims, level_bounds, LinearAccess};
use crate::apr::Apr;
use crate::error::{Error, Result};
use crate::volume::{Dims, PixelVolume};

/// Root mean squared error over the intensity range of the reference `a`.
/// A constant reference uses a range of 1.
pub fn nrmse(a: &PixelVolume, b: &PixelVolume) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let range = f64::from(a.range());
    let range = if range > 0.0 { range } else { 1.0 };
    Ok(mse(a, b).sqrt() / range)
}

fn mse(a: &PixelVolume, b: &PixelVolume) -> f64 {
    if a.values().is_empty() {
        return 0.0;
    }
    let s: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    s / a.values().len() as f64
}

/// Peak signal-to-noise ratio in dB with peak `max(a) - min(a)`;
/// `f64::INFINITY` when the volumes are equal.
pub fn psnr(a: &PixelVolume, b: &PixelVolume) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let m = mse(a, b);
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    let range = f64::from(a.range());
    let range = if range > 0.0 { range } else { 1.0 };
    Ok(10.0 * (range * range / m).log10())
}

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// 3D prefix sums with a zero border: `p[(z+1, x+1, y+1)]` is the sum over
/// `[0, z] x [0, x] x [0, y]`.
struct Integral {
    d: [usize; 3],
    p: Vec<f64>,
}

impl Integral {
    fn new(dims: Dims, f: impl Fn(usize) -> f64) -> Self {
        let d = [dims.z + 1, dims.x + 1, dims.y + 1];
        let mut p = vec![0f64; d[0] * d[1] * d[2]];
        let at = |z: usize, x: usize, y: usize| (z * d[1] + x) * d[2] + y;
        for z in 0..dims.z {
            for x in 0..dims.x {
                for y in 0..dims.y {
                    let v = f(dims.index(z, x, y));
                    p[at(z + 1, x + 1, y + 1)] = v + p[at(z, x + 1, y + 1)] + p[at(z + 1, x, y + 1)] + p[at(z + 1, x + 1, y)]
                        - p[at(z, x, y + 1)]
                        - p[at(z, x + 1, y)]
                        - p[at(z + 1, x, y)]
                        + p[at(z, x, y)];
                }
            }
        }
        Integral { d, p }
    }

    /// Sum over the box `[z, z+w0) x [x, x+w1) x [y, y+w2)`.
    fn boxed(&self, z: usize, x: usize, y: usize, w: [usize; 3]) -> f64 {
        let d = self.d;
        let at = |z: usize, x: usize, y: usize| self.p[(z * d[1] + x) * d[2] + y];
        let (z1, x1, y1) = (z + w[0], x + w[1], y + w[2]);
        at(z1, x1, y1) - at(z, x1, y1) - at(z1, x, y1) - at(z1, x1, y) + at(z, x, y1) + at(z, x1, y) + at(z1, x, y)
            - at(z, x, y)
    }
}

/// Mean structural similarity over all fully contained `7^3` windows (the
/// window shrinks to the extent along short axes). Uniform window weights,
/// population statistics, `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2` with
/// `L = max(a) - min(a)`.
pub fn ssim(a: &PixelVolume, b: &PixelVolume) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let dims = a.dims();
    if dims.is_empty() {
        return Ok(1.0);
    }
    let range = f64::from(a.range());
    let range = if range > 0.0 { range } else { 1.0 };
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let av = a.values();
    let bv = b.values();
    let sa = Integral::new(dims, |i| f64::from(av[i]));
    let sb = Integral::new(dims, |i| f64::from(bv[i]));
    let saa = Integral::new(dims, |i| f64::from(av[i]).powi(2));
    let sbb = Integral::new(dims, |i| f64::from(bv[i]).powi(2));
    let sab = Integral::new(dims, |i| f64::from(av[i]) * f64::from(bv[i]));
    let w = dims.as_array().map(|n| n.min(SSIM_WINDOW));
    let n = (w[0] * w[1] * w[2]) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for z in 0..=dims.z - w[0] {
        for x in 0..=dims.x - w[1] {
            for y in 0..=dims.y - w[2] {
                let ma = sa.boxed(z, x, y, w) / n;
                let mb = sb.boxed(z, x, y, w) / n;
                let va = (saa.boxed(z, x, y, w) / n - ma * ma).max(0.0);
                let vb = (sbb.boxed(z, x, y, w) / n - mb * mb).max(0.0);
                let cov = sab.boxed(z, x, y, w) / n - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub nrmse: f64,
}

/// PSNR, SSIM and NRMSE of `b` against the reference `a`.
pub fn quality_metrics(a: &PixelVolume, b: &PixelVolume) -> Result<QualityMetrics> {
    Ok(QualityMetrics { psnr: psnr(a, b)?, ssim: ssim(a, b)?, nrmse: nrmse(a, b)? })
}

/// Pixel-image bytes processed per second.
pub fn effective_throughput(dims: Dims, bytes_per_element: usize, wall_time_s: f64) -> Result<f64> {
    if !(wall_time_s > 0.0) {
        return Err(Error::param(format!("wall time must be positive, got {wall_time_s}")));
    }
    Ok(dims.len() as f64 * bytes_per_element as f64 / wall_time_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub apr_bytes: u64,
    pub pixel_bytes: u64,
}

impl MemoryEstimate {
    pub fn ratio(&self) -> f64 {
        self.apr_bytes as f64 / self.pixel_bytes as f64
    }
}

/// Bytes of the three arrays of an access structure as stored in memory and
/// on disk: `level_offset` and `xz_end` as `u64`, `y_idx` as `u16`.
pub fn access_bytes(a: &LinearAccess) -> u64 {
    (a.level_offset().len() * 8 + a.xz_end().len() * 8 + a.y_idx().len() * 2) as u64
}

/// Memory for one operation with input and output elements of `bytes_in`
/// and `bytes_out` bytes. The APR side counts leaf values in and out, one
/// `f32` per tree node and both access structures.
pub fn memory_estimate(apr: &Apr, bytes_in: usize, bytes_out: usize) -> MemoryEstimate {
    let per = (bytes_in + bytes_out) as u64;
    let apr_bytes = apr.num_particles() as u64 * per
        + apr.num_tree_nodes() as u64 * 4
        + access_bytes(apr.access())
        + access_bytes(apr.tree());
    MemoryEstimate { apr_bytes, pixel_bytes: apr.dims().len() as u64 * per }
}

/// [`memory_estimate`] for a hypothetical APR of `dims` at computational
/// ratio `cr`, without building it. The tree is taken as `1/7` of the leaf
/// count (its exact size for a dense APR of a large power-of-two cube) and
/// every row of every level is counted.
pub fn memory_model(dims: Dims, cr: f64, bytes_in: usize, bytes_out: usize) -> MemoryEstimate {
    let n = dims.len() as f64;
    let n_p = n / cr;
    let n_t = n_p / 7.0;
    let (l_min, l_max) = level_bounds(dims);
    let rows = |lo: usize, hi: usize| -> f64 {
        (lo..=hi)
            .map(|l| {
                let d = grid_dims(dims, l_max, l);
                (d.z * d.x) as f64
            })
            .sum()
    };
    let leaf_rows = rows(l_min, l_max);
    let tree_rows = if l_max > 0 { rows(l_min - 1, l_max - 1) } else { 1.0 };
    let n_levels_leaf = (l_max + 1 - l_min) as f64;
    let per = (bytes_in + bytes_out) as f64;
    let apr = n_p * per
        + n_t * 4.0
        + 2.0 * (n_p + n_t)
        + 8.0 * (leaf_rows + tree_rows)
        + 8.0 * 2.0 * (n_levels_leaf + 1.0);
    MemoryEstimate { apr_bytes: apr.round() as u64, pixel_bytes: (n * per) as u64 }
}
