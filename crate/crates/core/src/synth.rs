//! Synthetic test volumes: random spheres and hollow cylinders.
//!
//! All randomness comes from SplitMix64. Uniform variates are
//! `(next_u64 >> 11) * 2^-53`; normal variates use the Box-Muller transform
//! and consume two uniforms each. Geometry is drawn first, noise last, in
//! voxel storage order.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::volume::{Dims, PixelVolume};

/// Seeded uniform and normal variates.
pub struct Rng(SplitMix64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(SplitMix64::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n.saturating_sub(1))
    }

    /// Standard normal.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereSpec {
    pub dims: Dims,
    pub object_count: usize,
    pub radius_range: (f64, f64),
    pub intensity: f32,
    pub background: f32,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SphereSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.radius_range;
        let min_edge = self.dims.as_array().into_iter().min().unwrap_or(0) as f64;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::param(format!("bad radius range {:?}", self.radius_range)));
        }
        if hi >= min_edge / 2.0 {
            return Err(Error::param(format!("maximum radius {hi} must be below half the smallest edge")));
        }
        if self.blur_sigma < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::param("blur and noise sigmas must be non-negative"));
        }
        Ok(())
    }
}

/// Draw sphere centers and radii. Spheres lie entirely inside the volume.
pub fn sphere_list(spec: &SphereSpec, rng: &mut Rng) -> Vec<Sphere> {
    let n = spec.dims.as_array().map(|v| v as f64);
    (0..spec.object_count)
        .map(|_| {
            let radius = rng.range(spec.radius_range.0, spec.radius_range.1);
            let center = [0, 1, 2].map(|a| rng.range(radius, n[a] - 1.0 - radius));
            Sphere { center, radius }
        })
        .collect()
}

/// Voxels within distance `radius` of a center take `intensity`.
pub fn render_spheres(dims: Dims, spheres: &[Sphere], intensity: f32, background: f32) -> PixelVolume {
    let mut v = PixelVolume::filled(dims, background);
    let n = dims.as_array();
    for s in spheres {
        let lo = s.center.map(|c| (c - s.radius).ceil().max(0.0) as usize);
        let hi = [0, 1, 2].map(|a| ((s.center[a] + s.radius).floor() as isize + 1).clamp(0, n[a] as isize) as usize);
        let r2 = s.radius * s.radius;
        for z in lo[0]..hi[0] {
            let dz = z as f64 - s.center[0];
            for x in lo[1]..hi[1] {
                let dx = x as f64 - s.center[1];
                for y in lo[2]..hi[2] {
                    let dy = y as f64 - s.center[2];
                    if dz * dz + dx * dx + dy * dy <= r2 {
                        v.set(z, x, y, intensity);
                    }
                }
            }
        }
    }
    v
}

pub fn generate_spheres(spec: &SphereSpec) -> Result<PixelVolume> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let spheres = sphere_list(spec, &mut rng);
    let v = render_spheres(spec.dims, &spheres, spec.intensity, spec.background);
    Ok(finish(v, spec.blur_sigma, spec.noise_sigma, &mut rng))
}

fn finish(mut v: PixelVolume, blur_sigma: f64, noise_sigma: f64, rng: &mut Rng) -> PixelVolume {
    if blur_sigma > 0.0 {
        v = gaussian_blur(&v, blur_sigma);
    }
    if noise_sigma > 0.0 {
        add_noise(&mut v, noise_sigma, rng);
    }
    v
}

pub fn add_noise(v: &mut PixelVolume, sigma: f64, rng: &mut Rng) {
    for x in v.values_mut() {
        *x = (f64::from(*x) + sigma * rng.normal()) as f32;
    }
}

/// Separable Gaussian blur truncated at `ceil(3 sigma)`, reflect boundary.
pub fn gaussian_blur(v: &PixelVolume, sigma: f64) -> PixelVolume {
    let r = (3.0 * sigma).ceil() as isize;
    let g: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|x| x / s).collect();
    let dims = v.dims();
    let mut data: Vec<f64> = v.values().iter().map(|&x| f64::from(x)).collect();
    let n = dims.as_array();
    let strides = [dims.x * dims.y, dims.y, 1];
    let mut line = Vec::new();
    for axis in 0..3 {
        let len = n[axis];
        let st = strides[axis];
        let mut out = data.clone();
        for start in 0..data.len() {
            if (start / st) % len != 0 {
                continue;
            }
            line.clear();
            line.extend((0..len).map(|i| data[start + i * st]));
            for i in 0..len {
                let mut acc = 0.0;
                for (k, w) in g.iter().enumerate() {
                    let j = crate::util::reflect_index(i as isize + k as isize - r, len);
                    acc += w * line[j];
                }
                out[start + i * st] = acc;
            }
        }
        data = out;
    }
    PixelVolume::new(dims, data.into_iter().map(|x| x as f32).collect()).expect("length matches dims")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cylinder {
    /// Axis direction: 0 = z, 1 = x, 2 = y.
    pub axis: usize,
    /// Center in the two coordinates orthogonal to `axis`, in `(z, x, y)`
    /// order with the axis coordinate dropped.
    pub center: [f64; 2],
    pub r_inner: f64,
    pub r_outer: f64,
    /// Extent along the axis, half-open.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CylinderSpec {
    pub dims: Dims,
    pub count: usize,
    pub radius_range: (f64, f64),
    /// Shell thickness: `r_inner = r_outer - thickness`.
    pub thickness: f64,
    pub intensity: f32,
    pub background: f32,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

pub fn cylinder_list(spec: &CylinderSpec, rng: &mut Rng) -> Vec<Cylinder> {
    let n = spec.dims.as_array();
    (0..spec.count)
        .map(|_| {
            let axis = rng.below(3);
            let r_outer = rng.range(spec.radius_range.0, spec.radius_range.1);
            let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
            let center = [0, 1].map(|i| rng.range(r_outer, n[others[i]] as f64 - 1.0 - r_outer));
            let len = n[axis];
            let a = rng.below(len / 2 + 1);
            let b = len / 2 + rng.below(len - len / 2);
            Cylinder { axis, center, r_inner: (r_outer - spec.thickness).max(0.0), r_outer, start: a, end: (b + 1).min(len) }
        })
        .collect()
}

/// Voxels with `r_inner <= distance to the axis <= r_outer` inside the axial
/// extent take `intensity`.
pub fn render_cylinders(dims: Dims, cylinders: &[Cylinder], intensity: f32, background: f32) -> PixelVolume {
    let mut v = PixelVolume::filled(dims, background);
    for c in cylinders {
        let (ri2, ro2) = (c.r_inner * c.r_inner, c.r_outer * c.r_outer);
        for z in 0..dims.z {
            for x in 0..dims.x {
                for y in 0..dims.y {
                    let p = [z, x, y];
                    if p[c.axis] < c.start || p[c.axis] >= c.end {
                        continue;
                    }
                    let q: Vec<f64> = (0..3).filter(|&a| a != c.axis).map(|a| p[a] as f64).collect();
                    let d2 = (q[0] - c.center[0]).powi(2) + (q[1] - c.center[1]).powi(2);
                    if d2 >= ri2 && d2 <= ro2 {
                        v.set(z, x, y, intensity);
                    }
                }
            }
        }
    }
    v
}

pub fn generate_cylinders(spec: &CylinderSpec) -> Result<PixelVolume> {
    let (lo, hi) = spec.radius_range;
    let min_edge = spec.dims.as_array().into_iter().min().unwrap_or(0) as f64;
    if !(lo > 0.0 && lo <= hi && hi < min_edge / 2.0) || spec.thickness <= 0.0 {
        return Err(Error::param("bad cylinder radius range or thickness"));
    }
    let mut rng = Rng::new(spec.seed);
    let cyl = cylinder_list(spec, &mut rng);
    let v = render_cylinders(spec.dims, &cyl, spec.intensity, spec.background);
    Ok(finish(v, spec.blur_sigma, spec.noise_sigma, &mut rng))
}

/// Ground-truth phantom used by the deconvolution checks: 64^3, hollow
/// cylinders on a dim background.
pub fn cylinder_phantom(n: usize, seed: u64) -> CylinderSpec {
    CylinderSpec {
        dims: Dims::cube(n),
        count: 6,
        radius_range: (n as f64 / 16.0, n as f64 / 6.0),
        thickness: 2.5,
        intensity: 100.0,
        background: 10.0,
        blur_sigma: 0.0,
        noise_sigma: 0.0,
        seed,
    }
}
