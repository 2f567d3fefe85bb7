//! Gradient magnitude and local intensity scale of a pixel volume.

use crate::volume::{Dims, PixelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientPolicy {
    /// `(f[i+1] - f[i-1]) / 2` per axis, replicate boundary.
    #[default]
    CentralDiff,
    /// Central difference smoothed by `[1, 2, 1] / 4` along the other two axes.
    Sobel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaPolicy {
    Constant(f64),
    /// Sliding-window `max - min` over a `(2r+1)^3` window, then one 3^3 box
    /// mean, clamped below by `floor` (default `1e-3` of the global range).
    LocalRange { window_radius: usize, floor: Option<f64> },
}

impl Default for SigmaPolicy {
    fn default() -> Self {
        SigmaPolicy::LocalRange { window_radius: 2, floor: None }
    }
}

/// Apply `f(line_in, line_out)` to every line of `data` along `axis`
/// (0 = z, 1 = x, 2 = y).
fn map_lines(data: &[f64], dims: Dims, axis: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Vec<f64> {
    let n = dims.as_array()[axis];
    let stride = match axis {
        0 => dims.x * dims.y,
        1 => dims.y,
        _ => 1,
    };
    let mut out = vec![0f64; data.len()];
    if data.is_empty() {
        return out;
    }
    let mut line = vec![0f64; n];
    let mut res = vec![0f64; n];
    for z in 0..dims.z {
        for x in 0..dims.x {
            for y in 0..dims.y {
                let coord = [z, x, y];
                if coord[axis] != 0 {
                    continue;
                }
                let base = dims.index(z, x, y);
                for i in 0..n {
                    line[i] = data[base + i * stride];
                }
                f(&line, &mut res);
                for i in 0..n {
                    out[base + i * stride] = res[i];
                }
            }
        }
    }
    out
}

/// Three-tap filter with replicate boundary: `out[i] = t0 f[i-1] + t1 f[i] + t2 f[i+1]`.
fn taps3(data: &[f64], dims: Dims, axis: usize, t: [f64; 3]) -> Vec<f64> {
    map_lines(data, dims, axis, |a, o| {
        let n = a.len();
        for i in 0..n {
            let lo = a[i.saturating_sub(1)];
            let hi = a[(i + 1).min(n - 1)];
            o[i] = t[0] * lo + t[1] * a[i] + t[2] * hi;
        }
    })
}

fn to_f64(v: &PixelVolume) -> Vec<f64> {
    v.values().iter().map(|&x| f64::from(x)).collect()
}

fn from_f64(dims: Dims, v: Vec<f64>) -> PixelVolume {
    PixelVolume::new(dims, v.into_iter().map(|x| x as f32).collect()).expect("length matches dims")
}

/// Per-pixel `|grad f|`, replicate padding at the boundary.
pub fn gradient_magnitude(v: &PixelVolume, policy: GradientPolicy) -> PixelVolume {
    let dims = v.dims();
    let f = to_f64(v);
    const D: [f64; 3] = [-0.5, 0.0, 0.5];
    const S: [f64; 3] = [0.25, 0.5, 0.25];
    let mut mag = vec![0f64; f.len()];
    for axis in 0..3 {
        let mut g = taps3(&f, dims, axis, D);
        if policy == GradientPolicy::Sobel {
            for other in (0..3).filter(|&a| a != axis) {
                g = taps3(&g, dims, other, S);
            }
        }
        for (m, d) in mag.iter_mut().zip(&g) {
            *m += d * d;
        }
    }
    from_f64(dims, mag.into_iter().map(f64::sqrt).collect())
}

fn box_mean_f64(f: &[f64], dims: Dims, radius: usize) -> Vec<f64> {
    let mut g = f.to_vec();
    for axis in 0..3 {
        g = map_lines(&g, dims, axis, |a, o| {
            let n = a.len();
            for i in 0..n {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius + 1).min(n);
                o[i] = a[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            }
        });
    }
    g
}

/// Mean over the `3^3` neighbourhood clipped to the volume.
pub fn box_smooth(v: &PixelVolume) -> PixelVolume {
    from_f64(v.dims(), box_mean_f64(&to_f64(v), v.dims(), 1))
}

fn window_range(f: &[f64], dims: Dims, radius: usize) -> Vec<f64> {
    let mut lo = f.to_vec();
    let mut hi = f.to_vec();
    for axis in 0..3 {
        let slide = |pick: fn(f64, f64) -> f64| {
            move |a: &[f64], o: &mut [f64]| {
                let n = a.len();
                for i in 0..n {
                    let s = i.saturating_sub(radius);
                    let e = (i + radius + 1).min(n);
                    o[i] = a[s..e].iter().copied().reduce(pick).unwrap();
                }
            }
        };
        lo = map_lines(&lo, dims, axis, slide(f64::min));
        hi = map_lines(&hi, dims, axis, slide(f64::max));
    }
    hi.iter().zip(&lo).map(|(h, l)| h - l).collect()
}

/// Default floor for [`SigmaPolicy::LocalRange`]: `1e-3` of the intensity
/// range, or `1e-3` for a constant volume.
pub fn default_sigma_floor(v: &PixelVolume) -> f64 {
    let r = f64::from(v.range());
    if r > 0.0 {
        1e-3 * r
    } else {
        1e-3
    }
}

/// Local error scale `sigma(x)`.
pub fn local_scale(v: &PixelVolume, policy: SigmaPolicy) -> PixelVolume {
    match policy {
        SigmaPolicy::Constant(c) => PixelVolume::filled(v.dims(), c as f32),
        SigmaPolicy::LocalRange { window_radius, floor } => {
            let floor = floor.unwrap_or_else(|| default_sigma_floor(v));
            let dims = v.dims();
            let r = window_range(&to_f64(v), dims, window_radius);
            let s = box_mean_f64(&r, dims, 1);
            from_f64(dims, s.into_iter().map(|x| x.max(floor)).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_has_unit_gradient() {
        let dims = Dims::new(4, 5, 6);
        let v = PixelVolume::from_fn(dims, |_, _, y| y as f32);
        for policy in [GradientPolicy::CentralDiff, GradientPolicy::Sobel] {
            let g = gradient_magnitude(&v, policy);
            for z in 0..4 {
                for x in 0..5 {
                    for y in 1..5 {
                        assert!((g.get(z, x, y) - 1.0).abs() < 1e-6);
                    }
                    assert_eq!(g.get(z, x, 0), 0.5);
                }
            }
        }
    }

    #[test]
    fn constant_volume() {
        let v = PixelVolume::filled(Dims::cube(5), 3.0);
        assert!(gradient_magnitude(&v, GradientPolicy::CentralDiff).values().iter().all(|&g| g == 0.0));
        assert!(local_scale(&v, SigmaPolicy::Constant(100.0)).values().iter().all(|&s| s == 100.0));
        let s = local_scale(&v, SigmaPolicy::LocalRange { window_radius: 1, floor: Some(0.5) });
        assert!(s.values().iter().all(|&s| s == 0.5));
        let s = local_scale(&v, SigmaPolicy::default());
        assert!(s.values().iter().all(|&s| s == 1e-3));
    }
}
