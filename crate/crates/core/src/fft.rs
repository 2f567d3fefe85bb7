//! FFT-based dense convolution for repeated application of one stencil.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::reconstruct::PadMode;
use crate::stencil::Stencil;
use crate::util::reflect_index;
use crate::volume::{Dims, PixelVolume};

/// Smallest `m >= n` whose only prime factors are 2, 3 and 5.
fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

struct AxisPlan {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// Convolution of volumes of fixed dims with a fixed stencil.
///
/// The volume is padded by the stencil half-width on each side (per `pad`),
/// then zero-filled up to an FFT-friendly size; the stencil is placed with its
/// center at index 0. The circular product agrees with the linear convolution
/// at every in-domain position.
pub struct FftConvolver {
    dims: Dims,
    center: [usize; 3],
    size: [usize; 3],
    pad: PadMode,
    plans: [AxisPlan; 3],
    spectrum: Vec<Complex<f64>>,
}

impl FftConvolver {
    pub fn new(dims: Dims, w: &Stencil, pad: PadMode) -> Self {
        let k = w.size();
        let center = w.center();
        let n = dims.as_array();
        let size = [0, 1, 2].map(|a| fast_len(n[a] + k[a] - 1));
        let mut planner = FftPlanner::new();
        let plans = size.map(|m| AxisPlan { fwd: planner.plan_fft_forward(m), inv: planner.plan_fft_inverse(m) });
        let mut kernel = vec![Complex::new(0.0, 0.0); size.iter().product()];
        for a in 0..k[0] {
            let tz = (a + size[0] - center[0]) % size[0];
            for b in 0..k[1] {
                let tx = (b + size[1] - center[1]) % size[1];
                for c in 0..k[2] {
                    let ty = (c + size[2] - center[2]) % size[2];
                    kernel[(tz * size[1] + tx) * size[2] + ty].re += w.get(a, b, c);
                }
            }
        }
        let mut me = FftConvolver { dims, center, size, pad, plans, spectrum: Vec::new() };
        me.transform(&mut kernel, true);
        me.spectrum = kernel;
        me
    }

    fn transform(&self, data: &mut [Complex<f64>], forward: bool) {
        let [mz, mx, my] = self.size;
        let pick = |a: usize| if forward { &self.plans[a].fwd } else { &self.plans[a].inv };
        pick(2).process(data);
        let mut line = vec![Complex::new(0.0, 0.0); mx.max(mz) * my];
        for z in 0..mz {
            let slab = &mut data[z * mx * my..(z + 1) * mx * my];
            for x in 0..mx {
                for y in 0..my {
                    line[y * mx + x] = slab[x * my + y];
                }
            }
            pick(1).process(&mut line[..mx * my]);
            for x in 0..mx {
                for y in 0..my {
                    slab[x * my + y] = line[y * mx + x];
                }
            }
        }
        for x in 0..mx {
            for z in 0..mz {
                for y in 0..my {
                    line[y * mz + z] = data[(z * mx + x) * my + y];
                }
            }
            pick(0).process(&mut line[..mz * my]);
            for z in 0..mz {
                for y in 0..my {
                    data[(z * mx + x) * my + y] = line[y * mz + z];
                }
            }
        }
    }

    pub fn convolve(&self, v: &PixelVolume) -> Result<PixelVolume> {
        let d = self.dims;
        if v.dims() != d {
            return Err(crate::error::Error::DimensionMismatch { expected: d.to_string(), found: v.dims().to_string() });
        }
        let [mz, mx, my] = self.size;
        let [cz, cx, cy] = self.center;
        let n = d.as_array();
        let map = |i: usize, c: usize, n: usize| -> Option<usize> {
            let j = i as isize - c as isize;
            if (0..n as isize).contains(&j) {
                Some(j as usize)
            } else if i < n + 2 * c && self.pad == PadMode::Reflect {
                Some(reflect_index(j, n))
            } else {
                None
            }
        };
        let mut data = vec![Complex::new(0.0, 0.0); mz * mx * my];
        for iz in 0..mz {
            let Some(sz) = map(iz, cz, n[0]) else { continue };
            for ix in 0..mx {
                let Some(sx) = map(ix, cx, n[1]) else { continue };
                let src = &v.values()[d.index(sz, sx, 0)..d.index(sz, sx, 0) + d.y];
                let dst = &mut data[(iz * mx + ix) * my..(iz * mx + ix + 1) * my];
                for (iy, o) in dst.iter_mut().enumerate() {
                    if let Some(sy) = map(iy, cy, n[2]) {
                        o.re = f64::from(src[sy]);
                    }
                }
            }
        }
        self.transform(&mut data, true);
        for (a, b) in data.iter_mut().zip(&self.spectrum) {
            *a *= b;
        }
        self.transform(&mut data, false);
        let scale = 1.0 / (mz * mx * my) as f64;
        let mut out = Vec::with_capacity(d.len());
        for z in 0..d.z {
            for x in 0..d.x {
                let row = ((z + cz) * mx + x + cx) * my + cy;
                out.extend(data[row..row + d.y].iter().map(|c| (c.re * scale) as f32));
            }
        }
        PixelVolume::new(d, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::convolve_pixels;

    #[test]
    fn fast_lengths() {
        assert_eq!(fast_len(7), 8);
        assert_eq!(fast_len(76), 80);
        assert_eq!(fast_len(1), 1);
    }

    #[test]
    fn matches_spatial() {
        let dims = Dims::new(6, 5, 9);
        let v = PixelVolume::from_fn(dims, |z, x, y| ((z * 13 + x * 7 + y * 3) % 11) as f32 + 0.5);
        let w = Stencil::new([3, 1, 5], (0..15).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        for pad in [PadMode::Zero, PadMode::Reflect] {
            let a = FftConvolver::new(dims, &w, pad).convolve(&v).unwrap();
            let b = convolve_pixels(&v, &w, pad).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-5, "{x} vs {y}");
            }
        }
    }
}
