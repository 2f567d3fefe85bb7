//! Dense odd-sized stencils, their per-level restriction and rescaling.
//!
//! Convolution convention used throughout: `o[j] = sum_m w[m] u[j + c - m]`
//! with `c = (k - 1) / 2` per axis (true convolution, weights flipped).

use std::fmt;
use std::path::Path;

use crate::apr::Apr;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    size: [usize; 3],
    weights: Vec<f64>,
}

impl Stencil {
    /// `weights` in `z -> x -> y` order.
    pub fn new(size: [usize; 3], weights: Vec<f64>) -> Result<Self> {
        if size.iter().any(|&k| k % 2 == 0) {
            return Err(Error::param(format!("stencil sizes must be odd, got {size:?}")));
        }
        if weights.len() != size.iter().product::<usize>() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} weights", size.iter().product::<usize>()),
                found: weights.len().to_string(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::param("stencil weights must be finite"));
        }
        Ok(Stencil { size, weights })
    }

    pub fn identity() -> Self {
        Stencil { size: [1, 1, 1], weights: vec![1.0] }
    }

    /// Outer product of three 1D filters (each of odd length).
    pub fn separable(z: &[f64], x: &[f64], y: &[f64]) -> Result<Self> {
        let mut w = Vec::with_capacity(z.len() * x.len() * y.len());
        for a in z {
            for b in x {
                for c in y {
                    w.push(a * b * c);
                }
            }
        }
        Stencil::new([z.len(), x.len(), y.len()], w)
    }

    /// `k^3` box of weight `1/k^3`.
    pub fn box_filter(k: usize) -> Result<Self> {
        let n = k * k * k;
        Stencil::new([k; 3], vec![1.0 / n as f64; n])
    }

    /// Isotropic Gaussian of standard deviation `sigma` truncated to `k^3`,
    /// normalized to sum 1.
    pub fn gaussian(sigma: f64, k: usize) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::param(format!("gaussian sigma must be positive, got {sigma}")));
        }
        if k % 2 == 0 {
            return Err(Error::param(format!("stencil sizes must be odd, got {k}")));
        }
        let c = (k / 2) as f64;
        let g: Vec<f64> = (0..k).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
        let s: f64 = g.iter().sum();
        let g: Vec<f64> = g.iter().map(|v| v / s).collect();
        Stencil::separable(&g, &g, &g)
    }

    /// `[0.5, 0, -0.5]` along `axis` (0 = z, 1 = x, 2 = y); under true
    /// convolution this computes `+df/daxis`.
    pub fn central_difference(axis: usize) -> Result<Self> {
        Self::along(axis, &[0.5, 0.0, -0.5], &[1.0])
    }

    /// Central difference along `axis`, `[1, 2, 1] / 4` along the others.
    pub fn sobel(axis: usize) -> Result<Self> {
        Self::along(axis, &[0.5, 0.0, -0.5], &[0.25, 0.5, 0.25])
    }

    fn along(axis: usize, d: &[f64], s: &[f64]) -> Result<Self> {
        match axis {
            0 => Stencil::separable(d, s, s),
            1 => Stencil::separable(s, d, s),
            2 => Stencil::separable(s, s, d),
            _ => Err(Error::param(format!("axis must be 0, 1 or 2, got {axis}"))),
        }
    }

    /// Parse the text stencil format: an optional run of `#` comment lines,
    /// then `kz kx ky`, then `kz * kx * ky` weights in `z -> x -> y` order,
    /// separated by any whitespace.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(str::split_whitespace);
        let mut size = [0usize; 3];
        for s in size.iter_mut() {
            let t = tokens.next().ok_or_else(|| Error::param("stencil file: missing size"))?;
            *s = t.parse().map_err(|_| Error::param(format!("stencil file: bad size '{t}'")))?;
        }
        let weights = tokens
            .map(|t| t.parse::<f64>().map_err(|_| Error::param(format!("stencil file: bad weight '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        Stencil::new(size, weights)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Named stencils: `identity`, `gaussian:SIGMA[:K]` (default
    /// `K = 2 ceil(3 SIGMA) + 1`), `box:K`, `sobel:AXIS`, `central:AXIS` and
    /// `file:PATH`. Axes are `z`, `x`, `y` or `0`, `1`, `2`.
    pub fn from_preset(spec: &str) -> Result<Self> {
        let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let num = |t: &str| t.parse::<f64>().map_err(|_| Error::param(format!("bad number '{t}' in stencil '{spec}'")));
        let axis = |t: &str| match t {
            "z" | "0" => Ok(0),
            "x" | "1" => Ok(1),
            "y" | "2" => Ok(2),
            _ => Err(Error::param(format!("bad axis '{t}' in stencil '{spec}'"))),
        };
        match name {
            "identity" if rest.is_empty() => Ok(Stencil::identity()),
            "gaussian" => {
                let (sigma, k) = rest.split_once(':').map_or((rest, None), |(a, b)| (a, Some(b)));
                let sigma = num(sigma)?;
                let k = match k {
                    Some(k) => num(k)? as usize,
                    None => 2 * (3.0 * sigma).ceil() as usize + 1,
                };
                Stencil::gaussian(sigma, k)
            }
            "box" => Stencil::box_filter(num(rest)? as usize),
            "sobel" => Stencil::sobel(axis(rest)?),
            "central" => Stencil::central_difference(axis(rest)?),
            "file" if !rest.is_empty() => Stencil::load(rest),
            _ => Err(Error::param(format!("unknown stencil '{spec}'"))),
        }
    }

    pub fn size(&self) -> [usize; 3] {
        self.size
    }

    pub fn center(&self) -> [usize; 3] {
        self.size.map(|k| k / 2)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.weights[(a * self.size[1] + b) * self.size[2] + c]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Reverse the element order in every dimension.
    pub fn flip(&self) -> Stencil {
        let mut w = self.weights.clone();
        w.reverse();
        Stencil { size: self.size, weights: w }
    }

    /// `[fz, fx, fy]` with `w[a][b][c] = fz[a] fx[b] fy[c]` to within `1e-12`
    /// of the largest weight, or `None` if `w` is not separable.
    pub fn factor(&self) -> Option<[Vec<f64>; 3]> {
        let [kz, kx, ky] = self.size;
        let (imax, &m) = self.weights.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?;
        if m == 0.0 {
            return Some([vec![0.0; kz], vec![1.0; kx], vec![1.0; ky]]);
        }
        let (a0, b0, c0) = (imax / (kx * ky), (imax / ky) % kx, imax % ky);
        let fz: Vec<f64> = (0..kz).map(|a| self.get(a, b0, c0)).collect();
        let fx: Vec<f64> = (0..kx).map(|b| self.get(a0, b, c0) / m).collect();
        let fy: Vec<f64> = (0..ky).map(|c| self.get(a0, b0, c) / m).collect();
        let tol = 1e-12 * m.abs();
        for a in 0..kz {
            for b in 0..kx {
                for c in 0..ky {
                    if (self.get(a, b, c) - fz[a] * fx[b] * fy[c]).abs() > tol {
                        return None;
                    }
                }
            }
        }
        Some([fz, fx, fy])
    }

    pub fn scaled(&self, factor: f64) -> Stencil {
        Stencil { size: self.size, weights: self.weights.iter().map(|w| w * factor).collect() }
    }

    /// Scale so the weights sum to 1.
    pub fn normalized(&self) -> Result<Stencil> {
        let s = self.sum();
        if !(s > 0.0) {
            return Err(Error::param(format!("cannot normalize stencil with sum {s}")));
        }
        Ok(self.scaled(1.0 / s))
    }

    /// Apply a linear map to each axis in turn: `t[axis]` is `(rows, cols)`
    /// with `cols == size[axis]`, stored row-major.
    fn transform(&self, t: [(&[f64], usize); 3]) -> Stencil {
        let mut size = self.size;
        let mut w = self.weights.clone();
        for (axis, (m, rows)) in t.into_iter().enumerate() {
            let cols = size[axis];
            let outer: usize = size[..axis].iter().product();
            let inner: usize = size[axis + 1..].iter().product();
            let mut out = vec![0f64; outer * rows * inner];
            for o in 0..outer {
                for r in 0..rows {
                    for c in 0..cols {
                        let f = m[r * cols + c];
                        if f == 0.0 {
                            continue;
                        }
                        let src = (o * cols + c) * inner;
                        let dst = (o * rows + r) * inner;
                        for i in 0..inner {
                            out[dst + i] += f * w[src + i];
                        }
                    }
                }
            }
            size[axis] = rows;
            w = out;
        }
        Stencil { size, weights: w }
    }
}

impl fmt::Display for Stencil {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{} stencil", self.size[0], self.size[1], self.size[2])
    }
}

/// One axis of the restriction: `t[n][m] = #{a in [0, s) : floor((a + c - m) / s) = c_l - n} / s`
/// for a fine stencil of length `k` and `s = 2^delta`. Returns `(t, k_l)`.
pub fn restriction_matrix(k: usize, delta: u32) -> (Vec<f64>, usize) {
    let s = 1i64 << delta;
    let c = (k as i64 - 1) / 2;
    let cl = (c + s - 1) / s;
    let kl = (2 * cl + 1) as usize;
    let mut t = vec![0f64; kl * k];
    for m in 0..k as i64 {
        for a in 0..s {
            let d = (a + c - m).div_euclid(s);
            let n = (cl - d) as usize;
            t[n * k + m as usize] += 1.0 / s as f64;
        }
    }
    (t, kl)
}

/// Stencil that acts on a grid `delta` levels coarser the way `w` acts on the
/// fine grid between piecewise-constant upsampling and average downsampling.
pub fn restrict_stencil(w: &Stencil, delta: u32) -> Stencil {
    if delta == 0 {
        return w.clone();
    }
    let [kz, kx, ky] = w.size;
    let (tz, nz) = restriction_matrix(kz, delta);
    let (tx, nx) = restriction_matrix(kx, delta);
    let (ty, ny) = restriction_matrix(ky, delta);
    w.transform([(&tz, nz), (&tx, nx), (&ty, ny)])
}

/// Reverse the element order in every dimension.
pub fn flip_stencil(w: &Stencil) -> Stencil {
    w.flip()
}

/// `2^-delta * w`.
pub fn rescale_stencil(w: &Stencil, delta: u32) -> Stencil {
    w.scaled(0.5f64.powi(delta as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PyramidMode {
    /// `restrict_stencil(w, l_max - l)` at level `l`.
    Restricted,
    /// `rescale_stencil(w, l_max - l)` at level `l`.
    Rescaled,
    /// `w` at every level.
    Uniform,
    /// Caller-supplied per-level stencils.
    Explicit,
}

impl std::str::FromStr for PyramidMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "restricted" => Ok(PyramidMode::Restricted),
            "rescaled" => Ok(PyramidMode::Rescaled),
            "uniform" => Ok(PyramidMode::Uniform),
            _ => Err(Error::param(format!("unknown pyramid mode '{s}'"))),
        }
    }
}

/// One stencil per level `l_min..=l_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilPyramid {
    mode: PyramidMode,
    l_min: usize,
    l_max: usize,
    stencils: Vec<Stencil>,
}

impl StencilPyramid {
    pub fn new(w: &Stencil, mode: PyramidMode, l_min: usize, l_max: usize) -> Result<Self> {
        let stencils = (l_min..=l_max)
            .map(|l| {
                let delta = (l_max - l) as u32;
                match mode {
                    PyramidMode::Restricted => Ok(restrict_stencil(w, delta)),
                    PyramidMode::Rescaled => Ok(rescale_stencil(w, delta)),
                    PyramidMode::Uniform => Ok(w.clone()),
                    PyramidMode::Explicit => Err(Error::param("use StencilPyramid::explicit for explicit pyramids")),
                }
            })
            .collect::<Result<_>>()?;
        Ok(StencilPyramid { mode, l_min, l_max, stencils })
    }

    pub fn for_apr(apr: &Apr, w: &Stencil, mode: PyramidMode) -> Result<Self> {
        Self::new(w, mode, apr.l_min(), apr.l_max())
    }

    pub fn restricted(apr: &Apr, w: &Stencil) -> Self {
        Self::new(w, PyramidMode::Restricted, apr.l_min(), apr.l_max()).expect("restricted mode")
    }

    /// `stencils[i]` is used at level `l_min + i`.
    pub fn explicit(l_min: usize, stencils: Vec<Stencil>) -> Result<Self> {
        if stencils.is_empty() {
            return Err(Error::param("explicit pyramid needs at least one stencil"));
        }
        let l_max = l_min + stencils.len() - 1;
        Ok(StencilPyramid { mode: PyramidMode::Explicit, l_min, l_max, stencils })
    }

    pub fn mode(&self) -> PyramidMode {
        self.mode
    }

    pub fn l_min(&self) -> usize {
        self.l_min
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn level(&self, level: usize) -> &Stencil {
        &self.stencils[level - self.l_min]
    }

    pub fn stencils(&self) -> &[Stencil] {
        &self.stencils
    }

    pub fn covers(&self, l_min: usize, l_max: usize) -> bool {
        self.l_min <= l_min && self.l_max >= l_max
    }
}
