//! Pixel volume to APR conversion.

use crate::access::{grid_dims, level_bounds, LinearAccess};
use crate::apr::{Apr, ParticleValues};
use crate::error::{Error, Result};
use crate::gradient::{box_smooth, gradient_magnitude, local_scale, GradientPolicy, SigmaPolicy};
use crate::levels::{level_function, solve_levels_with, MeanPyramid, TargetLevels};
use crate::volume::PixelVolume;

#[derive(Debug, Clone, PartialEq)]
pub struct BuildParams {
    /// Relative error bound `E`.
    pub error_bound: f64,
    pub sigma: SigmaPolicy,
    pub gradient: GradientPolicy,
    /// 3^3 box passes applied to the image before the gradient is taken.
    /// The error bound is still checked against the unsmoothed image.
    pub smoothing_passes: usize,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            error_bound: 0.1,
            sigma: SigmaPolicy::default(),
            gradient: GradientPolicy::CentralDiff,
            smoothing_passes: 0,
        }
    }
}

impl BuildParams {
    pub fn with_constant_sigma(error_bound: f64, sigma: f64) -> Self {
        BuildParams { error_bound, sigma: SigmaPolicy::Constant(sigma), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.error_bound > 0.0 && self.error_bound.is_finite()) {
            return Err(Error::param(format!("error bound must be positive, got {}", self.error_bound)));
        }
        match self.sigma {
            SigmaPolicy::Constant(s) if !(s > 0.0 && s.is_finite()) => {
                Err(Error::param(format!("constant sigma must be positive, got {s}")))
            }
            SigmaPolicy::LocalRange { window_radius: 0, .. } => Err(Error::param("window radius must be at least 1")),
            SigmaPolicy::LocalRange { floor: Some(f), .. } if !(f > 0.0) => {
                Err(Error::param(format!("sigma floor must be positive, got {f}")))
            }
            _ => Ok(()),
        }
    }
}

/// Cells at each level `l_min..l_max` whose mean would violate the error
/// bound if they were leaves: `max |v - mean| / sigma > E` over the footprint.
pub fn error_splits(v: &PixelVolume, pyramid: &MeanPyramid, sigma: &SigmaField<'_>, error_bound: f64) -> Vec<Vec<bool>> {
    let dims = v.dims();
    let (l_min, l_max) = (pyramid.l_min(), pyramid.l_max());
    let mut out = Vec::with_capacity(l_max + 1 - l_min);
    for l in l_min..=l_max {
        if l == l_max {
            out.push(vec![false; dims.len()]);
            continue;
        }
        let means = pyramid.means(l);
        let mask = match *sigma {
            SigmaField::Constant(s) => {
                // max |v - m| over the footprint is attained at its min or max.
                let (lo, hi) = (pyramid.mins(l), pyramid.maxs(l));
                means
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(&m, (&a, &b))| {
                        let m = f64::from(m);
                        let e = (f64::from(b) - m).max(m - f64::from(a));
                        e / s > error_bound
                    })
                    .collect()
            }
            SigmaField::Field(sig) => {
                let cd = grid_dims(dims, l_max, l);
                let shift = l_max - l;
                let mut m = vec![false; cd.len()];
                for z in 0..dims.z {
                    for x in 0..dims.x {
                        let prow = cd.index(z >> shift, x >> shift, 0);
                        let base = dims.index(z, x, 0);
                        for y in 0..dims.y {
                            let c = prow + (y >> shift);
                            let d = (f64::from(v.values()[base + y]) - f64::from(means[c])).abs();
                            if d / f64::from(sig.values()[base + y]) > error_bound {
                                m[c] = true;
                            }
                        }
                    }
                }
                m
            }
        };
        out.push(mask);
    }
    out
}

/// Error scale used by [`error_splits`].
pub enum SigmaField<'a> {
    Constant(f64),
    Field(&'a PixelVolume),
}

/// Leaf values: pixel values at the finest level, footprint means above.
pub fn sample_particles(v: &PixelVolume, access: &LinearAccess) -> Result<ParticleValues> {
    if v.dims() != access.pixel_dims() {
        return Err(Error::DimensionMismatch { expected: access.pixel_dims().to_string(), found: v.dims().to_string() });
    }
    let pyramid = MeanPyramid::new(v, access.l_min());
    Ok(sample_from_pyramid(&pyramid, access))
}

fn sample_from_pyramid(pyramid: &MeanPyramid, access: &LinearAccess) -> ParticleValues {
    let mut out = Vec::with_capacity(access.num_particles());
    for level in access.levels() {
        let d = pyramid.level_dims(level);
        let means = pyramid.means(level);
        for z in 0..d.z {
            for x in 0..d.x {
                let row = d.index(z, x, 0);
                out.extend(access.row_y(level, z, x).iter().map(|&y| means[row + y as usize]));
            }
        }
    }
    ParticleValues::new(out)
}

/// Per-pixel target levels for `v` under `params`, including the one-level
/// safety margin applied for a constant sigma.
pub fn target_levels(v: &PixelVolume, params: &BuildParams) -> (TargetLevels, PixelVolume) {
    let mut smoothed = None;
    for _ in 0..params.smoothing_passes {
        smoothed = Some(box_smooth(smoothed.as_ref().unwrap_or(v)));
    }
    let grad = gradient_magnitude(smoothed.as_ref().unwrap_or(v), params.gradient);
    let sigma = local_scale(v, params.sigma);
    let mut t = level_function(&grad, &sigma, params.error_bound);
    if let SigmaPolicy::Constant(_) = params.sigma {
        for (l, &g) in t.levels.iter_mut().zip(grad.values()) {
            if g > 0.0 {
                *l = (*l + 1).min(t.l_max as u8);
            }
        }
    }
    (t, sigma)
}

/// Build an APR of `v`.
///
/// Target levels come from the gradient and sigma; any cell whose mean would
/// break `|v - mean| / sigma <= E` is split further, so the piecewise-constant
/// reconstruction satisfies the bound at every pixel.
pub fn build_apr(v: &PixelVolume, params: &BuildParams) -> Result<(Apr, ParticleValues)> {
    params.validate()?;
    let dims = v.dims();
    if dims.is_empty() {
        return Err(Error::param(format!("cannot build an APR of an empty volume ({dims})")));
    }
    if dims.y > 1 << 16 {
        return Err(Error::Capability(format!("y extent {} exceeds 65536", dims.y)));
    }
    let (l_min, _) = level_bounds(dims);
    let (targets, sigma) = target_levels(v, params);
    let pyramid = MeanPyramid::new(v, l_min);
    let field = match params.sigma {
        SigmaPolicy::Constant(s) => SigmaField::Constant(s),
        _ => SigmaField::Field(&sigma),
    };
    let forced = error_splits(v, &pyramid, &field, params.error_bound);
    let access = solve_levels_with(&targets, &forced);
    let values = sample_from_pyramid(&pyramid, &access);
    Ok((Apr::new(access).with_params(params.clone()), values))
}
