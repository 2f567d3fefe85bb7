//! Richardson-Lucy deconvolution on pixels and on the APR.
//!
//! `i_{k+1} = i_k * ((u / max(i_k conv w, eps)) conv w_flipped)`, starting from
//! `i_0 = u`, with `eps = epsilon_scale * mean(u)`.

use crate::apr::{check_len, Apr, ParticleValues};
use crate::conv::{convolve_pixels, ConvOptions, Convolver};
use crate::error::{Error, Result};
use crate::fft::FftConvolver;
use crate::metrics::nrmse;
use crate::reconstruct::{reconstruct_full, PadMode};
use crate::stencil::{Stencil, StencilPyramid};
use crate::tree::fill_tree;
use crate::volume::PixelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PixelBackend {
    #[default]
    Fft,
    Spatial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RLConfig {
    pub iterations: usize,
    pub psf: Stencil,
    /// Division guard relative to the mean of the observed image.
    pub epsilon_scale: f64,
    /// NRMSE is recorded every this many iterations by the tracked variants
    /// (0 records only the start and the end).
    pub record_every: usize,
    pub pad: PadMode,
    pub backend: PixelBackend,
}

impl RLConfig {
    pub fn new(psf: Stencil, iterations: usize) -> Self {
        RLConfig { iterations, psf, epsilon_scale: 1e-6, record_every: 1, pad: PadMode::Reflect, backend: PixelBackend::Fft }
    }

    /// Non-negative PSF scaled to sum 1.
    fn checked_psf(&self) -> Result<Stencil> {
        if self.psf.weights().iter().any(|&w| w < 0.0) {
            return Err(Error::param("PSF weights must be non-negative"));
        }
        if !(self.epsilon_scale > 0.0) {
            return Err(Error::param("epsilon scale must be positive"));
        }
        self.psf.normalized()
    }
}

fn clamp_observed(v: &[f32]) -> Vec<f32> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

fn epsilon(u: &[f32], scale: f64) -> f32 {
    let mean = if u.is_empty() { 0.0 } else { u.iter().map(|&x| f64::from(x)).sum::<f64>() / u.len() as f64 };
    let e = scale * mean;
    (if e > 0.0 { e } else { scale }) as f32
}

/// `i <- i * ((u / max(blurred, eps)) conv w_flipped)`; `ratio` is reused.
fn ratio_into(u: &[f32], blurred: &[f32], eps: f32, ratio: &mut [f32]) {
    for ((r, &o), &b) in ratio.iter_mut().zip(u).zip(blurred) {
        *r = o / b.max(eps);
    }
}

fn multiply(est: &mut [f32], corr: &[f32]) {
    for (e, &c) in est.iter_mut().zip(corr) {
        *e *= c;
    }
}

/// History entries are `(iteration, nrmse)`.
pub type History = Vec<(usize, f64)>;

fn should_record(k: usize, cfg: &RLConfig) -> bool {
    k == cfg.iterations || (cfg.record_every > 0 && k % cfg.record_every == 0)
}

pub fn rl_pixels(observed: &PixelVolume, cfg: &RLConfig) -> Result<PixelVolume> {
    rl_pixels_impl(observed, cfg, None).map(|(v, _)| v)
}

/// [`rl_pixels`] recording NRMSE against `truth` (iteration 0 is the input).
pub fn rl_pixels_tracked(observed: &PixelVolume, cfg: &RLConfig, truth: &PixelVolume) -> Result<(PixelVolume, History)> {
    observed.ensure_same_dims(truth)?;
    rl_pixels_impl(observed, cfg, Some(truth))
}

fn rl_pixels_impl(observed: &PixelVolume, cfg: &RLConfig, truth: Option<&PixelVolume>) -> Result<(PixelVolume, History)> {
    let w = cfg.checked_psf()?;
    let wf = w.flip();
    let dims = observed.dims();
    let u = PixelVolume::new(dims, clamp_observed(observed.values()))?;
    let eps = epsilon(u.values(), cfg.epsilon_scale);
    let (fwd, back) = match cfg.backend {
        PixelBackend::Fft => (Some(FftConvolver::new(dims, &w, cfg.pad)), Some(FftConvolver::new(dims, &wf, cfg.pad))),
        PixelBackend::Spatial => (None, None),
    };
    let conv = |v: &PixelVolume, k: &Stencil, f: &Option<FftConvolver>| -> Result<PixelVolume> {
        match f {
            Some(f) => f.convolve(v),
            None => convolve_pixels(v, k, cfg.pad),
        }
    };
    let mut est = u.clone();
    let mut ratio = PixelVolume::zeros(dims);
    let mut history = Vec::new();
    if let Some(t) = truth {
        history.push((0, nrmse(t, &est)?));
    }
    for k in 1..=cfg.iterations {
        let blurred = conv(&est, &w, &fwd)?;
        ratio_into(u.values(), blurred.values(), eps, ratio.values_mut());
        let corr = conv(&ratio, &wf, &back)?;
        multiply(est.values_mut(), corr.values());
        if let Some(t) = truth {
            if should_record(k, cfg) {
                history.push((k, nrmse(t, &est)?));
            }
        }
    }
    Ok((est, history))
}

pub fn rl_apr(apr: &Apr, observed: &[f32], cfg: &RLConfig) -> Result<ParticleValues> {
    rl_apr_impl(apr, observed, cfg, None).map(|(v, _)| v)
}

/// [`rl_apr`] recording NRMSE of the piecewise-constant reconstruction
/// against `truth`.
pub fn rl_apr_tracked(apr: &Apr, observed: &[f32], cfg: &RLConfig, truth: &PixelVolume) -> Result<(ParticleValues, History)> {
    if truth.dims() != apr.dims() {
        return Err(Error::DimensionMismatch { expected: apr.dims().to_string(), found: truth.dims().to_string() });
    }
    rl_apr_impl(apr, observed, cfg, Some(truth))
}

fn rl_apr_impl(apr: &Apr, observed: &[f32], cfg: &RLConfig, truth: Option<&PixelVolume>) -> Result<(ParticleValues, History)> {
    check_len(apr.access(), observed.len())?;
    let w = cfg.checked_psf()?;
    let fwd = StencilPyramid::restricted(apr, &w);
    let back = StencilPyramid::restricted(apr, &w.flip());
    let conv = Convolver::new(apr, ConvOptions { pad: cfg.pad, ..Default::default() });
    let u = clamp_observed(observed);
    let eps = epsilon(&u, cfg.epsilon_scale);
    let n = u.len();
    let mut est = u.clone();
    let mut blurred = vec![0f32; n];
    let mut ratio = vec![0f32; n];
    let mut corr = vec![0f32; n];
    let mut history = Vec::new();
    let record = |est: &[f32], k: usize, h: &mut History| -> Result<()> {
        if let Some(t) = truth {
            h.push((k, nrmse(t, &reconstruct_full(apr, est)?)?));
        }
        Ok(())
    };
    record(&est, 0, &mut history)?;
    for k in 1..=cfg.iterations {
        let tree = fill_tree(apr, &est)?;
        conv.convolve_into(&est, &tree, &fwd, &mut blurred)?;
        ratio_into(&u, &blurred, eps, &mut ratio);
        let tree = fill_tree(apr, &ratio)?;
        conv.convolve_into(&ratio, &tree, &back, &mut corr)?;
        multiply(&mut est, &corr);
        if should_record(k, cfg) {
            record(&est, k, &mut history)?;
        }
    }
    Ok((ParticleValues::new(est), history))
}
