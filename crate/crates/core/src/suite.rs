//! Convolution benchmark suite over a set of images, emitting [`BenchRecord`]
//! rows.

use std::io;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::build::{build_apr, BuildParams};
use crate::conv::{convolve_pixels, ConvOptions, Convolver};
use crate::error::{Error, Result};
use crate::metrics::{effective_throughput, memory_estimate};
use crate::reconstruct::PadMode;
use crate::stencil::{Stencil, StencilPyramid};
use crate::synth::{generate_spheres, SphereSpec};
use crate::volume::{Dims, PixelVolume};

pub const OP_APR: &str = "apr_conv";
pub const OP_PIXELS: &str = "pixel_conv";

/// One CSV row. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub image_id: String,
    pub nz: usize,
    pub nx: usize,
    pub ny: usize,
    pub cr: f64,
    pub op: String,
    pub stencil_size: usize,
    pub threads: usize,
    pub wall_time_s: f64,
    #[serde(rename = "effective_throughput_Bps")]
    pub effective_throughput_bps: f64,
    pub memory_bytes_apr: u64,
    pub memory_bytes_pixels: u64,
}

pub const CSV_HEADER: &str = "image_id,nz,nx,ny,cr,op,stencil_size,threads,wall_time_s,effective_throughput_Bps,memory_bytes_apr,memory_bytes_pixels";

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    /// Cubic stencil edge lengths.
    pub stencil_sizes: Vec<usize>,
    /// Timed runs per measurement; the median is reported.
    pub repeats: usize,
    pub threads: usize,
    pub build: BuildParams,
    /// Also time dense pixel convolution.
    pub pixels: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            stencil_sizes: vec![3, 5],
            repeats: 5,
            threads: rayon::current_num_threads(),
            build: BuildParams::default(),
            pixels: true,
        }
    }
}

/// Sphere images spanning computational ratios from about 1 to about 600 at
/// `128^3`: one noisy image, then decreasing sphere counts.
pub fn cr_sweep_specs(n: usize, seed: u64) -> Vec<(String, SphereSpec)> {
    let scale = n as f64 / 128.0;
    let radius_range = ((3.0 * scale).max(1.0), (8.0 * scale).max(1.5));
    let spec = |count: usize, noise: f64| SphereSpec {
        dims: Dims::cube(n),
        object_count: count,
        radius_range,
        intensity: 100.0,
        background: 10.0,
        blur_sigma: 1.0,
        noise_sigma: noise,
        seed,
    };
    let mut out = vec![("sweep_noisy".to_string(), spec(64, 5.0))];
    for count in [1024, 512, 256, 128, 64, 32, 16, 4, 1] {
        out.push((format!("sweep_{count:04}"), spec(count, 0.0)));
    }
    out
}

pub fn cr_sweep(n: usize, seed: u64) -> Result<Vec<(String, PixelVolume)>> {
    cr_sweep_specs(n, seed).into_iter().map(|(id, s)| Ok((id, generate_spheres(&s)?))).collect()
}

/// Median wall time of `repeats` runs after one discarded warm-up run.
pub fn time_median(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let mut times = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let m = times.len();
    Ok(if m % 2 == 1 { times[m / 2] } else { 0.5 * (times[m / 2 - 1] + times[m / 2]) })
}

/// Build each image and time APR (and optionally pixel) convolution with a
/// restricted Gaussian pyramid. APR timings include the tree fill.
pub fn run_suite(images: &[(String, PixelVolume)], cfg: &SuiteConfig) -> Result<Vec<BenchRecord>> {
    if cfg.threads == 0 {
        return Err(Error::param("threads must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::param(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut out = Vec::new();
        for (id, v) in images {
            let (apr, values) = build_apr(v, &cfg.build)?;
            let mem = memory_estimate(&apr, 4, 4);
            let d = v.dims();
            let cr = apr.computational_ratio();
            for &k in &cfg.stencil_sizes {
                let w = Stencil::gaussian(k as f64 / 4.0, k)?;
                let pyramid = StencilPyramid::restricted(&apr, &w);
                let conv = Convolver::new(&apr, ConvOptions::default());
                let mut record = |op: &str, t: f64| -> Result<()> {
                    out.push(BenchRecord {
                        image_id: id.clone(),
                        nz: d.z,
                        nx: d.x,
                        ny: d.y,
                        cr,
                        op: op.to_string(),
                        stencil_size: k,
                        threads: cfg.threads,
                        wall_time_s: t,
                        effective_throughput_bps: effective_throughput(d, 4, t)?,
                        memory_bytes_apr: mem.apr_bytes,
                        memory_bytes_pixels: mem.pixel_bytes,
                    });
                    Ok(())
                };
                let t = time_median(cfg.repeats, || conv.convolve(&values, &pyramid).map(drop))?;
                record(OP_APR, t)?;
                if cfg.pixels {
                    let t = time_median(cfg.repeats, || convolve_pixels(v, &w, PadMode::Reflect).map(drop))?;
                    record(OP_PIXELS, t)?;
                }
            }
        }
        Ok(out)
    })
}

pub fn write_csv<W: io::Write>(w: W, records: &[BenchRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if records.is_empty() {
        wr.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(r: R) -> Result<Vec<BenchRecord>> {
    csv::Reader::from_reader(r).deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Ranks starting at 1, ties get their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `NaN` if either input has no spread.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}
