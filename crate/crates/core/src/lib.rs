//! Adaptive Particle Representation (APR) of volumetric images.
//!
//! An APR stores a volume as particle cells on a power-of-two hierarchy,
//! finer where the intensity changes quickly relative to a local error scale.
//! This crate builds APRs, reconstructs images from them, and runs discrete
//! convolution and Richardson-Lucy deconvolution directly on the particles.

pub mod access;
pub mod apr;
pub mod build;
pub mod conv;
pub mod deconv;
pub mod error;
pub mod fft;
pub mod gradient;
pub mod io;
pub mod levels;
pub mod metrics;
pub mod reconstruct;
pub mod stencil;
pub mod suite;
pub mod synth;
pub mod tree;
mod util;
pub mod volume;

pub use access::{level_bounds, particle_position, LinearAccess, ParticleCell, ParticleRef, Violation};
pub use apr::{computational_ratio, Apr, ParticleValues};
pub use build::{build_apr, sample_particles, BuildParams};
pub use conv::{convolve_apr, convolve_pixels, nonempty_row_index, ConvOptions, Convolver, RowIndex};
pub use deconv::{rl_apr, rl_apr_tracked, rl_pixels, rl_pixels_tracked, PixelBackend, RLConfig};
pub use error::{Error, Result};
pub use fft::FftConvolver;
pub use io::{read_apr, read_volume, write_apr, write_volume, AprFile, ElementType, FormatError};
pub use metrics::{effective_throughput, memory_estimate, nrmse, psnr, quality_metrics, ssim, MemoryEstimate, QualityMetrics};
pub use gradient::{GradientPolicy, SigmaPolicy};
pub use reconstruct::{reconstruct_full, reconstruct_level, reconstruct_patch, PadMode, PatchSpec};
pub use stencil::{flip_stencil, rescale_stencil, restrict_stencil, PyramidMode, Stencil, StencilPyramid};
pub use suite::{run_suite, spearman, BenchRecord, SuiteConfig};
pub use synth::{add_noise, Rng, generate_cylinders, generate_spheres, CylinderSpec, SphereSpec};
pub use tree::{fill_tree, init_tree_structure, synchronized_parent_pass};
pub use util::reflect_index;
pub use volume::{Dims, PixelVolume};
