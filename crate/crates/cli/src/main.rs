use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aprkit::io::{decode_apr, decode_volume, ElementType, APR_MAGIC};
use aprkit::suite::{cr_sweep, run_suite, write_csv, SuiteConfig};
use aprkit::synth::{cylinder_phantom, generate_cylinders, generate_spheres, SphereSpec};
use aprkit::{
    build_apr, fill_tree, memory_estimate, reconstruct_full, reconstruct_level, rl_apr, rl_pixels, write_apr,
    write_volume, Apr, BuildParams, ConvOptions, Convolver, Dims, Error, GradientPolicy, PadMode, ParticleValues,
    PixelBackend, PixelVolume, PyramidMode, RLConfig, SigmaPolicy, Stencil, StencilPyramid,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(name = "aprkit", version, about = "Adaptive Particle Representation tools")]
struct Cli {
    /// Worker threads [default: all cores]
    #[arg(long, global = true, env = "APRKIT_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an APR from a raw volume
    Convert(ConvertArgs),
    /// Reconstruct a pixel volume from an APR
    Reconstruct(ReconstructArgs),
    /// Convolve an APR (or raw volume) with a stencil
    Convolve(ConvolveArgs),
    /// Richardson-Lucy deconvolution of an APR (or raw volume)
    Deconvolve(DeconvolveArgs),
    /// Time convolution over a set of volumes and write CSV
    Bench(BenchArgs),
    /// Print APR statistics
    Info { input: PathBuf },
    /// Generate synthetic volumes
    Generate(GenerateArgs),
}

#[derive(Args)]
struct BuildOpts {
    /// Relative error bound E
    #[arg(short = 'e', long, default_value_t = 0.1)]
    error_bound: f64,
    /// `local[:RADIUS]` or `constant[:VALUE]` (no value: intensity range)
    #[arg(long, default_value = "local")]
    sigma: String,
    #[arg(long, value_enum, default_value_t = Gradient::Central)]
    gradient: Gradient,
    /// 3^3 box passes over the gradient magnitude
    #[arg(long, default_value_t = 0)]
    smoothing: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gradient {
    Central,
    Sobel,
}

impl BuildOpts {
    fn params(&self, v: &PixelVolume) -> Result<BuildParams> {
        let (kind, value) = self.sigma.split_once(':').map_or((self.sigma.as_str(), None), |(a, b)| (a, Some(b)));
        let bad = || Error::InvalidParameter(format!("bad sigma '{}'", self.sigma));
        let sigma = match (kind, value) {
            ("local", None) => SigmaPolicy::default(),
            ("local", Some(r)) => SigmaPolicy::LocalRange { window_radius: r.parse().map_err(|_| bad())?, floor: None },
            ("constant", None) => SigmaPolicy::Constant(f64::from(v.range()).max(f64::MIN_POSITIVE)),
            ("constant", Some(s)) => SigmaPolicy::Constant(s.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        let gradient = match self.gradient {
            Gradient::Central => GradientPolicy::CentralDiff,
            Gradient::Sobel => GradientPolicy::Sobel,
        };
        let p = BuildParams { error_bound: self.error_bound, sigma, gradient, smoothing_passes: self.smoothing };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct ConvertArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    build: BuildOpts,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dtype {
    U8,
    U16,
    F32,
}

impl From<Dtype> for ElementType {
    fn from(d: Dtype) -> Self {
        match d {
            Dtype::U8 => ElementType::U8,
            Dtype::U16 => ElementType::U16,
            Dtype::F32 => ElementType::F32,
        }
    }
}

#[derive(Args)]
struct ReconstructArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Reconstruct on the grid of this level instead of the pixel grid
    #[arg(long)]
    level: Option<usize>,
    #[arg(long, value_enum, default_value_t = Dtype::F32)]
    dtype: Dtype,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pyramid {
    Restricted,
    Rescaled,
    Uniform,
}

impl From<Pyramid> for PyramidMode {
    fn from(p: Pyramid) -> Self {
        match p {
            Pyramid::Restricted => PyramidMode::Restricted,
            Pyramid::Rescaled => PyramidMode::Rescaled,
            Pyramid::Uniform => PyramidMode::Uniform,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Pad {
    Reflect,
    Zero,
}

impl From<Pad> for PadMode {
    fn from(p: Pad) -> Self {
        match p {
            Pad::Reflect => PadMode::Reflect,
            Pad::Zero => PadMode::Zero,
        }
    }
}

#[derive(Args)]
struct ConvolveArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// identity, gaussian:SIGMA[:K], box:K, sobel:AXIS, central:AXIS or file:PATH
    #[arg(short, long, default_value = "identity")]
    stencil: String,
    #[arg(long, value_enum, default_value_t = Pyramid::Restricted)]
    pyramid: Pyramid,
    #[arg(long, value_enum, default_value_t = Pad::Reflect)]
    pad: Pad,
    /// Visit every row instead of only rows near particles
    #[arg(long)]
    no_skip: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Fft,
    Spatial,
}

#[derive(Args)]
struct DeconvolveArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// PSF stencil, same syntax as `convolve --stencil`
    #[arg(long, default_value = "gaussian:2")]
    psf: String,
    #[arg(short = 'n', long, default_value_t = 10)]
    iterations: usize,
    #[arg(long, value_enum, default_value_t = Pad::Reflect)]
    pad: Pad,
    /// Convolution backend for raw volume input
    #[arg(long, value_enum, default_value_t = Backend::Fft)]
    backend: Backend,
}

#[derive(Args)]
struct BenchArgs {
    /// Raw volumes, or directories whose `.raw` files are used in name order
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, value_delimiter = ',', default_value = "3,5")]
    stencil_sizes: Vec<usize>,
    /// Skip the dense pixel convolution timings
    #[arg(long)]
    no_pixels: bool,
    #[command(flatten)]
    build: BuildOpts,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Spheres,
    Cylinders,
    CrSweep,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    /// Output file (directory for `cr-sweep`)
    #[arg(short, long)]
    output: PathBuf,
    /// Cube edge [default: 128 for cr-sweep, 64 otherwise]
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    count: usize,
    #[arg(long, default_value_t = 3.0)]
    radius_min: f64,
    #[arg(long, default_value_t = 8.0)]
    radius_max: f64,
    #[arg(long, default_value_t = 100.0)]
    intensity: f32,
    #[arg(long, default_value_t = 10.0)]
    background: f32,
    #[arg(long, default_value_t = 0.0)]
    blur: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

enum Input {
    Apr(Apr, ParticleValues),
    Pixels(PixelVolume),
}

fn read_input(path: &Path) -> Result<Input> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(APR_MAGIC) {
        let f = decode_apr(&bytes)?;
        Ok(Input::Apr(f.apr, f.values))
    } else {
        Ok(Input::Pixels(decode_volume(&bytes)?.0))
    }
}

fn read_apr_input(path: &Path) -> Result<(Apr, ParticleValues)> {
    match read_input(path)? {
        Input::Apr(a, v) => Ok((a, v)),
        Input::Pixels(_) => Err(Error::InvalidParameter(format!("{} is a raw volume, expected an APR", path.display()))),
    }
}

fn read_volume_input(path: &Path) -> Result<PixelVolume> {
    match read_input(path)? {
        Input::Pixels(v) => Ok(v),
        Input::Apr(..) => Err(Error::InvalidParameter(format!("{} is an APR, expected a raw volume", path.display()))),
    }
}

fn convert(a: &ConvertArgs) -> Result<()> {
    let v = read_volume_input(&a.input)?;
    let (apr, values) = build_apr(&v, &a.build.params(&v)?)?;
    write_apr(&a.output, &apr, &values)?;
    println!("{} particles, CR {:.4}", apr.num_particles(), apr.computational_ratio());
    Ok(())
}

fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let (apr, values) = read_apr_input(&a.input)?;
    let v = match a.level {
        None => reconstruct_full(&apr, &values)?,
        Some(l) => reconstruct_level(&apr, &values, &fill_tree(&apr, &values)?, l)?,
    };
    write_volume(&a.output, &v, a.dtype.into())
}

fn convolve(a: &ConvolveArgs) -> Result<()> {
    let w = Stencil::from_preset(&a.stencil)?;
    match read_input(&a.input)? {
        Input::Apr(apr, values) => {
            let pyramid = StencilPyramid::for_apr(&apr, &w, a.pyramid.into())?;
            let opts = ConvOptions { pad: a.pad.into(), skip_empty_rows: !a.no_skip, ..Default::default() };
            let out = Convolver::new(&apr, opts).convolve(&values, &pyramid)?;
            write_apr(&a.output, &apr, &out)
        }
        Input::Pixels(v) => write_volume(&a.output, &aprkit::convolve_pixels(&v, &w, a.pad.into())?, ElementType::F32),
    }
}

fn deconvolve(a: &DeconvolveArgs) -> Result<()> {
    let cfg = RLConfig {
        pad: a.pad.into(),
        backend: match a.backend {
            Backend::Fft => PixelBackend::Fft,
            Backend::Spatial => PixelBackend::Spatial,
        },
        ..RLConfig::new(Stencil::from_preset(&a.psf)?, a.iterations)
    };
    match read_input(&a.input)? {
        Input::Apr(apr, values) => write_apr(&a.output, &apr, &rl_apr(&apr, &values, &cfg)?),
        Input::Pixels(v) => write_volume(&a.output, &rl_pixels(&v, &cfg)?, ElementType::F32),
    }
}

fn bench_inputs(inputs: &[PathBuf]) -> Result<Vec<(String, PixelVolume)>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            found.retain(|f| f.extension().is_some_and(|e| e == "raw"));
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    files
        .iter()
        .map(|f| {
            let id = f.file_stem().map_or_else(|| f.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((id, read_volume_input(f)?))
        })
        .collect()
}

fn bench(a: &BenchArgs) -> Result<()> {
    let images = bench_inputs(&a.inputs)?;
    if images.is_empty() {
        return Err(Error::InvalidParameter("no input volumes".into()));
    }
    // Sigma is resolved against the first image when given as `constant`.
    let cfg = SuiteConfig {
        stencil_sizes: a.stencil_sizes.clone(),
        repeats: a.repeats,
        threads: rayon::current_num_threads(),
        build: a.build.params(&images[0].1)?,
        pixels: !a.no_pixels,
    };
    let records = run_suite(&images, &cfg)?;
    write_csv(fs::File::create(&a.output)?, &records)?;
    println!("{} rows written to {}", records.len(), a.output.display());
    Ok(())
}

fn info(path: &Path) -> Result<()> {
    let (apr, _) = read_apr_input(path)?;
    let d = apr.dims();
    let mem = memory_estimate(&apr, 4, 4);
    println!("dims (z x y): {} {} {}", d.z, d.x, d.y);
    println!("levels: {}..={}", apr.l_min(), apr.l_max());
    println!("particles: {}", apr.num_particles());
    println!("tree nodes: {}", apr.num_tree_nodes());
    println!("cr: {:.4}", apr.computational_ratio());
    for (l, n) in apr.particles_per_level() {
        println!("level {l}: {n}");
    }
    println!("memory (f32 in/out): apr {} B, pixels {} B, ratio {:.4}", mem.apr_bytes, mem.pixel_bytes, mem.ratio());
    Ok(())
}

fn generate(a: &GenerateArgs) -> Result<()> {
    if a.preset == Preset::CrSweep {
        let n = a.size.unwrap_or(128);
        fs::create_dir_all(&a.output)?;
        let images = cr_sweep(n, a.seed)?;
        for (id, v) in &images {
            write_volume(a.output.join(format!("{id}.raw")), v, ElementType::F32)?;
        }
        println!("{} volumes written to {}", images.len(), a.output.display());
        return Ok(());
    }
    let n = a.size.unwrap_or(64);
    let v = match a.preset {
        Preset::Spheres => generate_spheres(&SphereSpec {
            dims: Dims::cube(n),
            object_count: a.count,
            radius_range: (a.radius_min, a.radius_max),
            intensity: a.intensity,
            background: a.background,
            blur_sigma: a.blur,
            noise_sigma: a.noise,
            seed: a.seed,
        })?,
        _ => {
            let mut spec = cylinder_phantom(n, a.seed);
            spec.intensity = a.intensity;
            spec.background = a.background;
            spec.blur_sigma = a.blur;
            spec.noise_sigma = a.noise;
            generate_cylinders(&spec)?
        }
    };
    write_volume(&a.output, &v, ElementType::F32)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Format(_) | Error::Csv(_) => 3,
        Error::Capability(_) => 4,
        Error::InvalidParameter(_) => 2,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Convert(a) => convert(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Convolve(a) => convolve(a),
        Command::Deconvolve(a) => deconvolve(a),
        Command::Bench(a) => bench(a),
        Command::Info { input } => info(input),
        Command::Generate(a) => generate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(usize::from(t)).build_global() {
            eprintln!("aprkit: error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aprkit: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
