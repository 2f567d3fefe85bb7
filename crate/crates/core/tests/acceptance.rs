mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use aprkit::deconv::History;
use aprkit::io::{decode_apr, encode_apr, encode_volume};
use aprkit::metrics::memory_model;
use aprkit::suite::{cr_sweep, SuiteConfig, OP_APR};
use aprkit::synth::{cylinder_phantom, Rng};
use aprkit::{
    add_noise, build_apr, convolve_apr, convolve_pixels, fill_tree, generate_cylinders, nrmse, reconstruct_full,
    rl_apr, rl_apr_tracked, rl_pixels, rl_pixels_tracked, run_suite, sample_particles, spearman, Apr, BuildParams,
    ConvOptions, Convolver, Dims, ElementType, PadMode, PixelVolume, PyramidMode, RLConfig, Stencil, StencilPyramid,
};
use common::{
    blob_image, check_fixture, conv_oracle_error, fixture_apr, fixture_image, random_apr, random_dims,
    random_values, restriction_case,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reconstruction_condition() -> Outcome {
    let mut worst = 0f64;
    let mut cr_sum = 0.0;
    for seed in 0..20 {
        let v = blob_image(Dims::cube(64), 1000 + seed);
        let sigma = f64::from(v.range());
        for e in [0.05, 0.1, 0.2] {
            let (apr, vals) = build_apr(&v, &BuildParams::with_constant_sigma(e, sigma)).map_err(|e| e.to_string())?;
            let rec = reconstruct_full(&apr, &vals).map_err(|e| e.to_string())?;
            let err = v.values().iter().zip(rec.values()).fold(0f64, |m, (&a, &b)| m.max(f64::from((a - b).abs())));
            worst = worst.max(err / sigma / e);
            cr_sum += apr.computational_ratio();
        }
    }
    ensure(worst <= 1.0, format!("max error / (E sigma) = {worst:.4}, mean CR {:.2}", cr_sum / 60.0))
}

fn restriction_oracle() -> Outcome {
    let mut rng = Rng::new(2);
    let mut worst = [0f64; 3];
    let mut identity = true;
    for ndim in 1..=3 {
        let max_fine = if ndim == 3 { 8 } else { 16 };
        for _ in 0..50 {
            let (err, rp) = restriction_case(&mut rng, ndim, max_fine);
            worst[ndim - 1] = worst[ndim - 1].max(err);
            identity &= rp;
        }
    }
    ensure(
        worst.iter().all(|&e| e <= 1e-6) && identity,
        format!("max abs error 1D {:.1e} 2D {:.1e} 3D {:.1e}, R P == I: {identity}", worst[0], worst[1], worst[2]),
    )
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn convolution_oracle() -> Outcome {
    let mut rng = Rng::new(3);
    let max_threads = std::thread::available_parallelism().map_or(4, |n| n.get());
    let mut pools = vec![1, 2, 4, max_threads];
    pools.sort_unstable();
    pools.dedup();
    let mut worst = 0f64;
    let mut identical = true;
    let mut particles = 0;
    for seed in 0..20u64 {
        let apr = random_apr(Dims::cube(32), 300 + seed);
        let vals = random_values(apr.num_particles(), seed);
        let tree = fill_tree(&apr, &vals).map_err(|e| e.to_string())?;
        particles += apr.num_particles();
        for k in [3, 5, 13] {
            let w = Stencil::new([k; 3], (0..k * k * k).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap();
            let pyramid = StencilPyramid::restricted(&apr, &w);
            let run = |skip: bool, threads: usize| {
                in_pool(threads, || {
                    let opts = ConvOptions { skip_empty_rows: skip, ..Default::default() };
                    convolve_apr(&apr, &vals, &tree, &pyramid, opts).unwrap()
                })
            };
            let out = run(true, max_threads);
            worst = worst.max(conv_oracle_error(&apr, &vals, &pyramid, true, &out));
            for &threads in &pools {
                for skip in [true, false] {
                    identical &= run(skip, threads) == out;
                }
            }
        }
    }
    ensure(
        worst <= 1e-5 && identical,
        format!(
            "max rel error {worst:.2e} over {particles} particles x 3 stencils, bit-identical over threads {pools:?} and row skipping: {identical}"
        ),
    )
}

fn max_abs(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).fold(0f64, |m, (&x, &y)| m.max(f64::from((x - y).abs())))
}

fn dense_degeneracy() -> Outcome {
    let dims = Dims::new(32, 40, 48);
    let v = blob_image(dims, 4);
    let apr = Apr::dense(dims);
    let mut conv_err = 0f64;
    for w in [Stencil::gaussian(1.5, 7).unwrap(), Stencil::new([3; 3], random_values(27, 1).iter().map(|&x| f64::from(x) - 0.5).collect()).unwrap()] {
        let a = Convolver::new(&apr, ConvOptions::default())
            .convolve(v.values(), &StencilPyramid::restricted(&apr, &w))
            .map_err(|e| e.to_string())?;
        let p = convolve_pixels(&v, &w, PadMode::Reflect).map_err(|e| e.to_string())?;
        conv_err = conv_err.max(max_abs(&a, p.values()));
    }
    let psf = Stencil::gaussian(2.0, 13).unwrap();
    let blurred = convolve_pixels(&v, &psf, PadMode::Reflect).map_err(|e| e.to_string())?;
    let cfg = RLConfig::new(psf, 10);
    let a = rl_apr(&apr, blurred.values(), &cfg).map_err(|e| e.to_string())?;
    let p = rl_pixels(&blurred, &cfg).map_err(|e| e.to_string())?;
    let rl_err = max_abs(&a, p.values());
    ensure(
        conv_err <= 1e-6 && rl_err <= 1e-4,
        format!("convolution max abs {conv_err:.1e}, RL (10 iterations, FFT pixel backend) max abs {rl_err:.1e}"),
    )
}

fn tree_fill_oracle() -> Outcome {
    let dims = Dims::cube(64);
    let v = blob_image(dims, 5);
    let built = build_apr(&v, &BuildParams::default()).map_err(|e| e.to_string())?;
    let random = random_apr(dims, 5);
    let random_vals = random_values(random.num_particles(), 5);
    let mut worst = 0f64;
    let mut nodes = 0;
    for (apr, vals) in [(&built.0, &built.1[..]), (&random, &random_vals[..])] {
        let tree = fill_tree(apr, vals).map_err(|e| e.to_string())?;
        let full = reconstruct_full(apr, vals).map_err(|e| e.to_string())?;
        for p in apr.tree().particles() {
            let c = p.cell;
            let [rz, rx, ry] = apr.tree().footprint(c.level, c.z, c.x, c.y);
            let (mut s, mut n) = (0f64, 0usize);
            for z in rz {
                for x in rx.clone() {
                    for y in ry.clone() {
                        s += f64::from(full.get(z, x, y));
                        n += 1;
                    }
                }
            }
            let want = s / n as f64;
            worst = worst.max((f64::from(tree[p.index]) - want).abs() / want.abs().max(1e-12));
            nodes += 1;
        }
    }
    ensure(worst <= 1e-5, format!("max rel error {worst:.2e} over {nodes} tree nodes"))
}

fn sweep_records() -> Result<Vec<aprkit::BenchRecord>, String> {
    let images = cr_sweep(128, 7).map_err(|e| e.to_string())?;
    let cfg = SuiteConfig { stencil_sizes: vec![3, 5], repeats: 3, pixels: false, ..Default::default() };
    run_suite(&images, &cfg).map_err(|e| e.to_string())
}

fn memory_model_check(records: &[aprkit::BenchRecord]) -> Outcome {
    let mut rows: Vec<_> = records.iter().filter(|r| r.op == OP_APR && r.stencil_size == 3).collect();
    rows.sort_by(|a, b| a.cr.total_cmp(&b.cr));
    let decreasing = rows.windows(2).all(|w| w[0].cr < w[1].cr && w[1].memory_bytes_apr < w[0].memory_bytes_apr);
    let ratio = |r: &aprkit::BenchRecord| r.memory_bytes_apr as f64 / r.memory_bytes_pixels as f64;
    let (lo, hi) = (rows[0], rows[rows.len() - 1]);
    let lo_ok = lo.cr < 1.05 && (1.2..=1.5).contains(&ratio(lo));
    let hi_ok = ratio(hi) < 0.1;
    let big = Dims::cube(1024);
    let within = |got: f64, want: f64| (got - want).abs() <= 0.1 * want;
    let px = memory_model(big, 1.0, 4, 4).pixel_bytes as f64;
    let m20 = memory_model(big, 20.8, 4, 4).apr_bytes as f64;
    let m1020 = memory_model(big, 1020.0, 4, 4).apr_bytes as f64;
    let analytic = within(px, 8.59e9) && within(m20, 0.58e9) && within(m1020, 25.5e6);
    ensure(
        decreasing && lo_ok && hi_ok && analytic,
        format!(
            "strictly decreasing: {decreasing}; ratio {:.3} at CR {:.2}, {:.4} at CR {:.1}; 1024^3 model: pixels {:.2} GB, CR 20.8 {:.3} GB, CR 1020 {:.1} MB",
            ratio(lo),
            lo.cr,
            ratio(hi),
            hi.cr,
            px / 1e9,
            m20 / 1e9,
            m1020 / 1e6
        ),
    )
}

fn throughput_scaling(records: &[aprkit::BenchRecord]) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for k in [3, 5] {
        let mut rows: Vec<_> = records.iter().filter(|r| r.op == OP_APR && r.stencil_size == k).collect();
        rows.sort_by(|a, b| a.cr.total_cmp(&b.cr));
        let cr: Vec<f64> = rows.iter().map(|r| r.cr).collect();
        let tp: Vec<f64> = rows.iter().map(|r| r.effective_throughput_bps).collect();
        let rho = spearman(&cr, &tp);
        let gain = tp[tp.len() - 1] / tp[0];
        ok &= rho >= 0.9 && gain >= 3.0;
        detail.push(format!("k={k}: spearman {rho:.3}, top/bottom {gain:.1}x"));
    }
    ensure(ok, detail.join("; "))
}

fn non_increasing(h: &History) -> bool {
    h.windows(2).all(|w| w[1].1 <= w[0].1)
}

fn rl_behavior() -> Outcome {
    let truth = generate_cylinders(&cylinder_phantom(64, 3)).map_err(|e| e.to_string())?;
    let psf = Stencil::gaussian(2.0, 13).unwrap();
    let blurred = convolve_pixels(&truth, &psf, PadMode::Reflect).map_err(|e| e.to_string())?;
    let input_err = nrmse(&truth, &blurred).map_err(|e| e.to_string())?;

    let (apr, _) = build_apr(&blurred, &BuildParams::default()).map_err(|e| e.to_string())?;
    let obs = sample_particles(&blurred, apr.access()).map_err(|e| e.to_string())?;
    let cfg = RLConfig::new(psf.clone(), 100);
    let (_, hist) = rl_apr_tracked(&apr, &obs, &cfg, &truth).map_err(|e| e.to_string())?;
    let final_clean = hist.last().unwrap().1;
    let clean_ok = non_increasing(&hist) && final_clean < input_err;

    let mut noisy = blurred.clone();
    add_noise(&mut noisy, 3.0, &mut Rng::new(11));
    let params = BuildParams { smoothing_passes: 2, ..BuildParams::with_constant_sigma(0.2, 90.0) };
    let (napr, _) = build_apr(&noisy, &params).map_err(|e| e.to_string())?;
    let nobs = sample_particles(&noisy, napr.access()).map_err(|e| e.to_string())?;
    let cfg = RLConfig { record_every: 100, ..RLConfig::new(psf, 500) };
    let (_, ah) = rl_apr_tracked(&napr, &nobs, &cfg, &truth).map_err(|e| e.to_string())?;
    let (_, ph) = rl_pixels_tracked(&noisy, &cfg, &truth).map_err(|e| e.to_string())?;
    let (a500, p500) = (ah.last().unwrap().1, ph.last().unwrap().1);
    ensure(
        clean_ok && a500 <= p500,
        format!(
            "noise-free (CR {:.2}): NRMSE {:.4} -> {:.4} non-increasing {}, blurred input {:.4}; noisy (CR {:.2}) at 500: APR {:.4}, pixels {:.4}",
            apr.computational_ratio(),
            hist[0].1,
            final_clean,
            non_increasing(&hist),
            input_err,
            napr.computational_ratio(),
            a500,
            p500
        ),
    )
}

fn adaptive_gradient() -> Outcome {
    let dims = Dims::cube(64);
    let mut worst = 0f64;
    let mut checked = 0;
    let mut levels = std::collections::BTreeSet::new();
    for seed in 0..3 {
        let apr = random_apr(dims, 900 + seed);
        let a = apr.access();
        for axis in 0..3 {
            let ramp = PixelVolume::from_fn(dims, |z, x, y| [z, x, y][axis] as f32);
            let vals = sample_particles(&ramp, a).map_err(|e| e.to_string())?;
            let w = Stencil::central_difference(axis).unwrap();
            let pyramid = StencilPyramid::for_apr(&apr, &w, PyramidMode::Rescaled).map_err(|e| e.to_string())?;
            let out = Convolver::new(&apr, ConvOptions::default()).convolve(&vals, &pyramid).map_err(|e| e.to_string())?;
            for p in a.particles() {
                let c = p.cell;
                let d = a.level_dims(c.level);
                let cell = [c.z, c.x, c.y];
                let mut usable = true;
                for step in [-1isize, 1] {
                    let n = cell[axis] as isize + step;
                    if n < 0 || n >= [d.z, d.x, d.y][axis] as isize {
                        usable = false;
                        break;
                    }
                    let mut nb = cell;
                    nb[axis] = n as usize;
                    let [rz, rx, ry] = a.footprint(c.level, nb[0], nb[1], nb[2]);
                    usable &= a.resolution_level_at(rz.start, rx.start, ry.start).unwrap() >= c.level;
                }
                if usable {
                    worst = worst.max((f64::from(out[p.index]) - 1.0).abs());
                    checked += 1;
                    levels.insert(c.level);
                }
            }
        }
    }
    ensure(
        worst <= 1e-5 && levels.len() > 1,
        format!("max |gradient - 1| {worst:.1e} at {checked} particle-axis pairs on levels {levels:?}"),
    )
}

fn serialization() -> Outcome {
    let mut rng = Rng::new(10);
    let mut bad = 0;
    for seed in 0..200 {
        let mut apr = random_apr(random_dims(&mut rng, 24), 5000 + seed);
        if seed % 2 == 0 {
            apr = apr.with_params(BuildParams::with_constant_sigma(rng.range(0.01, 1.0), rng.range(0.1, 100.0)));
        }
        let vals = random_values(apr.num_particles(), seed);
        let tree = fill_tree(&apr, &vals).map_err(|e| e.to_string())?;
        let bytes = encode_apr(&apr, &vals, &tree).map_err(|e| e.to_string())?;
        let f = decode_apr(&bytes).map_err(|e| e.to_string())?;
        if f.apr != apr || *f.values != vals[..] || *f.tree_values != tree[..] {
            bad += 1;
        }
    }
    let (apr, vals) = fixture_apr();
    let tree = fill_tree(&apr, &vals).map_err(|e| e.to_string())?;
    let apr_stable = check_fixture("small.apr", &encode_apr(&apr, &vals, &tree).map_err(|e| e.to_string())?);
    let raw_stable = check_fixture("small.raw", &encode_volume(&fixture_image(), ElementType::U8).map_err(|e| e.to_string())?);
    ensure(
        bad == 0 && apr_stable && raw_stable,
        format!("{bad}/200 round trips differ; fixtures byte-stable: small.apr {apr_stable}, small.raw {raw_stable}"),
    )
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t.elapsed().as_secs_f64();
    match &r {
        Ok(d) => println!("PASS {id:2} {name}: {d} [{secs:.1}s]"),
        Err(d) => println!("FAIL {id:2} {name}: {d} [{secs:.1}s]"),
    }
    r.is_ok()
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= run(1, "reconstruction condition", reconstruction_condition);
    ok &= run(2, "restriction oracle", restriction_oracle);
    ok &= run(3, "convolution oracle", convolution_oracle);
    ok &= run(4, "CR=1 degeneracy", dense_degeneracy);
    ok &= run(5, "tree fill oracle", tree_fill_oracle);
    let t = Instant::now();
    let records = sweep_records();
    println!("     128^3 sweep benchmarked in {:.1}s", t.elapsed().as_secs_f64());
    ok &= run(6, "memory model", || memory_model_check(records.as_ref()?));
    ok &= run(7, "throughput scaling", || throughput_scaling(records.as_ref()?));
    ok &= run(8, "RL behavior", rl_behavior);
    ok &= run(9, "adaptive gradient", adaptive_gradient);
    ok &= run(10, "serialization", serialization);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
