mod common;

use aprkit::io::{encode_apr, header_bytes};
use aprkit::suite::{cr_sweep_specs, read_csv, write_csv, SuiteConfig};
use aprkit::synth::Rng;
use aprkit::{
    build_apr, fill_tree, generate_cylinders, generate_spheres, memory_estimate, nrmse, psnr, run_suite, spearman,
    ssim, BuildParams, Dims, PixelVolume, SphereSpec,
};
use common::random_values;

fn spheres(n: usize, count: usize, seed: u64) -> SphereSpec {
    SphereSpec {
        dims: Dims::cube(n),
        object_count: count,
        radius_range: (2.0, 5.0),
        intensity: 100.0,
        background: 10.0,
        blur_sigma: 1.0,
        noise_sigma: 0.0,
        seed,
    }
}

/// Direct SSIM: every fully contained window, statistics summed from scratch.
fn ssim_oracle(a: &PixelVolume, b: &PixelVolume) -> f64 {
    let d = a.dims();
    let w = d.as_array().map(|n| n.min(7));
    let range = f64::from(a.range());
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let (mut total, mut count) = (0.0, 0);
    for z0 in 0..=d.z - w[0] {
        for x0 in 0..=d.x - w[1] {
            for y0 in 0..=d.y - w[2] {
                let mut pa = Vec::new();
                let mut pb = Vec::new();
                for z in z0..z0 + w[0] {
                    for x in x0..x0 + w[1] {
                        for y in y0..y0 + w[2] {
                            pa.push(f64::from(a.get(z, x, y)));
                            pb.push(f64::from(b.get(z, x, y)));
                        }
                    }
                }
                let n = pa.len() as f64;
                let ma = pa.iter().sum::<f64>() / n;
                let mb = pb.iter().sum::<f64>() / n;
                let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
                let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
                let cov = pa.iter().zip(&pb).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / n;
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn generators_are_deterministic() {
    let s = spheres(32, 10, 5);
    assert_eq!(generate_spheres(&s).unwrap(), generate_spheres(&s).unwrap());
    let noisy = SphereSpec { noise_sigma: 2.0, ..s.clone() };
    assert_eq!(generate_spheres(&noisy).unwrap(), generate_spheres(&noisy).unwrap());
    assert_ne!(generate_spheres(&s).unwrap(), generate_spheres(&SphereSpec { seed: 6, ..s }).unwrap());
    let c = aprkit::synth::cylinder_phantom(32, 2);
    assert_eq!(generate_cylinders(&c).unwrap(), generate_cylinders(&c).unwrap());
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(generate_spheres(&SphereSpec { radius_range: (5.0, 2.0), ..spheres(32, 1, 0) }).is_err());
    assert!(generate_spheres(&SphereSpec { radius_range: (2.0, 16.0), ..spheres(32, 1, 0) }).is_err());
}

#[test]
fn sparser_images_compress_more() {
    let crs: Vec<f64> = [512, 64, 8, 1]
        .into_iter()
        .map(|count| {
            let v = generate_spheres(&spheres(64, count, 1)).unwrap();
            build_apr(&v, &BuildParams::default()).unwrap().0.computational_ratio()
        })
        .collect();
    assert!(crs.windows(2).all(|w| w[0] < w[1]), "{crs:?}");
}

#[test]
fn cr_regression() {
    let v = generate_spheres(&spheres(64, 16, 3)).unwrap();
    let (apr, _) = build_apr(&v, &BuildParams::default()).unwrap();
    assert_eq!(apr.num_particles(), 23731);
    assert_eq!(apr.computational_ratio(), 262144.0 / 23731.0);
}

#[test]
fn metrics_match_direct_formulas() {
    let mut rng = Rng::new(12);
    for seed in 0..4u64 {
        let dims = Dims::new(16, 16 - seed as usize, 16);
        let a = PixelVolume::new(dims, random_values(dims.len(), seed)).unwrap();
        let mut b = a.clone();
        aprkit::add_noise(&mut b, rng.range(0.01, 0.3), &mut rng);
        let (mn, mx) = a.values().iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v.into()), hi.max(v.into())));
        let mse = a.values().iter().zip(b.values()).map(|(&p, &q)| (f64::from(p) - f64::from(q)).powi(2)).sum::<f64>()
            / dims.len() as f64;
        let range = mx - mn;
        assert!((nrmse(&a, &b).unwrap() - mse.sqrt() / range).abs() <= 1e-6);
        assert!((psnr(&a, &b).unwrap() - 10.0 * (range * range / mse).log10()).abs() <= 1e-6);
        assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() <= 1e-6);
    }
    let a = PixelVolume::new(Dims::cube(8), random_values(512, 1)).unwrap();
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(nrmse(&a, &a).unwrap(), 0.0);
    assert!(nrmse(&a, &PixelVolume::filled(Dims::cube(4), 0.0)).is_err());
}

#[test]
fn memory_estimate_matches_file_size() {
    let v = generate_spheres(&spheres(32, 4, 9)).unwrap();
    let (apr, vals) = build_apr(&v, &BuildParams::default()).unwrap();
    let tree = fill_tree(&apr, &vals).unwrap();
    let file = encode_apr(&apr, &vals, &tree).unwrap().len() as u64;
    let m = memory_estimate(&apr, 4, 4);
    // The file stores values once, the estimate counts input and output.
    assert_eq!(m.apr_bytes, file - header_bytes(&apr) + 4 * apr.num_particles() as u64);
    assert_eq!(m.pixel_bytes, 8 * 32 * 32 * 32);
}

#[test]
fn small_suite_produces_consistent_records() {
    let images: Vec<_> = cr_sweep_specs(32, 7)
        .into_iter()
        .step_by(3)
        .map(|(id, s)| (id, generate_spheres(&s).unwrap()))
        .collect();
    let cfg = SuiteConfig { stencil_sizes: vec![3], repeats: 1, threads: 2, ..Default::default() };
    let rec = run_suite(&images, &cfg).unwrap();
    assert_eq!(rec.len(), 2 * images.len());
    for r in &rec {
        assert_eq!((r.nz, r.nx, r.ny, r.threads, r.stencil_size), (32, 32, 32, 2, 3));
        assert!(r.wall_time_s > 0.0 && r.effective_throughput_bps > 0.0);
        assert!((r.effective_throughput_bps * r.wall_time_s - 4.0 * 32768.0).abs() < 1e-3);
    }
    let apr: Vec<_> = rec.iter().filter(|r| r.op == "apr_conv").collect();
    let cr: Vec<f64> = apr.iter().map(|r| r.cr).collect();
    let mem: Vec<f64> = apr.iter().map(|r| -(r.memory_bytes_apr as f64)).collect();
    assert!((spearman(&cr, &mem) - 1.0).abs() < 1e-12, "{cr:?}");
    let mut buf = Vec::new();
    write_csv(&mut buf, &rec).unwrap();
    assert_eq!(read_csv(&buf[..]).unwrap(), rec);
}
