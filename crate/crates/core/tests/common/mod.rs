#![allow(dead_code)]

use aprkit::levels::{solve_levels, TargetLevels};
use aprkit::synth::Rng;
use aprkit::{level_bounds, Apr, Dims, PixelVolume};

/// Balanced APR refined around a few random balls of random target level.
pub fn random_apr(dims: Dims, seed: u64) -> Apr {
    let mut rng = Rng::new(seed);
    let (l_min, l_max) = level_bounds(dims);
    let mut levels = vec![l_min as u8; dims.len()];
    let n = dims.as_array().map(|v| v as f64);
    let max_edge = dims.max_edge() as f64;
    for _ in 0..1 + rng.below(4) {
        let c = [0, 1, 2].map(|a| rng.range(0.0, n[a]));
        let r = rng.range(0.5, (max_edge / 3.0).max(1.0));
        let lvl = (l_min + rng.below(l_max - l_min + 1)) as u8;
        for z in 0..dims.z {
            for x in 0..dims.x {
                for y in 0..dims.y {
                    let d2 = (z as f64 - c[0]).powi(2) + (x as f64 - c[1]).powi(2) + (y as f64 - c[2]).powi(2);
                    if d2 <= r * r {
                        let i = dims.index(z, x, y);
                        levels[i] = levels[i].max(lvl);
                    }
                }
            }
        }
    }
    Apr::new(solve_levels(&TargetLevels { dims, l_min, l_max, levels }))
}

pub fn random_values(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| rng.uniform() as f32).collect()
}

pub fn random_dims(rng: &mut Rng, max: usize) -> Dims {
    Dims::new(1 + rng.below(max), 1 + rng.below(max), 1 + rng.below(max))
}

/// Sum of random Gaussian blobs on a zero background, peak values near 1.
pub fn blob_image(dims: Dims, seed: u64) -> PixelVolume {
    let mut rng = Rng::new(seed);
    let n = dims.as_array().map(|v| v as f64);
    let blobs: Vec<([f64; 3], f64, f64)> = (0..3 + rng.below(6))
        .map(|_| {
            let c = [0, 1, 2].map(|a| rng.range(0.0, n[a]));
            (c, rng.range(1.5, dims.max_edge() as f64 / 6.0), rng.range(0.3, 1.0))
        })
        .collect();
    PixelVolume::from_fn(dims, |z, x, y| {
        blobs
            .iter()
            .map(|(c, s, a)| {
                let d2 = (z as f64 - c[0]).powi(2) + (x as f64 - c[1]).powi(2) + (y as f64 - c[2]).powi(2);
                a * (-d2 / (2.0 * s * s)).exp()
            })
            .sum::<f64>() as f32
    })
}

/// Index of the leaf covering each pixel, by visiting every footprint.
/// Panics on double coverage; `None` marks an uncovered pixel.
pub fn coverage(apr: &Apr) -> Vec<Option<usize>> {
    let a = apr.access();
    let dims = apr.dims();
    let mut map = vec![None; dims.len()];
    for p in a.particles() {
        let c = p.cell;
        let [rz, rx, ry] = a.footprint(c.level, c.z, c.x, c.y);
        for z in rz {
            for x in rx.clone() {
                for y in ry.clone() {
                    let slot = &mut map[dims.index(z, x, y)];
                    assert!(slot.is_none(), "pixel ({z}, {x}, {y}) covered twice");
                    *slot = Some(p.index);
                }
            }
        }
    }
    map
}

/// Mean of `v` over each cell of the grid `delta` levels coarser than pixels.
pub fn downsample(v: &PixelVolume, delta: usize) -> PixelVolume {
    let d = v.dims();
    let s = 1usize << delta;
    let cd = Dims::from_array(d.as_array().map(|n| n.div_ceil(s)));
    let mut sum = vec![0f64; cd.len()];
    let mut cnt = vec![0u32; cd.len()];
    for z in 0..d.z {
        for x in 0..d.x {
            for y in 0..d.y {
                let i = cd.index(z / s, x / s, y / s);
                sum[i] += f64::from(v.get(z, x, y));
                cnt[i] += 1;
            }
        }
    }
    PixelVolume::new(cd, sum.iter().zip(&cnt).map(|(s, &c)| (s / f64::from(c)) as f32).collect()).unwrap()
}

/// Direct convolution `o[j] = sum_m w[m] u[j + c - m]` with the given
/// out-of-domain rule, in `f64`.
pub fn direct_convolution(v: &PixelVolume, w: &aprkit::Stencil, reflect: bool) -> Vec<f64> {
    let d = v.dims();
    let n = d.as_array().map(|v| v as isize);
    let [kz, kx, ky] = w.size();
    let c = w.center().map(|v| v as isize);
    let map = |i: isize, n: isize| -> Option<usize> {
        if (0..n).contains(&i) {
            Some(i as usize)
        } else if reflect {
            let p = 2 * n;
            let m = i.rem_euclid(p);
            Some(if m < n { m } else { p - 1 - m } as usize)
        } else {
            None
        }
    };
    let mut out = vec![0f64; d.len()];
    for z in 0..n[0] {
        for x in 0..n[1] {
            for y in 0..n[2] {
                let mut s = 0f64;
                for a in 0..kz {
                    let Some(sz) = map(z + c[0] - a as isize, n[0]) else { continue };
                    for b in 0..kx {
                        let Some(sx) = map(x + c[1] - b as isize, n[1]) else { continue };
                        for e in 0..ky {
                            let Some(sy) = map(y + c[2] - e as isize, n[2]) else { continue };
                            s += w.get(a, b, e) * f64::from(v.get(sz, sx, sy));
                        }
                    }
                }
                out[d.index(z as usize, x as usize, y as usize)] = s;
            }
        }
    }
    out
}

/// One random restriction check in `ndim` dimensions: explicit fine-grid
/// convolution `K`, piecewise-constant prolongation `P` and averaging `R`.
/// Returns the max abs difference between the restricted stencil applied on
/// the coarse grid and `R K P x`, and whether `R P` is exactly the identity.
pub fn restriction_case(rng: &mut Rng, ndim: usize, max_fine: usize) -> (f64, bool) {
    use nalgebra::DMatrix;
    let delta = 1 + rng.below(2);
    let s = 1usize << delta;
    let max_coarse = (max_fine / s).max(1);
    let mut nc = [1usize; 3];
    let mut k = [1usize; 3];
    for a in 3 - ndim..3 {
        nc[a] = 1 + rng.below(max_coarse);
        k[a] = 2 * rng.below(4) + 1;
    }
    let nf = nc.map(|n| n * s);
    let nf_axes = [0, 1, 2].map(|a| if a >= 3 - ndim { nf[a] } else { 1 });
    let sc = [0, 1, 2].map(|a| if a >= 3 - ndim { s } else { 1 });
    let w = aprkit::Stencil::new(k, (0..k.iter().product()).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap();

    let axis_p = |a: usize| DMatrix::from_fn(nf_axes[a], nc[a], |i, j| if i / sc[a] == j { 1.0 } else { 0.0 });
    let axis_r = |a: usize| DMatrix::from_fn(nc[a], nf_axes[a], |j, i| if i / sc[a] == j { 1.0 / sc[a] as f64 } else { 0.0 });
    let p = axis_p(0).kronecker(&axis_p(1)).kronecker(&axis_p(2));
    let r = axis_r(0).kronecker(&axis_r(1)).kronecker(&axis_r(2));
    let fd = Dims::from_array(nf_axes);
    let c = w.center().map(|v| v as isize);
    let mut kmat = DMatrix::<f64>::zeros(fd.len(), fd.len());
    for z in 0..fd.z {
        for x in 0..fd.x {
            for y in 0..fd.y {
                for a in 0..k[0] {
                    for b in 0..k[1] {
                        for e in 0..k[2] {
                            let src = [z as isize + c[0] - a as isize, x as isize + c[1] - b as isize, y as isize + c[2] - e as isize];
                            if src.iter().zip(fd.as_array()).all(|(&i, n)| (0..n as isize).contains(&i)) {
                                let i = fd.index(src[0] as usize, src[1] as usize, src[2] as usize);
                                kmat[(fd.index(z, x, y), i)] += w.get(a, b, e);
                            }
                        }
                    }
                }
            }
        }
    }
    let cd = Dims::from_array(nc);
    let xs: Vec<f32> = (0..cd.len()).map(|_| rng.range(-1.0, 1.0) as f32).collect();
    let xv = nalgebra::DVector::from_iterator(cd.len(), xs.iter().map(|&v| f64::from(v)));
    let want = &r * &kmat * &p * &xv;
    // Length-1 axes restrict to themselves, so the unused axes stay inert.
    let restricted = aprkit::restrict_stencil(&w, delta as u32);
    let got = direct_convolution(&PixelVolume::new(cd, xs).unwrap(), &restricted, false);
    let err = got.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let rp = &r * &p;
    (err, rp == DMatrix::identity(cd.len(), cd.len()))
}

/// Max relative error of `out` against dense per-level convolution of the
/// level images, each sampled at its particles.
pub fn conv_oracle_error(apr: &Apr, vals: &[f32], pyramid: &aprkit::StencilPyramid, reflect: bool, out: &[f32]) -> f64 {
    let tree = aprkit::fill_tree(apr, vals).unwrap();
    let a = apr.access();
    let mut worst = 0f64;
    for l in a.levels() {
        if a.level_range(l).is_empty() {
            continue;
        }
        let img = aprkit::reconstruct_level(apr, vals, &tree, l).unwrap();
        let o = direct_convolution(&img, pyramid.level(l), reflect);
        let d = img.dims();
        let scale = o.iter().fold(0f64, |m, v| m.max(v.abs())).max(1e-12);
        for z in 0..d.z {
            for x in 0..d.x {
                for i in a.row(l, z, x) {
                    let y = a.y_idx()[i] as usize;
                    let want = o[d.index(z, x, y)];
                    let err = (f64::from(out[i]) - want).abs() / want.abs().max(1e-3 * scale);
                    worst = worst.max(err);
                }
            }
        }
    }
    worst
}

/// Integer-valued step image used for the on-disk fixtures.
pub fn fixture_image() -> PixelVolume {
    PixelVolume::from_fn(Dims::new(12, 16, 20), |z, x, y| {
        let inside = (z as i64 - 6).pow(2) + (x as i64 - 8).pow(2) + (y as i64 - 9).pow(2) <= 16;
        if inside { 200.0 } else { (10 + (x / 4) * 3) as f32 }
    })
}

pub fn fixture_apr() -> (Apr, aprkit::ParticleValues) {
    let params = aprkit::BuildParams::with_constant_sigma(0.1, 100.0);
    aprkit::build_apr(&fixture_image(), &params).unwrap()
}

pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Compare `bytes` against the stored fixture `name`, or overwrite it when
/// `APRKIT_BLESS` is set. Returns whether they matched.
pub fn check_fixture(name: &str, bytes: &[u8]) -> bool {
    let path = fixture_dir().join(name);
    if std::env::var_os("APRKIT_BLESS").is_some() {
        std::fs::create_dir_all(fixture_dir()).unwrap();
        std::fs::write(&path, bytes).unwrap();
        return true;
    }
    match std::fs::read(&path) {
        Ok(stored) => stored == bytes,
        Err(e) => panic!("missing fixture {}: {e} (run with APRKIT_BLESS=1)", path.display()),
    }
}
