//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Run with `cargo test -p shapefit --test acceptance`. The phantom study
//! takes a few minutes on one core; set `SHAPEFIT_SKIP_STUDY=1` to skip it.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapefit::cpd::{register_nonrigid, register_rigid, CpdConfig};
use shapefit::dataio::{
    make_phantom, reconstruct_volume_on, EllipsoidFamily, FanAcquisition, PhantomConfig,
    PhantomSpec, ShapeSource,
};
use shapefit::fitter::{
    fit, pso_maximize, rasterize_params, utility, FitConfig, FitParams, NormKind,
};
use shapefit::geometry::{
    apply_rigid, Grid, PointCloud, RigidTransform, Vec3, Volume3D, VolumeKind,
};
use shapefit::metrics::{dice, jaccard, regional_jaccard, RegionConfig};
use shapefit::ssm::{build_model, project, reconstruct, ModeWeights};

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = fn() -> Outcome;

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Irregular closed surface sampled at uniformly random directions. `lumps`
/// sets the surface shape; the sampling comes from `rng`.
fn sampled_blob(n: usize, radius: f64, lumps: [f64; 4], rng: &mut ChaCha8Rng) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            surface_point(Vec3::new(r * t.cos(), r * t.sin(), z), radius, lumps)
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

/// The same kind of surface sampled on a Fibonacci lattice. Two such clouds
/// share their sampling pattern, which gives registration aliased minima.
fn lattice_blob(n: usize, radius: f64, lumps: [f64; 4]) -> PointCloud {
    let pts = (0..n)
        .map(|i| {
            let t = i as f64 * 2.399963229728653;
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            surface_point(Vec3::new(r * t.cos(), r * t.sin(), z), radius, lumps)
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

fn surface_point(d: Vec3, radius: f64, k: [f64; 4]) -> Vec3 {
    let lump = 1.0 + 0.2 * (k[0] * d.x + k[1]).sin() * (k[2] * d.y).cos() + 0.15 * k[3] * d.z * d.y;
    Vec3::new(1.4 * d.x, d.y, 0.7 * d.z) * radius * lump
}

fn random_lumps(rng: &mut ChaCha8Rng) -> [f64; 4] {
    std::array::from_fn(|_| rng.random_range(0.5..2.0))
}

fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
    let axis = Unit::new_normalize(Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let angle = rng.random_range(0.0..30f64.to_radians());
    let t = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let t = t / t.norm() * rng.random_range(0.0..20.0);
    RigidTransform::from_matrix(Rotation3::from_axis_angle(&axis, angle).matrix(), t)
}

/// Rotation error, translation error and seconds for one registration.
fn rigid_trial(fixed: &PointCloud, truth: &RigidTransform) -> Option<(f64, f64, f64)> {
    let moving = apply_rigid(fixed, &truth.inverse()).unwrap();
    let start = Instant::now();
    let res = register_rigid(&moving, fixed, &CpdConfig::default()).ok()?;
    let secs = start.elapsed().as_secs_f64();
    Some((
        (res.rotation() - truth.rotation()).norm(),
        (res.transform.translation_vec() - truth.translation_vec()).norm(),
        secs,
    ))
}

fn cpd_rigid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let lumps = random_lumps(&mut rng);
        let fixed = sampled_blob(500, 20.0, lumps, &mut rng);
        let Some((rot, tr, secs)) = rigid_trial(&fixed, &random_pose(&mut rng)) else {
            return outcome(false, "registration returned an error".into());
        };
        worst = (worst.0.max(rot), worst.1.max(tr), worst.2.max(secs));
    }
    let recovered = (0..20)
        .filter(|_| {
            let shape = lattice_blob(500, 20.0, random_lumps(&mut rng));
            rigid_trial(&shape, &random_pose(&mut rng))
                .is_some_and(|(r, t, _)| r < 1e-3 && t < 1e-3)
        })
        .count();
    println!("INFO cpd rigid with identical lattice sampling: {recovered}/20 recovered to 1e-3");
    outcome(
        worst.0 < 1e-3 && worst.1 < 1e-3 && worst.2 < 1.0,
        format!(
            "20 random shapes and poses, worst rotation error {:.2e}, translation {:.2e} mm, time {:.3} s",
            worst.0, worst.1, worst.2
        ),
    )
}

/// RMS correspondence error of non-rigid registration onto a sinusoidal warp, as a fraction of the diameter.
fn warp_error(moving: &PointCloud) -> Option<f64> {
    let diameter = moving.diameter();
    let c = moving.centroid();
    let r = moving.rms_radius();
    let amp = 0.05 * diameter;
    let fixed = moving.map(|p| {
        let q = (p - c) / r;
        p + Vec3::new(
            (1.3 * q.y + 0.4).sin(),
            (1.1 * q.z - 0.2).sin(),
            (0.9 * q.x + 0.7).sin(),
        ) * amp
    });
    let res = register_nonrigid(moving, &fixed, &CpdConfig::default()).ok()?;
    Some(res.displaced.rms_distance(&fixed).unwrap() / diameter)
}

fn cpd_nonrigid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let recovered = (0..10)
        .filter(|_| {
            warp_error(&lattice_blob(400, 20.0, random_lumps(&mut rng))).is_some_and(|e| e < 0.01)
        })
        .count();
    println!(
        "INFO cpd non-rigid with identical lattice sampling: {recovered}/10 under 1% of diameter"
    );
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let lumps = random_lumps(&mut rng);
        match warp_error(&sampled_blob(400, 20.0, lumps, &mut rng)) {
            Some(e) => worst = worst.max(e),
            None => return outcome(false, "registration returned an error".into()),
        }
    }
    outcome(
        worst < 0.01,
        format!(
            "5 random shapes, worst RMS error {:.4}% of diameter",
            100.0 * worst
        ),
    )
}

fn ssm_exactness() -> Outcome {
    let family = EllipsoidFamily::default();
    let clouds = family.population(30, 5).unwrap();
    let model = build_model(&clouds, 1.0).unwrap();
    let mut worst = 0.0f64;
    for c in &clouds {
        let w = project(&model, c).unwrap();
        let back = reconstruct(&model, &w).unwrap();
        let num: f64 = c
            .points()
            .iter()
            .zip(back.points())
            .map(|(a, b)| (a - b).norm_squared())
            .sum();
        let den: f64 = c.points().iter().map(|a| a.norm_squared()).sum();
        worst = worst.max((num / den).sqrt());
    }

    let dirs = sampled_blob(300, 1.0, [1.0; 4], &mut ChaCha8Rng::seed_from_u64(1));
    let dirs: Vec<Vec3> = dirs.points().iter().map(|p| p / p.norm()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spheres: Vec<PointCloud> = (0..30)
        .map(|_| {
            let r = rng.random_range(15.0..25.0);
            PointCloud::new(dirs.iter().map(|d| d * r).collect()).unwrap()
        })
        .collect();
    let first = build_model(&spheres, 0.9).unwrap().explained_curve()[0];
    outcome(
        worst < 1e-6 && first >= 0.99,
        format!(
            "{} modes, worst relative round-trip error {:.2e}; sphere family mode 1 explains {:.4}%",
            model.n_modes(),
            worst,
            100.0 * first
        ),
    )
}

fn utility_oracle() -> Outcome {
    let family = EllipsoidFamily {
        n_points: 400,
        ..EllipsoidFamily::default()
    };
    let model = build_model(&family.population(12, 21).unwrap(), 0.95)
        .unwrap()
        .with_topology(family.topology().unwrap())
        .unwrap();
    let grid = Grid::centered([48, 40, 44], [1.2; 3], [0.0; 3]).unwrap();
    let cfg = FitConfig {
        alpha: 0.0,
        norm_kind: NormKind::L1Sum,
        ..FitConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    for _ in 0..50 {
        let density: f64 = rng.random_range(0.1..0.9);
        let map = Volume3D::mask_from(grid, (0..grid.len()).map(|_| rng.random::<f64>() < density))
            .and_then(|m| m.with_kind(VolumeKind::Probability))
            .unwrap();
        let w = ModeWeights(
            model
                .eigenvalues()
                .iter()
                .map(|l| rng.random_range(-2.0..2.0) * l.sqrt())
                .collect(),
        );
        let pose = RigidTransform::new(
            std::array::from_fn(|_| rng.random_range(-4.0..4.0)),
            std::array::from_fn(|_| rng.random_range(-0.3..0.3)),
        );
        let p = FitParams::new(w, pose);
        let u = utility(&model, &map, &p, &cfg).unwrap();
        let mask = rasterize_params(&model, &p, &grid).unwrap().mask;
        let count = mask
            .data()
            .iter()
            .zip(map.data())
            .filter(|(a, b)| **a == 1.0 && **b == 1.0)
            .count();
        if u != count as f64 {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("50 random binary maps, {mismatches} mismatches"),
    )
}

fn pso() -> Outcome {
    let c = [1.5, -2.0, 0.5, 3.0, -0.7];
    let objective = |x: &[f64]| {
        -x.iter()
            .zip(&c)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    };
    let bounds = vec![(-10.0, 10.0); 5];
    let cfg = FitConfig {
        max_iters: 200,
        seed: 17,
        ..FitConfig::default()
    };
    let a = pso_maximize(objective, &bounds, &[], &cfg).unwrap();
    let b = pso_maximize(objective, &bounds, &[], &cfg).unwrap();
    let identical = a
        .best
        .iter()
        .zip(&b.best)
        .all(|(x, y)| x.to_bits() == y.to_bits())
        && a.trace
            .iter()
            .zip(&b.trace)
            .all(|(x, y)| x.to_bits() == y.to_bits())
        && a.trace.len() == b.trace.len();
    outcome(
        -a.value < 1e-4 && a.iterations <= 200 && identical,
        format!(
            "gap to optimum {:.2e} after {} iterations; seeded rerun bit-identical: {identical}",
            -a.value, a.iterations
        ),
    )
}

fn phantom_study() -> Outcome {
    let start = Instant::now();
    let config = PhantomConfig::default();
    let family = config.family.clone();
    let model = build_model(&family.population(40, 1).unwrap(), 0.9)
        .unwrap()
        .with_topology(family.topology().unwrap())
        .unwrap();
    let fit_cfg = FitConfig::default();
    let regions = RegionConfig::default();
    let mut sums = [0.0; 4];
    let mut worst = f64::INFINITY;
    let n = 20;
    for i in 0..n {
        let spec = PhantomSpec {
            source: ShapeSource::Family(family.clone()),
            config: PhantomConfig {
                seed: 10_000 + i as u64,
                ..config.clone()
            },
        };
        let phantom = make_phantom(&spec).unwrap();
        let result = fit(
            &model,
            &phantom.prob_map,
            &FitConfig {
                seed: i as u64,
                ..fit_cfg.clone()
            },
        );
        let Ok(result) = result else {
            return outcome(false, format!("case {i}: fit failed"));
        };
        let s = regional_jaccard(&result.mask, &phantom.truth_mask, &regions).unwrap();
        for (acc, v) in sums.iter_mut().zip(s.as_array()) {
            *acc += v;
        }
        worst = worst.min(s.overall);
    }
    let [overall, apex, mid, base] = sums.map(|s| s / n as f64);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        overall >= 85.0 && mid >= apex && mid >= base && secs < 600.0,
        format!(
            "{n} cases, {} modes: JSC overall {overall:.2} (worst {worst:.2}), apex {apex:.2}, mid-gland {mid:.2}, base {base:.2}; {secs:.0} s",
            model.n_modes()
        ),
    )
}

fn fan_acquisition(value: impl Fn(usize, usize, usize) -> f64) -> FanAcquisition {
    let (rows, cols) = (24, 20);
    FanAcquisition {
        frames: (0..100)
            .map(|f| {
                (0..rows * cols)
                    .map(|p| value(f, p / cols, p % cols))
                    .collect()
            })
            .collect(),
        rows,
        cols,
        angles: (0..100).map(|f| 45.0 + 0.9 * f as f64).collect(),
        pixel_spacing: [0.5, 0.5],
        axis_offset: 5.0,
        z_origin: -4.0,
    }
}

fn fan_reconstruction() -> Outcome {
    let ramp = fan_acquisition(|f, _, _| f as f64);
    let mut ramp_err = 0.0f64;
    for k in [0usize, 13, 49, 77, 98] {
        let deg = (45.0 + 0.9 * (k as f64 + 0.5)).to_radians();
        for (rho, z) in [(7.0, -2.0), (12.3, 1.1), (15.9, 4.5)] {
            let voxel =
                Grid::new([1, 1, 1], [0.5; 3], [rho * deg.cos(), rho * deg.sin(), z]).unwrap();
            let rec = reconstruct_volume_on(&ramp, &voxel).unwrap();
            ramp_err = ramp_err.max((rec.volume.data()[0] - (k as f64 + 0.5)).abs());
        }
    }

    let noise = |s: u64| {
        move |f: usize, r: usize, c: usize| {
            let h = (s ^ (f as u64 * 7919 + r as u64 * 104729 + c as u64 * 1299709))
                .wrapping_mul(0x9E3779B97F4A7C15);
            (h >> 11) as f64 / (1u64 << 53) as f64
        }
    };
    let (a, b) = (1.7, -0.6);
    let (n1, n2) = (noise(3), noise(8));
    let grid = Grid::new([24, 24, 12], [0.75; 3], [-9.0, 4.0, -3.5]).unwrap();
    let r1 = reconstruct_volume_on(&fan_acquisition(n1), &grid)
        .unwrap()
        .volume;
    let r2 = reconstruct_volume_on(&fan_acquisition(n2), &grid)
        .unwrap()
        .volume;
    let rm = reconstruct_volume_on(
        &fan_acquisition(|f, r, c| a * n1(f, r, c) + b * n2(f, r, c)),
        &grid,
    )
    .unwrap()
    .volume;
    let lin_err = (0..grid.len())
        .map(|i| (rm.data()[i] - (a * r1.data()[i] + b * r2.data()[i])).abs())
        .fold(0.0, f64::max);
    outcome(
        ramp_err < 1e-6 && lin_err < 1e-9,
        format!("midway ramp error {ramp_err:.2e}; linearity error {lin_err:.2e}"),
    )
}

fn metric_identity() -> Outcome {
    let grid = Grid::new([12, 10, 8], [1.0; 3], [0.0; 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (pa, pb): (f64, f64) = (rng.random(), rng.random());
        let a =
            Volume3D::mask_from(grid, (0..grid.len()).map(|_| rng.random::<f64>() < pa)).unwrap();
        let b =
            Volume3D::mask_from(grid, (0..grid.len()).map(|_| rng.random::<f64>() < pb)).unwrap();
        let j = jaccard(&a, &b).unwrap() / 100.0;
        let d = dice(&a, &b).unwrap() / 100.0;
        worst = worst.max((d - 2.0 * j / (1.0 + j)).abs());
    }
    outcome(
        worst < 1e-9,
        format!("100 random pairs, worst deviation {worst:.2e}"),
    )
}

fn main() -> ExitCode {
    let skip_study = std::env::var_os("SHAPEFIT_SKIP_STUDY").is_some();
    let criteria: [(&str, Criterion); 8] = [
        ("cpd rigid recovery", cpd_rigid),
        ("cpd non-rigid warp recovery", cpd_nonrigid),
        ("ssm exactness and single-mode sphere family", ssm_exactness),
        ("utility equals intersection count", utility_oracle),
        ("pso sphere optimum and reproducibility", pso),
        ("end-to-end phantom study", phantom_study),
        ("fan reconstruction ramp and linearity", fan_reconstruction),
        ("dice/jaccard identity", metric_identity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        if skip_study && name == "end-to-end phantom study" {
            println!("SKIP {name}");
            continue;
        }
        let o = check();
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all criteria passed");
        ExitCode::SUCCESS
    }
}
