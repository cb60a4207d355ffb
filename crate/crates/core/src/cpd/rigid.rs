use nalgebra::Matrix3;

use super::{e_step, initial_sigma2, relative_change, CpdConfig, Normalization, SIGMA2_FLOOR};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform, Vec3};

/// Similarity transform `x -> scale * R x + t` mapping the moving cloud onto the fixed one.
#[derive(Debug, Clone)]
pub struct RigidResult {
    pub transform: RigidTransform,
    pub scale: f64,
    /// Final mixture variance in mm².
    pub sigma2: f64,
    pub iters: usize,
    pub converged: bool,
    /// Negative log-likelihood per E-step (normalized frame, additive constant dropped).
    pub objective: Vec<f64>,
    moving_centroid: Vec3,
}

impl RigidResult {
    pub fn rotation(&self) -> Matrix3<f64> {
        self.transform.rotation()
    }

    /// Apply the full similarity transform (including scale).
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let r = self.rotation();
        let t = self.transform.translation_vec();
        cloud.map(|p| r * p * self.scale + t)
    }

    /// Rotation and translation only, chosen so the moving centroid lands
    /// where the similarity transform sends it. Scale stays with the shape.
    pub fn pose_without_scale(&self) -> RigidTransform {
        let r = self.rotation();
        let t = self.transform.translation_vec() + (self.scale - 1.0) * (r * self.moving_centroid);
        RigidTransform::from_matrix(&r, t)
    }
}

/// Rigid (similarity) coherent point drift.
pub fn register_rigid(
    moving: &PointCloud,
    fixed: &PointCloud,
    cfg: &CpdConfig,
) -> Result<RigidResult> {
    cfg.validate()?;
    let nx = Normalization::of(fixed, "fixed")?;
    let ny = Normalization::of(moving, "moving")?;
    let x = nx.forward(fixed);
    let y = ny.forward(moving);

    let mut r = Matrix3::identity();
    let mut s = 1.0;
    let mut t = Vec3::zeros();
    let mut sigma2 = initial_sigma2(&x, &y);
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    let mut moved = y.clone();

    while iters < cfg.max_iters {
        let e = e_step(&x, &moved, sigma2, cfg.outlier_weight, false);
        if !e.nll.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite likelihood at iteration {iters}"
            )));
        }
        let prev = objective.last().copied();
        objective.push(e.nll);
        if let Some(prev) = prev {
            if relative_change(prev, e.nll) < cfg.tol {
                converged = true;
                break;
            }
        }
        iters += 1;

        let np: f64 = e.p1.iter().sum();
        if !(np > 0.0) {
            return Err(Error::Numerical("all points classified as outliers".into()));
        }
        let mu_x = x.iter().zip(&e.pt1).map(|(p, w)| p * *w).sum::<Vec3>() / np;
        let mu_y = y.iter().zip(&e.p1).map(|(p, w)| p * *w).sum::<Vec3>() / np;

        let mut a = Matrix3::zeros();
        let mut yy = 0.0;
        for ((ym, pxm), p1m) in y.iter().zip(&e.px).zip(&e.p1) {
            let yh = ym - mu_y;
            a += pxm * yh.transpose();
            yy += p1m * yh.norm_squared();
        }
        let svd = a.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut c = Matrix3::identity();
        c[(2, 2)] = (u * vt).determinant().signum();
        r = u * c * vt;
        let tr_ar = (a.transpose() * r).trace();
        s = tr_ar / yy;
        t = mu_x - s * r * mu_y;

        let xx: f64 = x
            .iter()
            .zip(&e.pt1)
            .map(|(p, w)| w * (p - mu_x).norm_squared())
            .sum();
        sigma2 = ((xx - s * tr_ar) / (3.0 * np)).abs();
        for (mv, ym) in moved.iter_mut().zip(&y) {
            *mv = s * r * ym + t;
        }
        if sigma2 <= SIGMA2_FLOOR {
            sigma2 = SIGMA2_FLOOR;
            converged = true;
            break;
        }
    }

    // Undo normalization: x = sx * (s R (y - my)/sy + t) + mx.
    let scale = s * nx.scale / ny.scale;
    let translation = nx.backward(&t) - scale * r * ny.mean;
    Ok(RigidResult {
        transform: RigidTransform::from_matrix(&r, translation),
        scale,
        sigma2: sigma2 * nx.scale * nx.scale,
        iters,
        converged,
        objective,
        moving_centroid: moving.centroid(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpd::tests::blob;
    use crate::geometry::apply_rigid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn self_registration_is_identity() {
        let c = blob(200, 20.0);
        let res = register_rigid(&c, &c, &CpdConfig::default()).unwrap();
        assert!((res.rotation() - Matrix3::identity()).norm() < 1e-6);
        assert!(res.transform.translation_vec().norm() < 1e-6);
        assert!((res.scale - 1.0).abs() < 1e-6);
    }

    #[test]
    fn recovers_known_pose() {
        let fixed = blob(300, 20.0);
        let truth = RigidTransform::new([8.0, -12.0, 5.0], [0.2, -0.25, 0.3]);
        let moving = apply_rigid(&fixed, &truth.inverse()).unwrap();
        let res = register_rigid(&moving, &fixed, &CpdConfig::default()).unwrap();
        assert!((res.rotation() - truth.rotation()).norm() < 1e-3);
        assert!((res.transform.translation_vec() - truth.translation_vec()).norm() < 1e-3);
        assert!(
            res.converged,
            "iters {} sigma2 {} scale {}",
            res.iters, res.sigma2, res.scale
        );
    }

    #[test]
    fn objective_is_non_increasing() {
        let fixed = blob(250, 15.0);
        let xf = RigidTransform::new([3.0, 2.0, -4.0], [0.3, 0.1, -0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let moving = apply_rigid(&fixed, &xf).unwrap().map(|p| {
            p + Vec3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            )
        });
        let res = register_rigid(&moving, &fixed, &CpdConfig::default()).unwrap();
        for w in res.objective.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-8 * w[0].abs().max(1.0),
                "{} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn tolerates_outliers() {
        let fixed = blob(400, 20.0);
        let truth = RigidTransform::new([5.0, 3.0, -2.0], [0.1, 0.15, -0.2]);
        let mut pts = apply_rigid(&fixed, &truth.inverse()).unwrap().into_points();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            pts.push(Vec3::new(
                rng.random_range(-40.0..40.0),
                rng.random_range(-40.0..40.0),
                rng.random_range(-40.0..40.0),
            ));
        }
        let moving = PointCloud::new(pts).unwrap();
        let res = register_rigid(&moving, &fixed, &CpdConfig::default()).unwrap();
        assert!((res.rotation() - truth.rotation()).norm() < 1e-2);
        assert!((res.transform.translation_vec() - truth.translation_vec()).norm() < 1e-2 * 20.0);
    }

    #[test]
    fn equivariant_under_common_rotation() {
        let fixed = blob(200, 12.0);
        let xf = RigidTransform::new([2.0, -1.0, 3.0], [0.2, 0.1, 0.3]);
        let moving = apply_rigid(&fixed, &xf.inverse()).unwrap();
        let cfg = CpdConfig::default();
        let base = register_rigid(&moving, &fixed, &cfg).unwrap();
        let g = RigidTransform::new([0.0; 3], [-0.5, 0.4, 1.1]);
        let fixed_r = apply_rigid(&fixed, &g).unwrap();
        let moving_r = apply_rigid(&moving, &g).unwrap();
        let rot = register_rigid(&moving_r, &fixed_r, &cfg).unwrap();
        let res0 = base.apply(&moving).rms_distance(&fixed).unwrap();
        let res1 = rot.apply(&moving_r).rms_distance(&fixed_r).unwrap();
        assert!((res0 - res1).abs() < 1e-6);
        let expected = g.rotation() * base.rotation() * g.rotation().transpose();
        assert!((rot.rotation() - expected).norm() < 1e-6);
    }

    #[test]
    fn deterministic() {
        let fixed = blob(150, 10.0);
        let moving = apply_rigid(
            &fixed,
            &RigidTransform::new([1.0, 2.0, 3.0], [0.1, 0.2, 0.3]),
        )
        .unwrap();
        let a = register_rigid(&moving, &fixed, &CpdConfig::default()).unwrap();
        let b = register_rigid(&moving, &fixed, &CpdConfig::default()).unwrap();
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.transform, b.transform);
    }

    #[test]
    fn sigma2_shrinks_on_noise_free_pairs() {
        let fixed = blob(200, 10.0);
        let moving = apply_rigid(
            &fixed,
            &RigidTransform::new([1.0, -2.0, 0.5], [0.1, -0.2, 0.25]),
        )
        .unwrap();
        let cfg = CpdConfig {
            max_iters: 1,
            ..Default::default()
        };
        let mut last = f64::INFINITY;
        for k in 1..40 {
            let res = register_rigid(
                &moving,
                &fixed,
                &CpdConfig {
                    max_iters: k,
                    ..cfg
                },
            )
            .unwrap();
            assert!(res.sigma2 > 0.0);
            if k > 3 {
                assert!(res.sigma2 <= last * (1.0 + 1e-12), "iteration {k}");
            }
            last = res.sigma2;
        }
    }

    #[test]
    fn rejects_collinear() {
        let line = PointCloud::new(
            (0..10)
                .map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0))
                .collect(),
        )
        .unwrap();
        let c = blob(50, 5.0);
        assert!(matches!(
            register_rigid(&line, &c, &CpdConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }
}
