use nalgebra::DMatrix;

use super::{e_step, initial_sigma2, relative_change, CpdConfig, Normalization, SIGMA2_FLOOR};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

/// Outcome of warping the moving cloud onto the fixed one.
#[derive(Debug, Clone)]
pub struct NonRigidResult {
    /// Moving points after the warp, in the fixed cloud's frame, same order.
    pub displaced: PointCloud,
    /// Per moving point: index of its max-posterior fixed point and that posterior.
    pub correspondence: Vec<(usize, f64)>,
    /// Final mixture variance in mm².
    pub sigma2: f64,
    pub iters: usize,
    pub converged: bool,
    /// Negative log-likelihood plus the coherence penalty, per E-step.
    pub objective: Vec<f64>,
}

fn gaussian_kernel(y: &[Vec3], beta: f64) -> DMatrix<f64> {
    let m = y.len();
    let inv = 1.0 / (2.0 * beta * beta);
    DMatrix::from_fn(m, m, |i, j| (-(y[i] - y[j]).norm_squared() * inv).exp())
}

/// Non-rigid coherent point drift: displacement field `G W` with a Gaussian
/// kernel of width `beta` and smoothness weight `lambda`.
pub fn register_nonrigid(
    moving: &PointCloud,
    fixed: &PointCloud,
    cfg: &CpdConfig,
) -> Result<NonRigidResult> {
    cfg.validate()?;
    let nx = Normalization::of(fixed, "fixed")?;
    let ny = Normalization::of(moving, "moving")?;
    let x = nx.forward(fixed);
    let y = ny.forward(moving);
    let m = y.len();

    let g = gaussian_kernel(&y, cfg.beta);
    let mut w = DMatrix::<f64>::zeros(m, 3);
    let mut moved = y.clone();
    let mut sigma2 = initial_sigma2(&x, &y);
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iters = 0;

    while iters < cfg.max_iters {
        let e = e_step(&x, &moved, sigma2, cfg.outlier_weight, false);
        let coherence = 0.5 * cfg.lambda * (w.transpose() * &g * &w).trace();
        let nll = e.nll + coherence;
        if !nll.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite likelihood at iteration {iters}"
            )));
        }
        let prev = objective.last().copied();
        objective.push(nll);
        if let Some(prev) = prev {
            if relative_change(prev, nll) < cfg.tol {
                converged = true;
                break;
            }
        }
        iters += 1;

        let np: f64 = e.p1.iter().sum();
        if !(np > 0.0) {
            return Err(Error::Numerical("all points classified as outliers".into()));
        }
        // (diag(P1) G + lambda sigma2 I) W = P X - diag(P1) Y
        let mut a = g.clone();
        for (i, mut row) in a.row_iter_mut().enumerate() {
            row *= e.p1[i];
        }
        for i in 0..m {
            a[(i, i)] += cfg.lambda * sigma2;
        }
        let rhs = DMatrix::from_fn(m, 3, |i, d| e.px[i][d] - e.p1[i] * y[i][d]);
        w = a.lu().solve(&rhs).ok_or_else(|| {
            Error::Numerical(format!(
                "singular M-step system at iteration {iters}; increase lambda (currently {})",
                cfg.lambda
            ))
        })?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "ill-conditioned M-step system at iteration {iters}; increase lambda (currently {})",
                cfg.lambda
            )));
        }
        let gw = &g * &w;
        for (i, t) in moved.iter_mut().enumerate() {
            *t = y[i] + Vec3::new(gw[(i, 0)], gw[(i, 1)], gw[(i, 2)]);
        }

        let xx: f64 = x
            .iter()
            .zip(&e.pt1)
            .map(|(p, w)| w * p.norm_squared())
            .sum();
        let xt: f64 = e.px.iter().zip(&moved).map(|(px, t)| px.dot(t)).sum();
        let tt: f64 =
            e.p1.iter()
                .zip(&moved)
                .map(|(p, t)| p * t.norm_squared())
                .sum();
        sigma2 = ((xx - 2.0 * xt + tt) / (3.0 * np)).abs();
        if sigma2 <= SIGMA2_FLOOR {
            sigma2 = SIGMA2_FLOOR;
            converged = true;
            break;
        }
    }

    let final_e = e_step(&x, &moved, sigma2, cfg.outlier_weight, true);
    let correspondence = final_e.best.expect("requested");
    let displaced =
        PointCloud::from_points_unchecked(moved.iter().map(|t| nx.backward(t)).collect());
    Ok(NonRigidResult {
        displaced,
        correspondence,
        sigma2: sigma2 * nx.scale * nx.scale,
        iters,
        converged,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpd::register_rigid;
    use crate::cpd::tests::blob;

    pub(crate) fn sinusoidal_warp(cloud: &PointCloud, amplitude: f64) -> PointCloud {
        let c = cloud.centroid();
        let r = cloud.rms_radius();
        cloud.map(|p| {
            let q = (p - c) / r;
            p + Vec3::new(
                (1.3 * q.y + 0.4).sin(),
                (1.1 * q.z - 0.2).sin(),
                (0.9 * q.x + 0.7).sin(),
            ) * amplitude
        })
    }

    #[test]
    fn identical_clouds_do_not_move() {
        let c = blob(150, 20.0);
        let res = register_nonrigid(&c, &c, &CpdConfig::default()).unwrap();
        let max = c
            .points()
            .iter()
            .zip(res.displaced.points())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max < 1e-6 * c.diameter(), "{max}");
        for (i, &(n, _)) in res.correspondence.iter().enumerate() {
            assert_eq!(n, i);
        }
    }

    #[test]
    fn recovers_smooth_warp() {
        let moving = blob(300, 20.0);
        let diameter = moving.diameter();
        let fixed = sinusoidal_warp(&moving, 0.05 * diameter);
        let res = register_nonrigid(&moving, &fixed, &CpdConfig::default()).unwrap();
        let rms = res.displaced.rms_distance(&fixed).unwrap();
        assert!(rms < 0.01 * diameter, "rms {rms} vs diameter {diameter}");
    }

    #[test]
    fn stiff_limit_matches_rigid() {
        let moving = blob(200, 15.0);
        let c = moving.centroid();
        let fixed = moving.map(|p| c + (p - c) * 1.05 + Vec3::new(2.0, -1.0, 0.5));
        let cfg = CpdConfig {
            lambda: 1e6,
            ..Default::default()
        };
        let warped = register_nonrigid(&moving, &fixed, &cfg).unwrap();
        let rigid = register_rigid(&moving, &fixed, &cfg).unwrap();
        let rigid_cloud = rigid.apply(&moving);
        let diff = warped.displaced.rms_distance(&rigid_cloud).unwrap();
        assert!(diff < 1e-3 * moving.diameter(), "{diff}");
    }

    #[test]
    fn deterministic() {
        let moving = blob(120, 10.0);
        let fixed = sinusoidal_warp(&moving, 0.5);
        let a = register_nonrigid(&moving, &fixed, &CpdConfig::default()).unwrap();
        let b = register_nonrigid(&moving, &fixed, &CpdConfig::default()).unwrap();
        assert_eq!(a.displaced, b.displaced);
        assert_eq!(a.correspondence, b.correspondence);
    }
}
