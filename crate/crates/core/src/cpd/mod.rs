//! Coherent point drift registration (rigid and non-rigid).
//!
//! Both variants run EM on a Gaussian mixture centered at the moving points
//! plus a uniform outlier component. Clouds are normalized to zero mean and
//! unit RMS radius before registration; results are reported in the original
//! millimetre frame.

mod nonrigid;
mod rigid;

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

pub use nonrigid::{register_nonrigid, NonRigidResult};
pub use rigid::{register_rigid, RigidResult};

/// Registration hyperparameters. `beta` and `lambda` apply to the non-rigid
/// variant only and are expressed in normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpdConfig {
    pub outlier_weight: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for CpdConfig {
    fn default() -> Self {
        CpdConfig {
            outlier_weight: 0.1,
            max_iters: 150,
            tol: 1e-6,
            beta: 2.0,
            lambda: 3.0,
        }
    }
}

impl CpdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.outlier_weight) {
            return Err(Error::invalid(format!(
                "outlier_weight must lie in [0, 1), got {}",
                self.outlier_weight
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        for (name, v) in [
            ("tol", self.tol),
            ("beta", self.beta),
            ("lambda", self.lambda),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Floor on the normalized GMM variance; reaching it means the clouds overlap exactly.
const SIGMA2_FLOOR: f64 = 1e-12;

/// Affine map into the zero-mean, unit-RMS-radius frame.
#[derive(Debug, Clone, Copy)]
struct Normalization {
    mean: Vec3,
    scale: f64,
}

impl Normalization {
    fn of(cloud: &PointCloud, role: &str) -> Result<Self> {
        check_spread(cloud, role)?;
        Ok(Normalization {
            mean: cloud.centroid(),
            scale: cloud.rms_radius(),
        })
    }

    fn forward(&self, cloud: &PointCloud) -> Vec<Vec3> {
        cloud
            .points()
            .iter()
            .map(|p| (p - self.mean) / self.scale)
            .collect()
    }

    fn backward(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.mean
    }
}

/// Rejects clouds whose points coincide or lie on a line.
fn check_spread(cloud: &PointCloud, role: &str) -> Result<()> {
    let c = cloud.centroid();
    let mut cov = Matrix3::zeros();
    for p in cloud.points() {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / cloud.len() as f64);
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate(format!(
            "{role} cloud is degenerate (points coincide or are collinear)"
        )));
    }
    Ok(())
}

fn initial_sigma2(fixed: &[Vec3], moved: &[Vec3]) -> f64 {
    // sum_nm |x_n - y_m|^2 = M sum|x|^2 + N sum|y|^2 - 2 (sum x).(sum y)
    let (n, m) = (fixed.len() as f64, moved.len() as f64);
    let sx: Vec3 = fixed.iter().sum();
    let sy: Vec3 = moved.iter().sum();
    let xx: f64 = fixed.iter().map(|p| p.norm_squared()).sum();
    let yy: f64 = moved.iter().map(|p| p.norm_squared()).sum();
    ((m * xx + n * yy - 2.0 * sx.dot(&sy)) / (3.0 * n * m)).max(SIGMA2_FLOOR)
}

/// Outlier constant of the mixture denominator.
fn outlier_term(sigma2: f64, w: f64, n_fixed: usize, n_moving: usize) -> f64 {
    (2.0 * std::f64::consts::PI * sigma2).powf(1.5) * w / (1.0 - w) * n_moving as f64
        / n_fixed as f64
}

/// Posteriors of every moving point for one fixed point `x`, written into
/// `out`. Returns `(log denominator, outlier posterior)`.
fn posterior_column(x: &Vec3, moved: &[Vec3], sigma2: f64, c: f64, out: &mut [f64]) -> (f64, f64) {
    let inv = 1.0 / (2.0 * sigma2);
    let mut dmin = f64::INFINITY;
    for (o, t) in out.iter_mut().zip(moved) {
        let d = (x - t).norm_squared();
        *o = d;
        dmin = dmin.min(d);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (-(*o - dmin) * inv).exp();
        sum += *o;
    }
    let c_shift = c * (dmin * inv).exp();
    if !c_shift.is_finite() {
        out.fill(0.0);
        return (c.ln(), 1.0);
    }
    let den = sum + c_shift;
    for o in out.iter_mut() {
        *o /= den;
    }
    (den.ln() - dmin * inv, c_shift / den)
}

/// Sufficient statistics of one E-step.
struct Expectation {
    /// Row sums of P (per moving point).
    p1: Vec<f64>,
    /// Column sums of P (per fixed point).
    pt1: Vec<f64>,
    /// P · X (per moving point).
    px: Vec<Vec3>,
    /// Negative log-likelihood, up to an additive constant.
    nll: f64,
    /// Max-posterior fixed point per moving point, if requested.
    best: Option<Vec<(usize, f64)>>,
}

const CHUNK: usize = 64;

fn e_step(fixed: &[Vec3], moved: &[Vec3], sigma2: f64, w: f64, track_best: bool) -> Expectation {
    let m = moved.len();
    let c = outlier_term(sigma2, w, fixed.len(), m);

    struct Partial {
        p1: Vec<f64>,
        pt1: Vec<f64>,
        px: Vec<Vec3>,
        nll: f64,
        best: Vec<(usize, f64)>,
    }

    let partials: Vec<Partial> = fixed
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut col = vec![0.0; m];
            let mut part = Partial {
                p1: vec![0.0; m],
                pt1: Vec::with_capacity(chunk.len()),
                px: vec![Vec3::zeros(); m],
                nll: 0.0,
                best: if track_best {
                    vec![(usize::MAX, -1.0); m]
                } else {
                    Vec::new()
                },
            };
            for (off, x) in chunk.iter().enumerate() {
                let (log_den, outlier) = posterior_column(x, moved, sigma2, c, &mut col);
                part.nll -= log_den;
                part.pt1.push(1.0 - outlier);
                let n = ci * CHUNK + off;
                for (mi, &p) in col.iter().enumerate() {
                    part.p1[mi] += p;
                    part.px[mi] += x * p;
                    if track_best && p > part.best[mi].1 {
                        part.best[mi] = (n, p);
                    }
                }
            }
            part
        })
        .collect();

    let mut out = Expectation {
        p1: vec![0.0; m],
        pt1: Vec::with_capacity(fixed.len()),
        px: vec![Vec3::zeros(); m],
        nll: 0.0,
        best: track_best.then(|| vec![(usize::MAX, -1.0); m]),
    };
    for part in partials {
        for mi in 0..m {
            out.p1[mi] += part.p1[mi];
            out.px[mi] += part.px[mi];
        }
        out.pt1.extend(part.pt1);
        out.nll += part.nll;
        if let Some(best) = out.best.as_mut() {
            for (b, cand) in best.iter_mut().zip(part.best) {
                if cand.1 > b.1 {
                    *b = cand;
                }
            }
        }
    }
    out.nll += 1.5 * fixed.len() as f64 * sigma2.ln();
    out
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (cur - prev).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// A population member after correspondence: the reference warped onto it.
#[derive(Debug, Clone)]
pub struct CorrespondedMember {
    pub cloud: PointCloud,
    pub rigid: RigidResult,
    pub nonrigid_sigma2: f64,
    pub nonrigid_iters: usize,
    pub nonrigid_converged: bool,
}

/// Rigidly align each member to the reference, then warp the reference onto
/// the aligned member. Every output shares the reference's point count and order.
pub fn establish_correspondence(
    reference: &PointCloud,
    population: &[PointCloud],
    cfg: &CpdConfig,
) -> Result<Vec<PointCloud>> {
    Ok(
        establish_correspondence_detailed(reference, population, cfg)?
            .into_iter()
            .map(|m| m.cloud)
            .collect(),
    )
}

/// As [`establish_correspondence`], keeping per-member registration diagnostics.
pub fn establish_correspondence_detailed(
    reference: &PointCloud,
    population: &[PointCloud],
    cfg: &CpdConfig,
) -> Result<Vec<CorrespondedMember>> {
    cfg.validate()?;
    if population.is_empty() {
        return Err(Error::invalid("population is empty"));
    }
    population
        .par_iter()
        .enumerate()
        .map(|(index, member)| {
            correspond_one(reference, member, cfg).map_err(|e| Error::Member {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

fn correspond_one(
    reference: &PointCloud,
    member: &PointCloud,
    cfg: &CpdConfig,
) -> Result<CorrespondedMember> {
    let rigid = register_rigid(member, reference, cfg)?;
    let aligned = crate::geometry::apply_rigid(member, &rigid.pose_without_scale())?;
    let warp = register_nonrigid(reference, &aligned, cfg)?;
    Ok(CorrespondedMember {
        cloud: warp.displaced,
        rigid,
        nonrigid_sigma2: warp.sigma2,
        nonrigid_iters: warp.iters,
        nonrigid_converged: warp.converged,
    })
}
