//! Fit a shape model to a probability map.
//!
//! The search space is `p = [w, t, theta]`: mode weights followed by a rigid
//! pose. The pose rotates the shape instance about the centroid of the model
//! mean and then moves that centroid to `t`, so `t` is the world position of
//! the shape center and the angles are independent of where the model was
//! built.

mod pso;
mod utility;

use serde::{Deserialize, Serialize};

pub use pso::{pso_maximize, PsoOutcome, IMPROVEMENT_TOL};
pub use utility::{rasterize_params, utility, utility_terms, UtilityTerms};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform, Vec3, Volume3D, VolumeKind};
use crate::ssm::{ModeWeights, ShapeModel};
use utility::Objective;

/// Norm applied to the shape-restricted probability map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Sum of the captured probabilities.
    L1Sum,
    /// Euclidean norm of the captured probabilities.
    L2,
    /// Sum of `2M - 1` over the shape: voxels below one half count against it.
    ///
    /// The two plain norms never decrease when the shape grows, so they
    /// reward covering background; this one does not.
    #[default]
    Signed,
}

/// Utility and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub alpha: f64,
    pub norm_kind: NormKind,
    /// Divide each weight by the square root of its eigenvalue before the norm.
    pub mahalanobis: bool,
    pub swarm_size: usize,
    pub max_iters: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Velocity limit per dimension as a fraction of the bound width.
    pub velocity_fraction: f64,
    /// Explicit `[lo, hi]` per dimension; derived from the model and map when absent.
    pub bounds: Option<Vec<[f64; 2]>>,
    pub seed: u64,
    pub stall_iters: usize,
    /// Weight bounds in standard deviations of each mode.
    pub weight_sigmas: f64,
    /// Dilation (mm) of the high-probability bounding box for translations.
    pub translation_margin: f64,
    /// Per-axis rotation bound (radians).
    pub angle_bound: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            alpha: 0.1,
            norm_kind: NormKind::Signed,
            mahalanobis: false,
            swarm_size: 40,
            max_iters: 200,
            inertia: 0.7298,
            cognitive: 1.49618,
            social: 1.49618,
            velocity_fraction: 0.5,
            bounds: None,
            seed: 0,
            stall_iters: 40,
            weight_sigmas: 3.0,
            translation_margin: 10.0,
            angle_bound: 0.3,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("fit config: {what}")));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be finite and non-negative");
        }
        if self.swarm_size == 0 || self.max_iters == 0 || self.stall_iters == 0 {
            return bad("swarm_size, max_iters and stall_iters must be positive");
        }
        if ![self.inertia, self.cognitive, self.social]
            .iter()
            .all(|v| v.is_finite())
        {
            return bad("inertia, cognitive and social must be finite");
        }
        if !(self.velocity_fraction.is_finite() && self.velocity_fraction > 0.0) {
            return bad("velocity_fraction must be positive");
        }
        if !(self.weight_sigmas.is_finite() && self.weight_sigmas > 0.0) {
            return bad("weight_sigmas must be positive");
        }
        if !(self.translation_margin.is_finite() && self.translation_margin >= 0.0) {
            return bad("translation_margin must be non-negative");
        }
        if !(self.angle_bound.is_finite() && self.angle_bound > 0.0) {
            return bad("angle_bound must be positive");
        }
        if let Some(b) = &self.bounds {
            if let Some((d, [lo, hi])) = b
                .iter()
                .enumerate()
                .find(|(_, [lo, hi])| !(lo.is_finite() && hi.is_finite() && lo < hi))
            {
                return bad(&format!(
                    "bounds for dimension {d} are invalid: [{lo}, {hi}]"
                ));
            }
        }
        Ok(())
    }
}

/// Mode weights and rigid pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub w: ModeWeights,
    pub pose: RigidTransform,
}

impl FitParams {
    pub fn new(w: ModeWeights, pose: RigidTransform) -> Self {
        FitParams { w, pose }
    }

    /// Mean shape centered at `t` without rotation.
    pub fn at(model: &ShapeModel, t: [f64; 3]) -> Self {
        FitParams::new(
            ModeWeights::zeros(model.n_modes()),
            RigidTransform::from_translation(t),
        )
    }

    pub fn dim(&self) -> usize {
        self.w.len() + 6
    }

    /// Flat layout `[w..., tx, ty, tz, ax, ay, az]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.w.0.clone();
        v.extend_from_slice(&self.pose.translation);
        v.extend_from_slice(&self.pose.angles);
        v
    }

    pub fn from_vec(x: &[f64], n_modes: usize) -> Result<Self> {
        if x.len() != n_modes + 6 {
            return Err(Error::DimensionMismatch {
                expected: n_modes + 6,
                found: x.len(),
            });
        }
        let p = FitParams::new(
            ModeWeights(x[..n_modes].to_vec()),
            RigidTransform::new(
                [x[n_modes], x[n_modes + 1], x[n_modes + 2]],
                [x[n_modes + 3], x[n_modes + 4], x[n_modes + 5]],
            ),
        );
        if !p.is_finite() {
            return Err(Error::invalid("fit parameters must be finite"));
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.w.0.iter().all(|v| v.is_finite()) && self.pose.is_finite()
    }

    pub(crate) fn check(&self, model: &ShapeModel) -> Result<()> {
        if self.w.len() != model.n_modes() {
            return Err(Error::DimensionMismatch {
                expected: model.n_modes(),
                found: self.w.len(),
            });
        }
        if !self.is_finite() {
            return Err(Error::invalid("fit parameters must be finite"));
        }
        Ok(())
    }

    /// Centroid of the model mean: the point the pose rotates about.
    pub fn shape_center(model: &ShapeModel) -> Vec3 {
        model.mean_cloud().centroid()
    }

    /// The pose as a plain rigid transform applied to model coordinates.
    pub fn world_transform(&self, model: &ShapeModel) -> RigidTransform {
        let c = FitParams::shape_center(model);
        let t = self.pose.translation_vec() - self.pose.rotation() * c;
        RigidTransform::new(t.into(), self.pose.angles)
    }

    pub(crate) fn posed_instance(&self, model: &ShapeModel, center: &Vec3) -> Result<PointCloud> {
        let flat = model.instance_flat(&self.w.0);
        let r = self.pose.rotation();
        let t = self.pose.translation_vec();
        let pts = flat
            .chunks_exact(3)
            .map(|p| r * (Vec3::new(p[0], p[1], p[2]) - center) + t)
            .collect();
        PointCloud::new(pts)
    }

    /// Surface points of the posed shape instance.
    pub fn instance(&self, model: &ShapeModel) -> Result<PointCloud> {
        self.check(model)?;
        self.posed_instance(model, &FitParams::shape_center(model))
    }
}

/// Outcome of fitting a model to a probability map.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: FitParams,
    pub utility: f64,
    pub mask: Volume3D,
    pub trace: Vec<f64>,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
    /// The best shape covers no voxel center.
    pub out_of_grid: bool,
    /// Objective evaluations that produced non-finite values.
    pub non_finite: usize,
}

/// Smallest total probability a map may carry and still be fitted.
pub const MIN_MAP_MASS: f64 = 1e-6;

/// Search box per dimension: weights within `weight_sigmas` standard
/// deviations, the shape center within the dilated bounding box of voxels
/// above 0.5 (of any positive voxel when none exceed 0.5), and rotations
/// within `angle_bound`.
pub fn search_bounds(
    model: &ShapeModel,
    map: &Volume3D,
    cfg: &FitConfig,
) -> Result<Vec<(f64, f64)>> {
    let dim = model.n_modes() + 6;
    if let Some(b) = &cfg.bounds {
        if b.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: b.len(),
            });
        }
        return Ok(b.iter().map(|&[lo, hi]| (lo, hi)).collect());
    }
    let mut bounds: Vec<(f64, f64)> = model
        .eigenvalues()
        .iter()
        .map(|l| {
            let r = cfg.weight_sigmas * l.sqrt();
            (-r, r)
        })
        .collect();
    let bbox = |threshold: f64| {
        let grid = map.grid();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for (idx, &v) in map.data().iter().enumerate() {
            if v > threshold {
                let [i, j, k] = grid.ijk(idx);
                let c = grid.center(i, j, k);
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
        }
        (lo[0] <= hi[0]).then_some((lo, hi))
    };
    let (lo, hi) = bbox(0.5)
        .or_else(|| bbox(0.0))
        .ok_or_else(|| Error::Degenerate("probability map has no positive voxel".into()))?;
    for a in 0..3 {
        bounds.push((
            lo[a] - cfg.translation_margin,
            hi[a] + cfg.translation_margin,
        ));
    }
    for _ in 0..3 {
        bounds.push((-cfg.angle_bound, cfg.angle_bound));
    }
    Ok(bounds)
}

/// Search for the mode weights and pose maximizing the utility.
///
/// One particle starts at the mean shape centered on the map's probability
/// weighted centroid; the rest are uniform inside [`search_bounds`].
pub fn fit(model: &ShapeModel, map: &Volume3D, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    map.require_kind(VolumeKind::Probability)?;
    let mass = map.sum();
    if !(mass >= MIN_MAP_MASS) {
        return Err(Error::Degenerate(format!(
            "probability map carries total mass {mass:.3e}; nothing to fit"
        )));
    }
    let objective = Objective::new(model, map, cfg)?;
    let bounds = search_bounds(model, map, cfg)?;
    let centroid = map.weighted_centroid().expect("positive mass");
    let start = FitParams::at(model, centroid).to_vec();
    let out = pso_maximize(|x| objective.evaluate_vec(x), &bounds, &[start], cfg)?;
    if !out.value.is_finite() {
        return Err(Error::Numerical(
            "every utility evaluation was non-finite; check the model and map".into(),
        ));
    }
    let params = FitParams::from_vec(&out.best, model.n_modes())?;
    let terms = objective.terms(&params)?;
    let vox = objective.rasterize(&params)?;
    Ok(FitResult {
        params,
        utility: terms.value,
        mask: vox.mask,
        trace: out.trace,
        evaluations: out.evaluations,
        iterations: out.iterations,
        converged: out.converged,
        out_of_grid: terms.out_of_grid,
        non_finite: out.non_finite,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::{Grid, Voxelization};
    use crate::ssm::build_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Small ellipsoid model with a triangulated mean, centered at the origin.
    pub(crate) fn toy_model(n: usize, m: usize, seed: u64) -> ShapeModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clouds: Vec<PointCloud> = (0..m)
            .map(|_| {
                let a = rng.random_range(8.0..11.0);
                let b = rng.random_range(6.0..8.0);
                let c = rng.random_range(7.0..10.0);
                let pts = (0..n)
                    .map(|i| {
                        let t = i as f64 * 2.399963229728653;
                        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                        let r = (1.0 - z * z).sqrt();
                        Vec3::new(a * r * t.cos(), b * r * t.sin(), c * z)
                    })
                    .collect();
                PointCloud::new(pts).unwrap()
            })
            .collect();
        build_model(&clouds, 0.99)
            .unwrap()
            .with_mean_topology()
            .unwrap()
    }

    fn grid() -> Grid {
        Grid::centered([40, 40, 40], [1.0; 3], [0.0; 3]).unwrap()
    }

    fn as_probability(v: &Voxelization) -> Volume3D {
        v.mask.clone().with_kind(VolumeKind::Probability).unwrap()
    }

    fn brute_overlap(a: &Volume3D, b: &Volume3D) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .filter(|(x, y)| **x == 1.0 && **y == 1.0)
            .count() as f64
    }

    #[test]
    fn zero_map_and_regularizer_only() {
        let model = toy_model(200, 8, 1);
        let map = Volume3D::zeros(grid(), VolumeKind::Probability);
        let plain = FitConfig {
            norm_kind: NormKind::L1Sum,
            ..FitConfig::default()
        };
        let p = FitParams::at(&model, [0.0; 3]);
        assert_eq!(utility(&model, &map, &p, &plain).unwrap(), 0.0);

        assert!(model.n_modes() >= 2);
        let mut w = ModeWeights::zeros(model.n_modes());
        w.0[0] = 6.0;
        w.0[1] = 8.0;
        let p = FitParams::new(w, RigidTransform::identity());
        let u = utility(&model, &map, &p, &plain).unwrap();
        assert!((u + 1.0).abs() < 1e-12, "{u}");
        let l2 = FitConfig {
            norm_kind: NormKind::L2,
            ..plain
        };
        assert!((utility(&model, &map, &p, &l2).unwrap() + 1.0).abs() < 1e-12);

        let signed = utility_terms(&model, &map, &p, &FitConfig::default()).unwrap();
        let count = rasterize_params(&model, &p, map.grid())
            .unwrap()
            .mask
            .count_nonzero();
        assert_eq!(signed.overlap, -(count as f64));
    }

    #[test]
    fn unit_map_counts_shape_voxels() {
        let model = toy_model(200, 8, 2);
        let map = Volume3D::from_fn(grid(), VolumeKind::Probability, |_| 1.0).unwrap();
        let cfg = FitConfig {
            alpha: 0.0,
            norm_kind: NormKind::L1Sum,
            ..FitConfig::default()
        };
        let p = FitParams::new(
            ModeWeights::zeros(model.n_modes()),
            RigidTransform::new([1.2, -0.7, 0.3], [0.1, -0.2, 0.05]),
        );
        let count = rasterize_params(&model, &p, map.grid())
            .unwrap()
            .mask
            .count_nonzero();
        assert!(count > 1000);
        assert_eq!(utility(&model, &map, &p, &cfg).unwrap(), count as f64);
    }

    #[test]
    fn binary_map_equals_intersection_count() {
        let model = toy_model(200, 8, 3);
        let cfg = FitConfig {
            alpha: 0.0,
            norm_kind: NormKind::L1Sum,
            ..FitConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let map = Volume3D::from_fn(grid(), VolumeKind::Probability, |_| {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    0.0
                }
            })
            .unwrap();
            let w = ModeWeights(
                model
                    .eigenvalues()
                    .iter()
                    .map(|l| rng.random_range(-2.0..2.0) * l.sqrt())
                    .collect(),
            );
            let t = [
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ];
            let a = [
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            ];
            let p = FitParams::new(w, RigidTransform::new(t, a));
            let mask = rasterize_params(&model, &p, map.grid()).unwrap().mask;
            assert_eq!(
                utility(&model, &map, &p, &cfg).unwrap(),
                brute_overlap(&mask, &map)
            );
        }
    }

    #[test]
    fn penalty_separates_from_overlap() {
        let model = toy_model(200, 8, 4);
        let map = Volume3D::from_fn(grid(), VolumeKind::Probability, |[i, j, k]| {
            ((i + 2 * j + 3 * k) % 7) as f64 / 7.0
        })
        .unwrap();
        let w = ModeWeights(model.eigenvalues().iter().map(|l| 0.7 * l.sqrt()).collect());
        let p = FitParams::new(
            w.clone(),
            RigidTransform::new([0.5, 0.2, -1.0], [0.0, 0.1, 0.0]),
        );
        for norm_kind in [NormKind::L1Sum, NormKind::L2, NormKind::Signed] {
            let base: Vec<f64> = [0.0, 0.1, 1.0]
                .iter()
                .map(|&alpha| {
                    let cfg = FitConfig {
                        alpha,
                        norm_kind,
                        ..FitConfig::default()
                    };
                    utility(&model, &map, &p, &cfg).unwrap() + alpha * w.norm()
                })
                .collect();
            assert!(
                base.windows(2).all(|b| (b[0] - b[1]).abs() < 1e-9),
                "{base:?}"
            );
        }
        let cfg = FitConfig {
            mahalanobis: true,
            ..FitConfig::default()
        };
        let t = utility_terms(&model, &map, &p, &cfg).unwrap();
        let expected = 0.1 * 0.7 * (model.n_modes() as f64).sqrt();
        assert!((t.penalty - expected).abs() < 1e-12);
    }

    #[test]
    fn off_grid_shape_is_flagged() {
        let model = toy_model(200, 8, 5);
        let map = Volume3D::from_fn(grid(), VolumeKind::Probability, |_| 0.5).unwrap();
        let t = utility_terms(
            &model,
            &map,
            &FitParams::at(&model, [500.0, 0.0, 0.0]),
            &FitConfig::default(),
        )
        .unwrap();
        assert!(t.out_of_grid);
        assert_eq!(t.value, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = toy_model(200, 8, 6);
        let zero = Volume3D::zeros(grid(), VolumeKind::Probability);
        assert!(matches!(
            fit(&model, &zero, &FitConfig::default()),
            Err(Error::Degenerate(_))
        ));
        let mask = Volume3D::zeros(grid(), VolumeKind::Mask);
        let p = FitParams::at(&model, [0.0; 3]);
        assert!(utility(&model, &mask, &p, &FitConfig::default()).is_err());
        let short = FitParams::new(
            ModeWeights::zeros(model.n_modes() + 1),
            RigidTransform::identity(),
        );
        assert!(matches!(
            utility(&model, &zero, &short, &FitConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        let bare = build_model(
            &[model.mean_cloud(), model.mean_cloud(), model.mean_cloud()],
            0.9,
        )
        .unwrap();
        assert!(utility(
            &bare,
            &zero,
            &FitParams::at(&bare, [0.0; 3]),
            &FitConfig::default()
        )
        .is_err());
        assert!(FitConfig {
            alpha: -1.0,
            ..FitConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn params_vector_round_trip_and_world_pose() {
        let model = toy_model(200, 8, 7);
        let w = ModeWeights((0..model.n_modes()).map(|i| i as f64 - 1.5).collect());
        let p = FitParams::new(w, RigidTransform::new([1.0, 2.0, 3.0], [0.1, 0.2, 0.3]));
        assert_eq!(
            FitParams::from_vec(&p.to_vec(), model.n_modes()).unwrap(),
            p
        );
        assert_eq!(p.dim(), model.n_modes() + 6);
        let direct = p.instance(&model).unwrap();
        let shape = crate::ssm::reconstruct(&model, &p.w).unwrap();
        let via = crate::geometry::apply_rigid(&shape, &p.world_transform(&model)).unwrap();
        assert!(direct.rms_distance(&via).unwrap() < 1e-12);
        let centered = FitParams::at(&model, [4.0, -2.0, 1.0])
            .instance(&model)
            .unwrap();
        assert!((centered.centroid() - Vec3::new(4.0, -2.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn near_truth_start_converges_quickly() {
        let model = toy_model(300, 10, 8);
        let truth = FitParams::at(&model, [0.0; 3]);
        let map = as_probability(&rasterize_params(&model, &truth, &grid()).unwrap());
        let cfg = FitConfig {
            max_iters: 20,
            ..FitConfig::default()
        };
        let u_truth = utility(&model, &map, &truth, &cfg).unwrap();
        let res = fit(&model, &map, &cfg).unwrap();
        assert!(res.iterations <= 20);
        assert!(
            res.utility >= 0.995 * u_truth,
            "{} vs {u_truth}",
            res.utility
        );
        assert_eq!(
            res.utility,
            utility(&model, &map, &res.params, &cfg).unwrap()
        );
        assert!(res.trace.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*res.trace.last().unwrap(), res.utility);
    }

    #[test]
    fn translation_shift_moves_optimum() {
        let model = toy_model(300, 10, 10);
        let g = grid();
        let base = FitParams::at(&model, [-1.0, 0.0, 0.0]);
        let offset = [3.0, 2.0, 1.0];
        let moved = FitParams::at(&model, [-1.0 + offset[0], offset[1], offset[2]]);
        let fit_at = |p: &FitParams| {
            let map = as_probability(&rasterize_params(&model, p, &g).unwrap());
            let mut b = search_bounds(&model, &map, &FitConfig::default()).unwrap();
            let c = model.n_modes();
            for a in 0..3 {
                let center = p.pose.translation[a];
                b[c + a] = (center - 8.0, center + 8.0);
            }
            let cfg = FitConfig {
                alpha: 0.0,
                seed: 3,
                bounds: Some(b.iter().map(|&(lo, hi)| [lo, hi]).collect()),
                ..FitConfig::default()
            };
            fit(&model, &map, &cfg).unwrap().params.pose.translation
        };
        let t0 = fit_at(&base);
        let t1 = fit_at(&moved);
        for a in 0..3 {
            assert!(
                (t1[a] - t0[a] - offset[a]).abs() <= g.spacing[a],
                "axis {a}: {t0:?} -> {t1:?}"
            );
        }
    }

    #[test]
    fn seeded_fit_is_reproducible() {
        let model = toy_model(200, 8, 11);
        let truth = FitParams::at(&model, [1.0, 1.0, -1.0]);
        let map = as_probability(&rasterize_params(&model, &truth, &grid()).unwrap());
        let cfg = FitConfig {
            max_iters: 15,
            seed: 9,
            ..FitConfig::default()
        };
        let a = fit(&model, &map, &cfg).unwrap();
        let b = fit(&model, &map, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
    }
}
