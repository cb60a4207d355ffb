//! Synthetic probability-map phantoms with known ground truth.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitter::{rasterize_params, FitParams};
use crate::geometry::{
    triangulate_reference, voxelize, Grid, PointCloud, RigidTransform, Topology, TriMesh, Vec3,
    Volume3D, VolumeKind,
};
use crate::ssm::{ModeWeights, ShapeModel};

/// Randomized prostate-like surfaces: a tapered ellipsoid flattened on the
/// posterior (-y) side, sampled at fixed spherical directions so that every
/// member shares point order and triangulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EllipsoidFamily {
    pub n_points: usize,
    /// Mean semi-axes along x (left-right), y (anterior-posterior), z (apex-base), mm.
    pub semi_axes: [f64; 3],
    pub semi_axes_sd: [f64; 3],
    /// Relative widening of x and y from apex (z < 0) to base (z > 0).
    pub taper: f64,
    pub taper_sd: f64,
    /// Fraction by which the posterior half is flattened.
    pub flattening: f64,
    pub flattening_sd: f64,
}

impl Default for EllipsoidFamily {
    fn default() -> Self {
        EllipsoidFamily {
            n_points: 1256,
            semi_axes: [21.0, 15.0, 17.0],
            semi_axes_sd: [2.5, 1.8, 2.2],
            taper: 0.15,
            taper_sd: 0.06,
            flattening: 0.2,
            flattening_sd: 0.06,
        }
    }
}

/// Parameters of one family member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyShape {
    pub semi_axes: [f64; 3],
    pub taper: f64,
    pub flattening: f64,
}

/// Fibonacci-lattice unit directions.
fn directions(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Vec3::new(r * t.cos(), r * t.sin(), z)
        })
        .collect()
}

fn gaussian_clipped(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let z: f64 = n.sample(rng);
        if z.abs() <= 3.0 {
            return mean + sd * z;
        }
    }
}

impl EllipsoidFamily {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("ellipsoid family: {m}")));
        if self.n_points < 20 {
            return bad("needs at least 20 points");
        }
        if self
            .semi_axes
            .iter()
            .zip(&self.semi_axes_sd)
            .any(|(m, s)| !(m.is_finite() && s.is_finite() && *s >= 0.0 && m - 3.0 * s > 0.0))
        {
            return bad("semi-axes must stay positive within three standard deviations");
        }
        let range = |m: f64, s: f64| {
            m.is_finite()
                && s.is_finite()
                && s >= 0.0
                && (m - 3.0 * s) > -0.5
                && (m + 3.0 * s) < 0.5
        };
        if !range(self.taper, self.taper_sd) || !range(self.flattening, self.flattening_sd) {
            return bad("taper and flattening must stay within (-0.5, 0.5)");
        }
        Ok(())
    }

    pub fn sample_shape(&self, rng: &mut ChaCha8Rng) -> FamilyShape {
        FamilyShape {
            semi_axes: [0, 1, 2]
                .map(|a| gaussian_clipped(rng, self.semi_axes[a], self.semi_axes_sd[a])),
            taper: gaussian_clipped(rng, self.taper, self.taper_sd),
            flattening: gaussian_clipped(rng, self.flattening, self.flattening_sd),
        }
    }

    /// Surface of a member, centered near the origin.
    pub fn surface(&self, shape: &FamilyShape) -> Result<PointCloud> {
        let [a, b, c] = shape.semi_axes;
        PointCloud::new(
            directions(self.n_points)
                .iter()
                .map(|d| {
                    let widen = 1.0 + shape.taper * d.z;
                    let flat = if d.y < 0.0 {
                        1.0 - shape.flattening
                    } else {
                        1.0
                    };
                    Vec3::new(a * d.x * widen, b * d.y * widen * flat, c * d.z)
                })
                .collect(),
        )
    }

    /// Triangulation shared by every member.
    pub fn topology(&self) -> Result<Topology> {
        static CACHE: OnceLock<std::sync::Mutex<Vec<(usize, Topology)>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some((_, t)) = cache
            .lock()
            .unwrap()
            .iter()
            .find(|(n, _)| *n == self.n_points)
        {
            return Ok(t.clone());
        }
        let sphere = PointCloud::new(directions(self.n_points))?;
        let topo = triangulate_reference(&sphere)?.topology().clone();
        cache.lock().unwrap().push((self.n_points, topo.clone()));
        Ok(topo)
    }

    /// `count` independent member surfaces.
    pub fn population(&self, count: usize, seed: u64) -> Result<Vec<PointCloud>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| self.surface(&self.sample_shape(&mut rng)))
            .collect()
    }
}

/// Where phantom shapes come from.
#[derive(Debug, Clone)]
pub enum ShapeSource {
    Family(EllipsoidFamily),
    /// One fixed member of the family; only placement and noise vary.
    FamilyMember(EllipsoidFamily, FamilyShape),
    /// Mode weights drawn from the model's per-mode Gaussians, clipped at 3 sigma.
    Model(ShapeModel),
}

/// Degradations and placement settings for phantom generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// Variance of the multiplicative speckle.
    pub noise: f64,
    /// Gaussian blur standard deviation (mm).
    pub blur_sigma: f64,
    /// Fraction by which contrast fades toward the apex and base tips.
    pub dropout: f64,
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Maximum offset of the shape center from the grid center (mm, per axis).
    pub translation_jitter: f64,
    /// Maximum rotation about each axis (radians).
    pub angle_jitter: f64,
    pub family: EllipsoidFamily,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            noise: 0.05,
            blur_sigma: 1.0,
            dropout: 0.5,
            seed: 0,
            dims: [128, 128, 128],
            spacing: [0.5; 3],
            translation_jitter: 3.0,
            angle_jitter: 0.15,
            family: EllipsoidFamily::default(),
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("phantom: {m}")));
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise variance must be non-negative");
        }
        if !(self.blur_sigma.is_finite() && self.blur_sigma >= 0.0) {
            return bad("blur_sigma must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1]");
        }
        if !(self.translation_jitter.is_finite() && self.translation_jitter >= 0.0)
            || !(self.angle_jitter.is_finite() && self.angle_jitter >= 0.0)
        {
            return bad("jitters must be non-negative");
        }
        self.grid()?;
        self.family.validate()
    }

    /// Grid centered on the origin.
    pub fn grid(&self) -> Result<Grid> {
        Grid::centered(self.dims, self.spacing, [0.0; 3])
    }
}

/// Everything needed to generate one phantom.
#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub source: ShapeSource,
    pub config: PhantomConfig,
}

/// Ground truth for a phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    /// Shape center position and rotation, in the fitter's convention.
    pub pose: RigidTransform,
    /// Mode weights when the shape came from a model.
    pub weights: Option<ModeWeights>,
    /// Member parameters when the shape came from the ellipsoid family.
    pub family_shape: Option<FamilyShape>,
}

/// Generated volumes and their ground truth.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub truth_mask: Volume3D,
    pub prob_map: Volume3D,
    /// B-mode-like intensity image for training a probability-map predictor.
    pub image: Volume3D,
    /// Posed surface points of the true shape.
    pub surface: PointCloud,
    pub truth: PhantomTruth,
}

impl Phantom {
    /// Fit parameters of the truth; only for model-drawn shapes.
    pub fn truth_params(&self) -> Option<FitParams> {
        self.truth
            .weights
            .clone()
            .map(|w| FitParams::new(w, self.truth.pose))
    }
}

/// Separable Gaussian blur with standard deviation `sigma` mm; kernel
/// truncated at four sigma and renormalized; zero outside the grid.
pub fn gaussian_blur(vol: &Volume3D, sigma: f64) -> Result<Volume3D> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid("blur sigma must be non-negative"));
    }
    let grid = *vol.grid();
    let mut data = vol.data().to_vec();
    if sigma == 0.0 {
        return Volume3D::new(grid, vol.kind(), data);
    }
    let stride = [1, grid.dims[0], grid.dims[0] * grid.dims[1]];
    for axis in 0..3 {
        let h = grid.spacing[axis];
        let radius = (4.0 * sigma / h).ceil() as isize;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|o| (-0.5 * (o as f64 * h / sigma).powi(2)).exp())
            .collect();
        let total: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);
        let n = grid.dims[axis] as isize;
        let mut out = vec![0.0; data.len()];
        let mut line = vec![0.0; n as usize];
        for start in 0..data.len() {
            if grid.ijk(start)[axis] != 0 {
                continue;
            }
            for (i, l) in line.iter_mut().enumerate() {
                *l = data[start + i * stride[axis]];
            }
            if line.iter().all(|&v| v == 0.0) {
                continue;
            }
            for i in 0..n {
                let mut acc = 0.0;
                for (ki, &k) in kernel.iter().enumerate() {
                    let j = i + ki as isize - radius;
                    if (0..n).contains(&j) {
                        acc += k * line[j as usize];
                    }
                }
                out[start + i as usize * stride[axis]] = acc;
            }
        }
        data = out;
    }
    let kind = vol.kind();
    if kind != VolumeKind::Intensity {
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    let kind = if kind == VolumeKind::Mask {
        VolumeKind::Probability
    } else {
        kind
    };
    Volume3D::new(grid, kind, data)
}

/// Attenuation factor per z slice: 1 across the middle third of the truth's
/// extent, falling linearly to `1 - dropout` at its tips and beyond.
fn axial_profile(truth: &Volume3D, dropout: f64) -> Vec<f64> {
    let grid = truth.grid();
    let nz = grid.dims[2];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (idx, &v) in truth.data().iter().enumerate() {
        if v != 0.0 {
            let z = grid.coord(2, grid.ijk(idx)[2]);
            lo = lo.min(z);
            hi = hi.max(z);
        }
    }
    (0..nz)
        .map(|k| {
            if lo > hi {
                return 1.0;
            }
            let t = if hi > lo {
                (grid.coord(2, k) - lo) / (hi - lo)
            } else {
                0.5
            };
            let ramp = if t < 1.0 / 3.0 {
                (1.0 - 3.0 * t).min(1.0)
            } else if t > 2.0 / 3.0 {
                (3.0 * t - 2.0).min(1.0)
            } else {
                0.0
            };
            1.0 - dropout * ramp
        })
        .collect()
}

/// Generate a phantom: true shape, blurred probability map with apex/base
/// dropout and multiplicative speckle, and a matching intensity image.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let cfg = &spec.config;
    cfg.validate()?;
    let grid = cfg.grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let (shape_cloud, topology, weights, family_shape) = match &spec.source {
        ShapeSource::Family(family) => {
            let shape = family.sample_shape(&mut rng);
            (
                family.surface(&shape)?,
                family.topology()?,
                None,
                Some(shape),
            )
        }
        ShapeSource::FamilyMember(family, shape) => {
            family.validate()?;
            (
                family.surface(shape)?,
                family.topology()?,
                None,
                Some(*shape),
            )
        }
        ShapeSource::Model(model) => {
            let w = ModeWeights(
                model
                    .eigenvalues()
                    .iter()
                    .map(|l| gaussian_clipped(&mut rng, 0.0, l.sqrt()))
                    .collect(),
            );
            let cloud = crate::ssm::reconstruct(model, &w)?;
            let topology = model
                .topology()
                .cloned()
                .ok_or_else(|| Error::invalid("shape model has no surface triangulation"))?;
            (cloud, topology, Some(w), None)
        }
    };
    let center = grid.center(grid.dims[0] / 2, grid.dims[1] / 2, grid.dims[2] / 2);
    let jit = |rng: &mut ChaCha8Rng, r: f64| {
        if r > 0.0 {
            rng.random_range(-r..=r)
        } else {
            0.0
        }
    };
    let t = center.map(|c| c + jit(&mut rng, cfg.translation_jitter));
    let angles = [0; 3].map(|_| jit(&mut rng, cfg.angle_jitter));
    let pose = RigidTransform::new(t, angles);

    let surface = match &spec.source {
        ShapeSource::Model(model) => {
            FitParams::new(weights.clone().unwrap(), pose).instance(model)?
        }
        ShapeSource::Family(_) | ShapeSource::FamilyMember(..) => {
            let c = shape_cloud.centroid();
            let r = pose.rotation();
            let tv = pose.translation_vec();
            shape_cloud.map(|p| r * (p - c) + tv)
        }
    };
    let truth_mask = match &spec.source {
        ShapeSource::Model(model) => {
            rasterize_params(
                model,
                &FitParams::new(weights.clone().unwrap(), pose),
                &grid,
            )?
            .mask
        }
        ShapeSource::Family(_) | ShapeSource::FamilyMember(..) => {
            voxelize(&TriMesh::with_topology(surface.clone(), &topology)?, &grid).mask
        }
    };
    if truth_mask.count_nonzero() == 0 {
        return Err(Error::invalid(
            "phantom shape does not cover any voxel of the grid",
        ));
    }

    let blurred = gaussian_blur(&truth_mask, cfg.blur_sigma)?;
    let profile = axial_profile(&truth_mask, cfg.dropout);
    let speckle = Normal::new(0.0, cfg.noise.sqrt()).expect("finite variance");
    let nxy = grid.dims[0] * grid.dims[1];
    let mut prob = Vec::with_capacity(grid.len());
    let mut image = Vec::with_capacity(grid.len());
    for (idx, &b) in blurred.data().iter().enumerate() {
        let att = profile[idx / nxy];
        let n1: f64 = speckle.sample(&mut rng);
        let n2: f64 = speckle.sample(&mut rng);
        prob.push((b * att * (1.0 + n1)).clamp(0.0, 1.0));
        image.push(((0.25 + 0.5 * b * att) * (1.0 + n2)).max(0.0));
    }
    Ok(Phantom {
        truth_mask,
        prob_map: Volume3D::new(grid, VolumeKind::Probability, prob)?,
        image: Volume3D::new(grid, VolumeKind::Intensity, image)?,
        surface,
        truth: PhantomTruth {
            pose,
            weights,
            family_shape,
        },
    })
}
