//! PCA statistical shape model over corresponded point clouds.
//!
//! A shape is the stacked vector `[x1, y1, z1, ..., xN, yN, zN]`; the model
//! approximates it as the mean plus a weighted sum of orthonormal modes.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{triangulate_reference, PointCloud, Topology};

/// Coefficients of the retained modes (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeWeights(pub Vec<f64>);

impl ModeWeights {
    pub fn zeros(c: usize) -> Self {
        ModeWeights(vec![0.0; c])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Mean shape, orthonormal modes and their variances.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    mean: Vec<f64>,
    /// Mode-major: mode `i` occupies `modes[i * 3N..(i + 1) * 3N]`.
    modes: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// Every population eigenvalue (M - 1 of them), retained or not.
    spectrum: Vec<f64>,
    n_points: usize,
    n_training: usize,
    topology: Option<Topology>,
}

const ORTHONORMAL_TOL: f64 = 1e-8;

impl ShapeModel {
    /// Assemble a model from stored parts, checking every invariant.
    pub fn from_parts(
        mean: Vec<f64>,
        modes: Vec<f64>,
        eigenvalues: Vec<f64>,
        spectrum: Vec<f64>,
        n_training: usize,
    ) -> Result<Self> {
        if mean.is_empty() || !mean.len().is_multiple_of(3) {
            return Err(Error::Validation(format!(
                "mean length {} is not 3N",
                mean.len()
            )));
        }
        let dim = mean.len();
        let c = eigenvalues.len();
        if modes.len() != c * dim {
            return Err(Error::Validation(format!(
                "mode matrix holds {} values, expected {c} x {dim}",
                modes.len()
            )));
        }
        if n_training > 0 && c > n_training.saturating_sub(1) {
            return Err(Error::Validation(format!(
                "{c} modes cannot come from {n_training} training shapes"
            )));
        }
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Validation("eigenvalues must be positive".into()));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) || spectrum.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Validation(
                "eigenvalues must be sorted in descending order".into(),
            ));
        }
        if spectrum.len() < c || spectrum.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Validation(
                "spectrum must list every non-negative eigenvalue".into(),
            ));
        }
        if mean.iter().chain(&modes).any(|v| !v.is_finite()) {
            return Err(Error::Validation("mean and modes must be finite".into()));
        }
        let model = ShapeModel {
            mean,
            modes,
            eigenvalues,
            spectrum,
            n_points: dim / 3,
            n_training,
            topology: None,
        };
        for i in 0..c {
            for j in i..c {
                let dot: f64 = model
                    .mode(i)
                    .iter()
                    .zip(model.mode(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > ORTHONORMAL_TOL {
                    return Err(Error::Validation(format!(
                        "modes {i} and {j} are not orthonormal (dot = {dot})"
                    )));
                }
            }
        }
        Ok(model)
    }

    /// Attach the surface triangulation used to rasterize instances.
    pub fn with_topology(mut self, topology: Topology) -> Result<Self> {
        if topology.n_vertices() != self.n_points {
            return Err(Error::DimensionMismatch {
                expected: self.n_points,
                found: topology.n_vertices(),
            });
        }
        self.topology = Some(topology);
        Ok(self)
    }

    /// Triangulate the mean shape and attach the result.
    pub fn with_mean_topology(self) -> Result<Self> {
        let mesh = triangulate_reference(&self.mean_cloud())?;
        let topology = mesh.topology().clone();
        self.with_topology(topology)
    }

    pub fn topology(&self) -> Option<&Topology> {
        self.topology.as_ref()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn mean_cloud(&self) -> PointCloud {
        PointCloud::from_flat(&self.mean).expect("mean holds at least one point")
    }

    pub fn mode(&self, i: usize) -> &[f64] {
        let d = self.mean.len();
        &self.modes[i * d..(i + 1) * d]
    }

    pub fn modes_flat(&self) -> &[f64] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_training(&self) -> usize {
        self.n_training
    }

    /// Fraction of population variance captured by the retained modes.
    pub fn explained_fraction(&self) -> f64 {
        let total: f64 = self.spectrum.iter().sum();
        if total <= 0.0 {
            1.0
        } else {
            (self.eigenvalues.iter().sum::<f64>() / total).min(1.0)
        }
    }

    /// Cumulative explained fraction after 1, 2, ... M-1 modes.
    pub fn explained_curve(&self) -> Vec<f64> {
        cumulative_fractions(&self.spectrum)
    }

    /// Keep only the first `c` modes.
    pub fn truncated(&self, c: usize) -> Result<Self> {
        if c > self.n_modes() {
            return Err(Error::invalid(format!(
                "cannot keep {c} modes of a {}-mode model",
                self.n_modes()
            )));
        }
        let d = self.mean.len();
        Ok(ShapeModel {
            modes: self.modes[..c * d].to_vec(),
            eigenvalues: self.eigenvalues[..c].to_vec(),
            ..self.clone()
        })
    }

    fn check_weights(&self, w: &ModeWeights) -> Result<()> {
        if w.len() != self.n_modes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_modes(),
                found: w.len(),
            });
        }
        if w.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mode weights must be finite"));
        }
        Ok(())
    }

    fn check_cloud(&self, cloud: &PointCloud) -> Result<()> {
        if cloud.len() != self.n_points {
            return Err(Error::DimensionMismatch {
                expected: self.n_points,
                found: cloud.len(),
            });
        }
        Ok(())
    }

    /// Stacked instance vector `mean + sum_i w_i E_i`.
    pub(crate) fn instance_flat(&self, w: &[f64]) -> Vec<f64> {
        let mut p = self.mean.clone();
        for (i, &wi) in w.iter().enumerate() {
            if wi != 0.0 {
                for (pv, ev) in p.iter_mut().zip(self.mode(i)) {
                    *pv += wi * ev;
                }
            }
        }
        p
    }
}

fn cumulative_fractions(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().sum();
    let mut acc = 0.0;
    values
        .iter()
        .map(|v| {
            acc += v;
            if total > 0.0 {
                (acc / total).min(1.0)
            } else {
                1.0
            }
        })
        .collect()
}

/// Smallest mode count whose cumulative fraction reaches `target`.
fn modes_for_target(spectrum: &[f64], target: f64) -> usize {
    let positive = spectrum.iter().take_while(|&&l| l > 0.0).count();
    if positive == 0 {
        return 0;
    }
    let curve = cumulative_fractions(spectrum);
    curve[..positive]
        .iter()
        .position(|&f| f >= target - 1e-12)
        .map_or(positive, |i| i + 1)
}

/// PCA over corresponded clouds via the M x M Gram matrix, keeping the
/// fewest modes that explain at least `variance_target` of the variance.
pub fn build_model(corresponded: &[PointCloud], variance_target: f64) -> Result<ShapeModel> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::invalid(format!(
            "variance target must lie in (0, 1], got {variance_target}"
        )));
    }
    let m = corresponded.len();
    if m < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 corresponded shapes, got {m}"
        )));
    }
    let n = corresponded[0].len();
    if let Some((i, c)) = corresponded.iter().enumerate().find(|(_, c)| c.len() != n) {
        return Err(Error::Member {
            index: i,
            source: Box::new(Error::DimensionMismatch {
                expected: n,
                found: c.len(),
            }),
        });
    }
    let dim = 3 * n;
    let rows: Vec<Vec<f64>> = corresponded.iter().map(PointCloud::to_flat).collect();
    let mut mean = vec![0.0; dim];
    for r in &rows {
        for (mv, v) in mean.iter_mut().zip(r) {
            *mv += v;
        }
    }
    for mv in &mut mean {
        *mv /= m as f64;
    }
    let centered = DMatrix::from_fn(m, dim, |i, j| rows[i][j] - mean[j]);
    let denom = (m - 1) as f64;
    let gram = (&centered * centered.transpose()) / denom;
    let eig = SymmetricEigen::new(gram);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let spectrum: Vec<f64> = order[..m - 1]
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0))
        .collect();
    let lambda_max = spectrum[0];
    let significant = |l: f64| l > 1e-12 * lambda_max.max(f64::MIN_POSITIVE) && l > 0.0;
    let c = modes_for_target(
        &spectrum
            .iter()
            .map(|&l| if significant(l) { l } else { 0.0 })
            .collect::<Vec<_>>(),
        variance_target,
    );

    let mut modes = Vec::with_capacity(c * dim);
    let mut eigenvalues = Vec::with_capacity(c);
    for &i in &order[..c] {
        let lambda = eig.eigenvalues[i];
        let u = eig.eigenvectors.column(i);
        let mut e: Vec<f64> = (centered.transpose() * u).iter().copied().collect();
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pivot = e.iter().enumerate().fold((0, 0.0f64), |best, (j, v)| {
            if v.abs() > best.1.abs() {
                (j, *v)
            } else {
                best
            }
        });
        let sign = if pivot.1 < 0.0 { -1.0 } else { 1.0 };
        for v in &mut e {
            *v *= sign / norm;
        }
        modes.extend(e);
        eigenvalues.push(lambda);
    }

    ShapeModel::from_parts(mean, modes, eigenvalues, spectrum, m)
}

/// Point cloud for the given mode weights.
pub fn reconstruct(model: &ShapeModel, w: &ModeWeights) -> Result<PointCloud> {
    model.check_weights(w)?;
    PointCloud::from_flat(&model.instance_flat(&w.0))
}

/// Least-squares mode weights `w_i = E_i . (p - mean)`.
pub fn project(model: &ShapeModel, cloud: &PointCloud) -> Result<ModeWeights> {
    model.check_cloud(cloud)?;
    let p = cloud.to_flat();
    let diff: Vec<f64> = p.iter().zip(model.mean()).map(|(a, b)| a - b).collect();
    Ok(ModeWeights(
        (0..model.n_modes())
            .map(|i| model.mode(i).iter().zip(&diff).map(|(e, d)| e * d).sum())
            .collect(),
    ))
}

fn residual(model: &ShapeModel, cloud: &PointCloud) -> Result<Vec<f64>> {
    let w = project(model, cloud)?;
    let fit = model.instance_flat(&w.0);
    Ok(cloud
        .to_flat()
        .iter()
        .zip(&fit)
        .map(|(a, b)| a - b)
        .collect())
}

/// RMS over points of the residual after projection and reconstruction (mm).
pub fn reconstruction_error(model: &ShapeModel, cloud: &PointCloud) -> Result<f64> {
    let r = residual(model, cloud)?;
    Ok((r.iter().map(|v| v * v).sum::<f64>() / model.n_points() as f64).sqrt())
}

/// Euclidean norm of the stacked residual vector (mm).
pub fn reconstruction_residual_l2(model: &ShapeModel, cloud: &PointCloud) -> Result<f64> {
    let r = residual(model, cloud)?;
    Ok(r.iter().map(|v| v * v).sum::<f64>().sqrt())
}
