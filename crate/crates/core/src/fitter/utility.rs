//! The fitting utility: probability captured by the rasterized shape minus a
//! penalty on the mode weights.

use super::{FitConfig, FitParams, NormKind};
use crate::error::{Error, Result};
use crate::geometry::{
    row_spans, voxelize, Topology, TriMesh, Vec3, Volume3D, VolumeKind, Voxelization,
};
use crate::ssm::ShapeModel;

/// Utility broken into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityTerms {
    /// `overlap - penalty`.
    pub value: f64,
    /// Norm of the map restricted to the shape's voxels.
    pub overlap: f64,
    /// `alpha * |w|`.
    pub penalty: f64,
    /// No voxel center fell inside the shape.
    pub out_of_grid: bool,
}

/// Model, map and settings bound together for repeated evaluation.
pub(crate) struct Objective<'a> {
    model: &'a ShapeModel,
    map: &'a Volume3D,
    topology: &'a Topology,
    center: Vec3,
    cfg: &'a FitConfig,
}

pub(crate) fn require_topology(model: &ShapeModel) -> Result<&Topology> {
    model.topology().ok_or_else(|| {
        Error::invalid("shape model has no surface triangulation; attach one before fitting")
    })
}

impl<'a> Objective<'a> {
    pub fn new(model: &'a ShapeModel, map: &'a Volume3D, cfg: &'a FitConfig) -> Result<Self> {
        map.require_kind(VolumeKind::Probability)?;
        Ok(Objective {
            model,
            map,
            topology: require_topology(model)?,
            center: FitParams::shape_center(model),
            cfg,
        })
    }

    fn mesh(&self, params: &FitParams) -> Result<TriMesh> {
        let cloud = params.posed_instance(self.model, &self.center)?;
        TriMesh::with_topology(cloud, self.topology)
    }

    pub fn penalty(&self, params: &FitParams) -> f64 {
        let norm = if self.cfg.mahalanobis {
            params
                .w
                .0
                .iter()
                .zip(self.model.eigenvalues())
                .map(|(w, l)| w * w / l)
                .sum::<f64>()
                .sqrt()
        } else {
            params.w.norm()
        };
        self.cfg.alpha * norm
    }

    pub fn terms(&self, params: &FitParams) -> Result<UtilityTerms> {
        let mesh = self.mesh(params)?;
        let spans = row_spans(&mesh, self.map.grid());
        let data = self.map.data();
        let overlap = match self.cfg.norm_kind {
            NormKind::L1Sum => spans
                .iter()
                .map(|s| data[s.range()].iter().sum::<f64>())
                .sum(),
            NormKind::L2 => spans
                .iter()
                .map(|s| data[s.range()].iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt(),
            NormKind::Signed => spans
                .iter()
                .map(|s| data[s.range()].iter().map(|v| 2.0 * v - 1.0).sum::<f64>())
                .sum(),
        };
        let penalty = self.penalty(params);
        Ok(UtilityTerms {
            value: overlap - penalty,
            overlap,
            penalty,
            out_of_grid: spans.is_empty(),
        })
    }

    /// Objective for the swarm: non-finite when the parameters are unusable.
    pub fn evaluate_vec(&self, x: &[f64]) -> f64 {
        FitParams::from_vec(x, self.model.n_modes())
            .and_then(|p| self.terms(&p))
            .map_or(f64::NAN, |t| t.value)
    }

    pub fn rasterize(&self, params: &FitParams) -> Result<Voxelization> {
        Ok(voxelize(&self.mesh(params)?, self.map.grid()))
    }
}

/// Utility of `params` against a probability map.
pub fn utility(
    model: &ShapeModel,
    map: &Volume3D,
    params: &FitParams,
    cfg: &FitConfig,
) -> Result<f64> {
    Ok(utility_terms(model, map, params, cfg)?.value)
}

/// Utility with its overlap and penalty terms reported separately.
pub fn utility_terms(
    model: &ShapeModel,
    map: &Volume3D,
    params: &FitParams,
    cfg: &FitConfig,
) -> Result<UtilityTerms> {
    cfg.validate()?;
    params.check(model)?;
    Objective::new(model, map, cfg)?.terms(params)
}

/// Binary mask of the posed shape instance on `grid`.
pub fn rasterize_params(
    model: &ShapeModel,
    params: &FitParams,
    grid: &crate::geometry::Grid,
) -> Result<Voxelization> {
    params.check(model)?;
    let topology = require_topology(model)?;
    let cloud = params.posed_instance(model, &FitParams::shape_center(model))?;
    Ok(voxelize(&TriMesh::with_topology(cloud, topology)?, grid))
}
