use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the scalar values of a [`Volume3D`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Intensity,
    Probability,
    Mask,
}

/// Voxel lattice: dimensions, physical spacing (mm) and the world position of
/// the center of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let grid = Grid {
            dims,
            spacing,
            origin,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid of `dims` voxels whose center lies at `center`.
    pub fn centered(dims: [usize; 3], spacing: [f64; 3], center: [f64; 3]) -> Result<Self> {
        let origin = std::array::from_fn(|a| center[a] - 0.5 * (dims[a] as f64 - 1.0) * spacing[a]);
        Grid::new(dims, spacing, origin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Validation(format!(
                "grid dims must be positive, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Validation(format!(
                "grid spacing must be positive and finite, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Validation("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Inverse of [`Grid::index`].
    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let jk = idx / self.dims[0];
        [i, jk % self.dims[1], jk / self.dims[1]]
    }

    /// World coordinate of the center of voxel index `n` along `axis`.
    #[inline]
    pub fn coord(&self, axis: usize, n: usize) -> f64 {
        self.origin[axis] + n as f64 * self.spacing[axis]
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [self.coord(0, i), self.coord(1, j), self.coord(2, k)]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Axis-aligned box covered by the voxels (faces, not centers).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let lo = std::array::from_fn(|a| self.origin[a] - 0.5 * self.spacing[a]);
        let hi = std::array::from_fn(|a| self.coord(a, self.dims[a] - 1) + 0.5 * self.spacing[a]);
        (lo, hi)
    }

    /// True when both grids address the same voxel centers.
    pub fn same_lattice(&self, other: &Grid) -> bool {
        self == other
    }
}

/// Dense scalar volume with x-fastest storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    grid: Grid,
    kind: VolumeKind,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(grid: Grid, kind: VolumeKind, data: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: data.len(),
            });
        }
        let vol = Volume3D { grid, kind, data };
        vol.validate()?;
        Ok(vol)
    }

    pub fn zeros(grid: Grid, kind: VolumeKind) -> Self {
        Volume3D {
            grid,
            kind,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(
        grid: Grid,
        kind: VolumeKind,
        mut f: impl FnMut([usize; 3]) -> f64,
    ) -> Result<Self> {
        let data = (0..grid.len()).map(|idx| f(grid.ijk(idx))).collect();
        Volume3D::new(grid, kind, data)
    }

    /// Binary mask built from a boolean predicate per voxel.
    pub fn mask_from(grid: Grid, bits: impl IntoIterator<Item = bool>) -> Result<Self> {
        let data: Vec<f64> = bits
            .into_iter()
            .map(|b| if b { 1.0 } else { 0.0 })
            .collect();
        Volume3D::new(grid, VolumeKind::Mask, data)
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            VolumeKind::Intensity => {
                if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!(
                        "non-finite intensity at voxel {pos}"
                    )));
                }
            }
            VolumeKind::Probability => {
                if let Some(pos) = self.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Validation(format!(
                        "probability {} at voxel {pos} is outside [0, 1]",
                        self.data[pos]
                    )));
                }
            }
            VolumeKind::Mask => {
                if let Some(pos) = self.data.iter().position(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Validation(format!(
                        "mask value {} at voxel {pos} is not binary",
                        self.data[pos]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.index(i, j, k)]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Number of nonzero voxels.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Reinterpret with a different kind, re-running the range checks.
    pub fn with_kind(self, kind: VolumeKind) -> Result<Self> {
        Volume3D::new(self.grid, kind, self.data)
    }

    pub fn require_kind(&self, kind: VolumeKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::invalid(format!(
                "expected a {kind:?} volume, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    /// Value-weighted centroid in world coordinates; `None` when the volume sums to zero.
    pub fn weighted_centroid(&self) -> Option<[f64; 3]> {
        let mut acc = [0.0; 3];
        let mut mass = 0.0;
        for (idx, &v) in self.data.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let [i, j, k] = self.grid.ijk(idx);
            let c = self.grid.center(i, j, k);
            for a in 0..3 {
                acc[a] += v * c[a];
            }
            mass += v;
        }
        (mass > 0.0).then(|| acc.map(|x| x / mass))
    }
}
