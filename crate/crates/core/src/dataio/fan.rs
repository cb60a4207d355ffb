//! Scan conversion of a rolled-probe acquisition onto a Cartesian grid.
//!
//! The probe's roll axis is the world z axis. Frame `f` is a planar image
//! containing that axis, rotated by `angles[f]` degrees about it from the +x
//! half-plane. Image rows run away from the axis (row 0 at `axis_offset` mm)
//! and columns run along it (column 0 at `z_origin` mm).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Grid, Volume3D, VolumeKind};

/// Sagittal frames collected while rolling the probe about its axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanAcquisition {
    /// Row-major `rows x cols` images.
    pub frames: Vec<Vec<f64>>,
    pub rows: usize,
    pub cols: usize,
    /// Roll angle of each frame (degrees), strictly increasing.
    pub angles: Vec<f64>,
    /// `[row, col]` pixel size (mm).
    pub pixel_spacing: [f64; 2],
    /// Distance from the roll axis to the center of row 0 (mm).
    pub axis_offset: f64,
    /// Position along the roll axis of column 0 (mm).
    pub z_origin: f64,
}

/// Scan-converted intensities and the mask of voxels inside the swept fan.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub volume: Volume3D,
    pub valid: Volume3D,
}

impl FanAcquisition {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("fan acquisition: {m}")));
        if self.frames.len() < 2 {
            return bad(format!("need at least 2 frames, got {}", self.frames.len()));
        }
        if self.rows < 2 || self.cols < 2 {
            return bad(format!(
                "frames must be at least 2 x 2, got {} x {}",
                self.rows, self.cols
            ));
        }
        if let Some(f) = self
            .frames
            .iter()
            .position(|f| f.len() != self.rows * self.cols)
        {
            return bad(format!(
                "frame {f} does not hold {} x {} pixels",
                self.rows, self.cols
            ));
        }
        if self.angles.len() != self.frames.len() {
            return bad(format!(
                "{} angles for {} frames",
                self.angles.len(),
                self.frames.len()
            ));
        }
        if !self.angles.iter().all(|a| a.is_finite())
            || self.angles.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("angles must be finite and strictly increasing".into());
        }
        if self.angles[self.angles.len() - 1] - self.angles[0] >= 360.0 {
            return bad("angles must span less than a full turn".into());
        }
        if !self.pixel_spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            return bad("pixel spacing must be positive".into());
        }
        if !(self.axis_offset.is_finite() && self.axis_offset >= 0.0 && self.z_origin.is_finite()) {
            return bad("axis offset must be non-negative and finite".into());
        }
        if self.frames.iter().flatten().any(|v| !v.is_finite()) {
            return bad("pixel values must be finite".into());
        }
        Ok(())
    }

    fn radial_range(&self) -> (f64, f64) {
        let r0 = self.axis_offset;
        (r0, r0 + (self.rows - 1) as f64 * self.pixel_spacing[0])
    }

    fn z_range(&self) -> (f64, f64) {
        (
            self.z_origin,
            self.z_origin + (self.cols - 1) as f64 * self.pixel_spacing[1],
        )
    }

    /// Axis-aligned grid with the given isotropic spacing covering the fan.
    pub fn covering_grid(&self, spacing: f64) -> Result<Grid> {
        self.validate()?;
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::invalid(format!(
                "voxel spacing must be positive, got {spacing}"
            )));
        }
        let (r0, r1) = self.radial_range();
        let (a0, a1) = (self.angles[0], self.angles[self.angles.len() - 1]);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut add = |deg: f64| {
            let (s, c) = deg.to_radians().sin_cos();
            for r in [r0, r1] {
                xs.push(r * c);
                ys.push(r * s);
            }
        };
        add(a0);
        add(a1);
        let mut q = (a0 / 90.0).ceil() * 90.0;
        while q < a1 {
            add(q);
            q += 90.0;
        }
        let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (z0, z1) = self.z_range();
        let lows = [lo(&xs), lo(&ys), z0];
        let highs = [hi(&xs), hi(&ys), z1];
        let dims = [0, 1, 2].map(|a| ((highs[a] - lows[a]) / spacing + 1e-9).floor() as usize + 1);
        Grid::new(dims, [spacing; 3], lows)
    }

    /// Bilinear sample of frame `f` at fractional row `u` and column `v`.
    fn sample(&self, f: usize, u: f64, v: f64) -> f64 {
        let img = &self.frames[f];
        let i = (u.floor() as usize).min(self.rows - 2);
        let j = (v.floor() as usize).min(self.cols - 2);
        let (fu, fv) = (u - i as f64, v - j as f64);
        let at = |r: usize, c: usize| img[r * self.cols + c];
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        let top = lerp(at(i, j), at(i, j + 1), fv);
        let bottom = lerp(at(i + 1, j), at(i + 1, j + 1), fv);
        lerp(top, bottom, fu)
    }

    /// Value at a world point, or `None` outside the swept fan.
    pub fn sample_world(&self, p: [f64; 3]) -> Option<f64> {
        const TOL: f64 = 1e-9;
        let (r0, r1) = self.radial_range();
        let (z0, z1) = self.z_range();
        let rho = p[0].hypot(p[1]);
        if rho < r0 - TOL || rho > r1 + TOL || p[2] < z0 - TOL || p[2] > z1 + TOL {
            return None;
        }
        let a0 = self.angles[0];
        let mut phi = p[1].atan2(p[0]).to_degrees();
        phi = a0 + (phi - a0).rem_euclid(360.0);
        let last = self.angles.len() - 1;
        let phi = if phi > self.angles[last] + TOL {
            // Just below the first frame after wrapping.
            if phi - 360.0 >= a0 - TOL {
                a0
            } else {
                return None;
            }
        } else {
            phi.min(self.angles[last])
        };
        let k = self.angles.partition_point(|&a| a <= phi).clamp(1, last) - 1;
        let t = ((phi - self.angles[k]) / (self.angles[k + 1] - self.angles[k])).clamp(0.0, 1.0);
        let u = ((rho - r0) / self.pixel_spacing[0]).clamp(0.0, (self.rows - 1) as f64);
        let v = ((p[2] - z0) / self.pixel_spacing[1]).clamp(0.0, (self.cols - 1) as f64);
        let a = self.sample(k, u, v);
        let b = self.sample(k + 1, u, v);
        Some(a + t * (b - a))
    }
}

/// Scan-convert onto an isotropic grid covering the fan.
pub fn reconstruct_volume(acq: &FanAcquisition, spacing: f64) -> Result<Reconstruction> {
    let grid = acq.covering_grid(spacing)?;
    reconstruct_volume_on(acq, &grid)
}

/// Scan-convert onto a caller-supplied grid; voxels outside the fan are 0.
pub fn reconstruct_volume_on(acq: &FanAcquisition, grid: &Grid) -> Result<Reconstruction> {
    acq.validate()?;
    grid.validate()?;
    let [nx, ny, nz] = grid.dims;
    let slices: Vec<(Vec<f64>, Vec<f64>)> = (0..nz)
        .into_par_iter()
        .map(|k| {
            let mut vals = vec![0.0; nx * ny];
            let mut valid = vec![0.0; nx * ny];
            for j in 0..ny {
                for i in 0..nx {
                    if let Some(v) = acq.sample_world(grid.center(i, j, k)) {
                        vals[i + nx * j] = v;
                        valid[i + nx * j] = 1.0;
                    }
                }
            }
            (vals, valid)
        })
        .collect();
    let mut data = Vec::with_capacity(grid.len());
    let mut mask = Vec::with_capacity(grid.len());
    for (v, m) in slices {
        data.extend(v);
        mask.extend(m);
    }
    if !mask.contains(&1.0) {
        return Err(Error::invalid(
            "the output grid does not intersect the swept fan",
        ));
    }
    Ok(Reconstruction {
        volume: Volume3D::new(*grid, VolumeKind::Intensity, data)?,
        valid: Volume3D::new(*grid, VolumeKind::Mask, mask)?,
    })
}
