//! File formats, fan-beam scan conversion, contour resampling, synthetic
//! phantoms and the pipeline configuration file.

mod contours;
mod fan;
mod files;
mod phantom;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use contours::{resample_contours, SliceContour};
pub use fan::{reconstruct_volume, reconstruct_volume_on, FanAcquisition, Reconstruction};
pub use files::{
    decode_cloud, decode_mesh, decode_model, decode_volume, encode_cloud, encode_mesh,
    encode_model, encode_volume, lossless_dtype, read_cloud, read_mesh, read_model, read_volume,
    write_atomic, write_cloud, write_mesh, write_model, write_volume, Dtype, MODEL_FORMAT,
    MODEL_VERSION, VOLUME_MAGIC,
};
pub use phantom::{
    gaussian_blur, make_phantom, EllipsoidFamily, FamilyShape, Phantom, PhantomConfig, PhantomSpec,
    PhantomTruth, ShapeSource,
};

use crate::cpd::CpdConfig;
use crate::error::{Error, Result};
use crate::fitter::FitConfig;
use crate::metrics::RegionConfig;

/// Shape-model settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmConfig {
    /// Fraction of population variance the retained modes must explain.
    pub variance_target: f64,
}

impl Default for SsmConfig {
    fn default() -> Self {
        SsmConfig {
            variance_target: 0.9,
        }
    }
}

/// Configuration file with one section per pipeline stage; missing
/// sections and fields take their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cpd: CpdConfig,
    pub ssm: SsmConfig,
    pub fit: FitConfig,
    pub phantom: PhantomConfig,
    pub metrics: RegionConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.cpd.validate()?;
        if !(self.ssm.variance_target > 0.0 && self.ssm.variance_target <= 1.0) {
            return Err(Error::invalid("ssm.variance_target must lie in (0, 1]"));
        }
        self.fit.validate()?;
        self.phantom.validate()
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::Io(e).in_file(path))?;
        PipelineConfig::from_json(&bytes).map_err(|e| e.in_file(path))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
