//! Statistical shape models fitted to voxel-wise tissue probability maps.
//!
//! The pipeline: corresponded organ surfaces are obtained with coherent point
//! drift ([`cpd`]), a PCA shape model is built over them ([`ssm`]), and a new
//! volume is segmented by searching mode weights and rigid pose with particle
//! swarm optimization so that the rasterized shape captures as much
//! probability as possible ([`fitter`]). [`metrics`] scores the resulting
//! masks and [`dataio`] holds file formats, fan-beam reconstruction and the
//! synthetic phantom generator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cpd;
pub mod dataio;
pub mod error;
pub mod fitter;
pub mod geometry;
pub mod metrics;
pub mod ssm;

pub use error::{Error, Result};
