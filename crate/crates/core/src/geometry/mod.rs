//! Spatial types, rigid poses and mesh rasterization.

mod cloud;
mod hull;
pub(crate) mod mesh;
mod transform;
mod volume;
mod voxelize;

pub use cloud::{PointCloud, Vec3};
pub use hull::triangulate_reference;
pub use mesh::{Topology, TriMesh};
pub use transform::{apply_rigid, RigidTransform};
pub use volume::{Grid, Volume3D, VolumeKind};
pub use voxelize::{voxelize, Voxelization};

pub(crate) use voxelize::row_spans;
