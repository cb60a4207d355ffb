use std::collections::HashMap;
use std::sync::Arc;

use super::cloud::PointCloud;
use crate::error::{Error, Result};

/// Validated face list: closed, 2-manifold, consistently wound.
///
/// Shared (cheaply cloned) by every instance of a shape model so that a
/// corresponded cloud can be turned into a mesh without re-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    faces: Arc<[[usize; 3]]>,
    n_vertices: usize,
}

impl Topology {
    pub fn new(faces: Vec<[usize; 3]>, n_vertices: usize) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::Topology("mesh has no faces".into()));
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3);
        for (f, face) in faces.iter().enumerate() {
            if let Some(&v) = face.iter().find(|&&v| v >= n_vertices) {
                return Err(Error::Topology(format!(
                    "face {f} references vertex {v} but the cloud has {n_vertices} points"
                )));
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::Topology(format!(
                    "face {f} repeats a vertex: {face:?}"
                )));
            }
            for e in 0..3 {
                let edge = (face[e], face[(e + 1) % 3]);
                if let Some(other) = directed.insert(edge, f) {
                    return Err(Error::Topology(format!(
                        "edge {edge:?} is traversed in the same direction by faces {other} and {f} \
                         (inconsistent winding or non-manifold edge)"
                    )));
                }
            }
        }
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                return Err(Error::Topology(format!(
                    "edge ({a}, {b}) belongs to a single face; the mesh is not closed"
                )));
            }
        }
        Ok(Topology {
            faces: faces.into(),
            n_vertices,
        })
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.faces.len() * 3 / 2
    }

    /// V - E + F over the vertices actually referenced by faces.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.n_vertices];
        for f in self.faces.iter() {
            for &v in f {
                used[v] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.n_edges() as i64 + self.faces.len() as i64
    }
}

/// Closed triangle mesh over an ordered point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    cloud: PointCloud,
    topology: Topology,
}

impl TriMesh {
    /// Validates topology and that the winding faces outward (positive volume).
    pub fn new(cloud: PointCloud, faces: Vec<[usize; 3]>) -> Result<Self> {
        let topology = Topology::new(faces, cloud.len())?;
        let mesh = TriMesh { cloud, topology };
        let vol = mesh.signed_volume();
        if vol.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Topology(format!(
                "mesh encloses non-positive volume {vol}; faces are wound inward"
            )));
        }
        Ok(mesh)
    }

    /// Attach an already-validated topology to a cloud with the same vertex count.
    pub fn with_topology(cloud: PointCloud, topology: &Topology) -> Result<Self> {
        if cloud.len() != topology.n_vertices {
            return Err(Error::DimensionMismatch {
                expected: topology.n_vertices,
                found: cloud.len(),
            });
        }
        Ok(TriMesh {
            cloud,
            topology: topology.clone(),
        })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        self.topology.faces()
    }

    /// Enclosed volume by the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        let p = self.cloud.points();
        self.faces()
            .iter()
            .map(|&[a, b, c]| p[a].dot(&p[b].cross(&p[c])))
            .sum::<f64>()
            / 6.0
    }
}
