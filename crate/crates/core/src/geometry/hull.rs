//! Reference triangulation by spherical projection.
//!
//! Points are projected onto the unit sphere around the cloud centroid and the
//! convex hull of the projections is taken. For a cloud that is star-shaped
//! about its centroid every point lies on that hull, so the hull faces give a
//! closed genus-0 triangulation of the original points.

use std::collections::{HashMap, VecDeque};

use super::cloud::{PointCloud, Vec3};
use super::mesh::TriMesh;
use crate::error::{Error, Result};

const EPS: f64 = 1e-10;

struct Face {
    v: [usize; 3],
    normal: Vec3,
    offset: f64,
    alive: bool,
}

impl Face {
    fn new(v: [usize; 3], pts: &[Vec3]) -> Face {
        let n = (pts[v[1]] - pts[v[0]]).cross(&(pts[v[2]] - pts[v[0]]));
        let normal = n / n.norm();
        Face {
            v,
            normal,
            offset: normal.dot(&pts[v[0]]),
            alive: true,
        }
    }

    fn distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Triangulate a star-shaped cloud. Deterministic for a given point order.
pub fn triangulate_reference(cloud: &PointCloud) -> Result<TriMesh> {
    let c = cloud.centroid();
    let scale = cloud.rms_radius();
    if !(scale > 0.0) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let mut dirs = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points().iter().enumerate() {
        let d = p - c;
        let r = d.norm();
        if r <= 1e-9 * scale {
            return Err(Error::Degenerate(format!("point {i} sits on the centroid")));
        }
        dirs.push(d / r);
    }
    let faces = convex_hull(&dirs)?;
    TriMesh::new(cloud.clone(), faces).map_err(|e| match e {
        Error::Topology(msg) => Error::Degenerate(format!(
            "spherical projection did not yield a valid surface ({msg}); is the cloud star-shaped?"
        )),
        other => other,
    })
}

fn initial_simplex(pts: &[Vec3]) -> Result<[usize; 4]> {
    let argmax = |f: &dyn Fn(&Vec3) -> f64| {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, p) in pts.iter().enumerate() {
            let v = f(p);
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    };
    let i0 = 0;
    let (i1, d1) = argmax(&|p| (p - pts[i0]).norm());
    if d1 <= EPS {
        return Err(Error::Degenerate("all directions coincide".into()));
    }
    let axis = (pts[i1] - pts[i0]).normalize();
    let (i2, d2) = argmax(&|p| {
        let d = p - pts[i0];
        (d - axis * axis.dot(&d)).norm()
    });
    if d2 <= EPS {
        return Err(Error::Degenerate("points are collinear".into()));
    }
    let n = (pts[i1] - pts[i0]).cross(&(pts[i2] - pts[i0])).normalize();
    let (i3, d3) = argmax(&|p| n.dot(&(p - pts[i0])).abs());
    if d3 <= EPS {
        return Err(Error::Degenerate("points are coplanar".into()));
    }
    Ok([i0, i1, i2, i3])
}

/// Incremental convex hull; returns outward-wound faces over all input points.
fn convex_hull(pts: &[Vec3]) -> Result<Vec<[usize; 3]>> {
    let simplex = initial_simplex(pts)?;
    let [a, b, c, d] = simplex;
    let mut faces: Vec<Face> = Vec::with_capacity(2 * pts.len());
    let mut edges: HashMap<(usize, usize), usize> = HashMap::with_capacity(6 * pts.len());

    let inside = (pts[a] + pts[b] + pts[c] + pts[d]) / 4.0;
    for tri in [[a, b, c], [a, c, d], [a, d, b], [b, d, c]] {
        let mut f = Face::new(tri, pts);
        if f.distance(&inside) > 0.0 {
            f = Face::new([tri[0], tri[2], tri[1]], pts);
        }
        push_face(&mut faces, &mut edges, f);
    }

    for q in 0..pts.len() {
        if simplex.contains(&q) {
            continue;
        }
        let p = &pts[q];
        let mut seed = None;
        let mut best = EPS;
        for (fi, f) in faces.iter().enumerate() {
            if f.alive {
                let dist = f.distance(p);
                if dist > best {
                    best = dist;
                    seed = Some(fi);
                }
            }
        }
        let Some(seed) = seed else {
            return Err(Error::Degenerate(format!(
                "point {q} is not extreme in the spherical projection \
                 (duplicate direction or cloud not star-shaped about its centroid)"
            )));
        };

        // Flood the visible region from the most visible face.
        let mut visible = vec![seed];
        let mut is_visible: HashMap<usize, bool> = HashMap::new();
        is_visible.insert(seed, true);
        let mut queue = VecDeque::from([seed]);
        while let Some(fi) = queue.pop_front() {
            let v = faces[fi].v;
            for e in 0..3 {
                let twin = edges[&(v[(e + 1) % 3], v[e])];
                if is_visible.contains_key(&twin) {
                    continue;
                }
                let vis = faces[twin].distance(p) > EPS;
                is_visible.insert(twin, vis);
                if vis {
                    visible.push(twin);
                    queue.push_back(twin);
                }
            }
        }

        let mut horizon = Vec::new();
        for &fi in &visible {
            let v = faces[fi].v;
            for e in 0..3 {
                let (u, w) = (v[e], v[(e + 1) % 3]);
                if !is_visible[&edges[&(w, u)]] {
                    horizon.push((u, w));
                }
            }
        }
        for &fi in &visible {
            faces[fi].alive = false;
            let v = faces[fi].v;
            for e in 0..3 {
                edges.remove(&(v[e], v[(e + 1) % 3]));
            }
        }
        for (u, w) in horizon {
            push_face(&mut faces, &mut edges, Face::new([u, w, q], pts));
        }
    }

    let out: Vec<[usize; 3]> = faces.iter().filter(|f| f.alive).map(|f| f.v).collect();
    let mut used = vec![false; pts.len()];
    for f in &out {
        for &v in f {
            used[v] = true;
        }
    }
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(Error::Degenerate(format!(
            "point {i} ended up inside the projected hull"
        )));
    }
    Ok(out)
}

fn push_face(faces: &mut Vec<Face>, edges: &mut HashMap<(usize, usize), usize>, f: Face) {
    let id = faces.len();
    for e in 0..3 {
        edges.insert((f.v[e], f.v[(e + 1) % 3]), id);
    }
    faces.push(f);
}
