//! Parity rasterization of closed meshes.
//!
//! Each grid row (fixed `j`, `k`) is a ray along +x through the voxel
//! centers. Crossings with the surface are found with exact 2D orientation
//! tests in the y-z plane; ties on edges and vertices are broken by a symbolic
//! perturbation of the ray, with each edge evaluated in a canonical vertex
//! order so that both faces sharing it agree. A voxel is inside iff an odd
//! number of crossings lie strictly beyond its center.

use robust::{orient2d, Coord};

use super::mesh::TriMesh;
use super::volume::{Grid, Volume3D, VolumeKind};

/// Result of rasterizing a mesh.
#[derive(Debug, Clone)]
pub struct Voxelization {
    pub mask: Volume3D,
    /// Set when no voxel center falls inside the mesh (mesh off-grid or too thin).
    pub empty: bool,
}

/// Half-open run `[start, end)` of inside voxels along one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Span {
    pub base: usize,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.base + self.start..self.base + self.end
    }
}

#[inline]
fn yz(p: &nalgebra::Vector3<f64>) -> Coord<f64> {
    Coord { x: p.y, y: p.z }
}

/// Side of `p` relative to the directed edge `u -> v`, never zero for a
/// non-degenerate edge.
#[inline]
fn edge_side(iu: usize, u: Coord<f64>, iv: usize, v: Coord<f64>, p: Coord<f64>) -> i8 {
    if iu > iv {
        return -edge_side(iv, v, iu, u, p);
    }
    let o = orient2d(u, v, p);
    if o > 0.0 {
        1
    } else if o < 0.0 {
        -1
    } else {
        // Perturb p by (eps, eps^2) in (y, z).
        let dy = v.x - u.x;
        let dz = v.y - u.y;
        if dz != 0.0 {
            if dz > 0.0 {
                -1
            } else {
                1
            }
        } else if dy > 0.0 {
            1
        } else if dy < 0.0 {
            -1
        } else {
            0
        }
    }
}

fn first_center_at_least(grid: &Grid, axis: usize, x: f64) -> usize {
    let n = grid.dims[axis];
    if x == f64::NEG_INFINITY {
        return 0;
    }
    let guess = ((x - grid.origin[axis]) / grid.spacing[axis]).ceil();
    let mut i = if guess.is_nan() || guess <= 0.0 {
        0
    } else if guess >= n as f64 {
        n
    } else {
        guess as usize
    };
    while i > 0 && grid.coord(axis, i - 1) >= x {
        i -= 1;
    }
    while i < n && grid.coord(axis, i) < x {
        i += 1;
    }
    i
}

/// Index of the first voxel center strictly greater than `x`.
fn first_center_above(grid: &Grid, axis: usize, x: f64) -> usize {
    let mut i = first_center_at_least(grid, axis, x);
    while i < grid.dims[axis] && grid.coord(axis, i) <= x {
        i += 1;
    }
    i
}

/// Inside runs of every grid row intersecting the mesh.
pub(crate) fn row_spans(mesh: &TriMesh, grid: &Grid) -> Vec<Span> {
    let pts = mesh.cloud().points();
    let [nx, ny, _] = grid.dims;
    let mut hits: Vec<(usize, f64)> = Vec::new();

    for &[ia, ib, ic] in mesh.faces() {
        let (pa, pb, pc) = (&pts[ia], &pts[ib], &pts[ic]);
        let (a, b, c) = (yz(pa), yz(pb), yz(pc));
        let area = orient2d(a, b, c);
        if area == 0.0 {
            continue;
        }
        let s: i8 = if area > 0.0 { 1 } else { -1 };
        let ymin = a.x.min(b.x).min(c.x);
        let ymax = a.x.max(b.x).max(c.x);
        let zmin = a.y.min(b.y).min(c.y);
        let zmax = a.y.max(b.y).max(c.y);
        let j0 = first_center_at_least(grid, 1, ymin);
        let j1 = first_center_above(grid, 1, ymax);
        let k0 = first_center_at_least(grid, 2, zmin);
        let k1 = first_center_above(grid, 2, zmax);
        for k in k0..k1 {
            let z = grid.coord(2, k);
            for j in j0..j1 {
                let p = Coord {
                    x: grid.coord(1, j),
                    y: z,
                };
                if edge_side(ia, a, ib, b, p) != s
                    || edge_side(ib, b, ic, c, p) != s
                    || edge_side(ic, c, ia, a, p) != s
                {
                    continue;
                }
                let wa = orient2d(b, c, p) / area;
                let wb = orient2d(c, a, p) / area;
                let wc = 1.0 - wa - wb;
                let x = wa * pa.x + wb * pb.x + wc * pc.x;
                hits.push((j + ny * k, x));
            }
        }
    }

    hits.sort_unstable_by(|l, r| l.0.cmp(&r.0).then(l.1.total_cmp(&r.1)));
    let mut spans = Vec::new();
    let mut start = 0;
    while start < hits.len() {
        let row = hits[start].0;
        let mut end = start;
        while end < hits.len() && hits[end].0 == row {
            end += 1;
        }
        let xs: Vec<f64> = hits[start..end].iter().map(|h| h.1).collect();
        let base = row * nx;
        // Pair crossings from the far end: inside iff an odd number lie beyond.
        let mut hi = xs.len();
        while hi > 0 {
            let upper = xs[hi - 1];
            let lower = if hi >= 2 {
                xs[hi - 2]
            } else {
                f64::NEG_INFINITY
            };
            let i0 = first_center_at_least(grid, 0, lower);
            let i1 = first_center_at_least(grid, 0, upper);
            if i1 > i0 {
                spans.push(Span {
                    base,
                    start: i0,
                    end: i1,
                });
            }
            hi = hi.saturating_sub(2);
        }
        start = end;
    }
    spans
}

/// Binary mask of voxels whose centers lie inside the mesh.
pub fn voxelize(mesh: &TriMesh, grid: &Grid) -> Voxelization {
    let spans = row_spans(mesh, grid);
    let mut data = vec![0.0; grid.len()];
    for s in &spans {
        data[s.range()].fill(1.0);
    }
    Voxelization {
        mask: Volume3D::new(*grid, VolumeKind::Mask, data).expect("mask built on a valid grid"),
        empty: spans.is_empty(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::tests::box_mesh;
    use crate::geometry::{triangulate_reference, PointCloud, Vec3};

    /// Brute-force inside test: count crossings of a generic ray from `p`
    /// with every face (Möller–Trumbore).
    fn brute_inside(mesh: &TriMesh, p: Vec3) -> bool {
        let pts = mesh.cloud().points();
        let dir = Vec3::new(1.0, 2f64.sqrt() * 1e-3, 3f64.sqrt() * 1e-3);
        let mut count = 0;
        for &[a, b, c] in mesh.faces() {
            let (v0, v1, v2) = (pts[a], pts[b], pts[c]);
            let e1 = v1 - v0;
            let e2 = v2 - v0;
            let h = dir.cross(&e2);
            let det = e1.dot(&h);
            if det.abs() < 1e-14 {
                continue;
            }
            let f = 1.0 / det;
            let s = p - v0;
            let u = f * s.dot(&h);
            let q = s.cross(&e1);
            let v = f * dir.dot(&q);
            if u < 0.0 || v < 0.0 || u + v > 1.0 {
                continue;
            }
            if f * e2.dot(&q) > 0.0 {
                count += 1;
            }
        }
        count % 2 == 1
    }

    #[test]
    fn unit_cube_on_half_mm_grid_has_eight_voxels() {
        let mesh = box_mesh([-0.5; 3], [0.5; 3]);
        let grid = Grid::centered([8, 8, 8], [0.5; 3], [0.0; 3]).unwrap();
        let vox = voxelize(&mesh, &grid);
        assert_eq!(vox.mask.count_nonzero(), 8);
        let mut brute = 0;
        for idx in 0..grid.len() {
            let [i, j, k] = grid.ijk(idx);
            let inside = brute_inside(&mesh, Vec3::from(grid.center(i, j, k)));
            brute += inside as usize;
            assert_eq!(inside, vox.mask.data()[idx] == 1.0, "voxel {i},{j},{k}");
        }
        assert_eq!(brute, 8);
    }

    #[test]
    fn vertices_on_voxel_centers_keep_parity() {
        // Box corners land exactly on voxel centers and faces pass through center rows.
        let mesh = box_mesh([-1.0; 3], [1.0; 3]);
        let grid = Grid::centered([9, 9, 9], [0.5; 3], [0.0; 3]).unwrap();
        let vox = voxelize(&mesh, &grid);
        let n = vox.mask.count_nonzero();
        // Every row either fully covers the open interior or not; no odd leaks.
        for k in 0..9 {
            for j in 0..9 {
                let row: Vec<f64> = (0..9).map(|i| vox.mask.get(i, j, k)).collect();
                assert_eq!(row[0], 0.0);
                assert_eq!(row[8], 0.0);
            }
        }
        assert!((27..=125).contains(&n), "{n}");
    }

    fn icosphere(radius: f64, subdivisions: usize) -> TriMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut v: Vec<Vec3> = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .iter()
        .map(|p| Vec3::from(*p).normalize())
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut cache = std::collections::HashMap::new();
            let mut mid = |a: usize, b: usize, v: &mut Vec<Vec3>| {
                *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    v.push(((v[a] + v[b]) / 2.0).normalize());
                    v.len() - 1
                })
            };
            let mut next = Vec::new();
            for [a, b, c] in faces {
                let ab = mid(a, b, &mut v);
                let bc = mid(b, c, &mut v);
                let ca = mid(c, a, &mut v);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        let cloud = PointCloud::new(v.into_iter().map(|p| p * radius).collect()).unwrap();
        TriMesh::new(cloud, faces).unwrap()
    }

    #[test]
    fn icosphere_volume_within_two_percent() {
        let mesh = icosphere(10.0, 4);
        let grid = Grid::centered([90, 90, 90], [0.25; 3], [0.0; 3]).unwrap();
        let vox = voxelize(&mesh, &grid);
        let vol = vox.mask.count_nonzero() as f64 * grid.voxel_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
        assert!((vol - exact).abs() / exact < 0.02, "{vol} vs {exact}");
    }

    #[test]
    fn voxel_volume_converges_to_mesh_volume() {
        let mesh = icosphere(7.3, 3);
        let target = mesh.signed_volume();
        let err = |h: f64| {
            let n = (17.0 / h).ceil() as usize;
            let grid = Grid::centered([n, n, n], [h; 3], [0.113, -0.071, 0.037]).unwrap();
            let v = voxelize(&mesh, &grid).mask.count_nonzero() as f64 * grid.voxel_volume();
            (v - target).abs()
        };
        let coarse = err(0.8);
        let fine = err(0.2);
        assert!(fine <= coarse / 2.0, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn matches_brute_force_on_rotated_sphere() {
        let mesh = icosphere(4.0, 2);
        let xf = crate::geometry::RigidTransform::new([0.3, -0.2, 0.1], [0.4, 0.2, -0.3]);
        let cloud = crate::geometry::apply_rigid(mesh.cloud(), &xf).unwrap();
        let mesh = TriMesh::with_topology(cloud, mesh.topology()).unwrap();
        let grid = Grid::centered([24, 24, 24], [0.4; 3], [0.0; 3]).unwrap();
        let vox = voxelize(&mesh, &grid);
        for idx in 0..grid.len() {
            let [i, j, k] = grid.ijk(idx);
            let inside = brute_inside(&mesh, Vec3::from(grid.center(i, j, k)));
            assert_eq!(inside, vox.mask.data()[idx] == 1.0);
        }
    }

    #[test]
    fn off_grid_mesh_is_flagged_empty() {
        let mesh = box_mesh([100.0; 3], [101.0; 3]);
        let grid = Grid::centered([8, 8, 8], [0.5; 3], [0.0; 3]).unwrap();
        let vox = voxelize(&mesh, &grid);
        assert!(vox.empty);
        assert_eq!(vox.mask.count_nonzero(), 0);
    }

    #[test]
    fn star_cloud_triangulation_voxelizes() {
        let pts: Vec<Vec3> = (0..300)
            .map(|i| {
                let t = i as f64 * 2.399963;
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / 300.0;
                let r = (1.0 - z * z).sqrt();
                Vec3::new(6.0 * r * t.cos(), 5.0 * r * t.sin(), 4.0 * z)
            })
            .collect();
        let mesh = triangulate_reference(&PointCloud::new(pts).unwrap()).unwrap();
        let grid = Grid::centered([40, 40, 40], [0.4; 3], [0.0; 3]).unwrap();
        let v = voxelize(&mesh, &grid).mask.count_nonzero() as f64 * grid.voxel_volume();
        let target = mesh.signed_volume();
        assert!((v - target).abs() / target < 0.05);
    }
}
