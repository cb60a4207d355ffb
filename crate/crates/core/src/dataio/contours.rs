//! Resampling of stacked planar contours into an ordered surface cloud.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

/// Closed polyline in a slice at height `z`; the first vertex is repeated last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceContour {
    pub points: Vec<[f64; 2]>,
    pub z: f64,
}

fn signed_area(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    (0..n)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

fn area_centroid(p: &[[f64; 2]], area: f64) -> [f64; 2] {
    let n = p.len();
    let mut c = [0.0; 2];
    for i in 0..n {
        let (a, b) = (p[i], p[(i + 1) % n]);
        let cross = a[0] * b[1] - b[0] * a[1];
        c[0] += (a[0] + b[0]) * cross;
        c[1] += (a[1] + b[1]) * cross;
    }
    [c[0] / (6.0 * area), c[1] / (6.0 * area)]
}

/// Counter-clockwise ring starting at the nearest crossing of the +x ray
/// from the area centroid.
fn canonical_ring(contour: &SliceContour, index: usize) -> Result<Vec<[f64; 2]>> {
    let pts = &contour.points;
    let err = |m: &str| Err(Error::invalid(format!("contour {index}: {m}")));
    if pts.len() < 4 {
        return err("needs at least three distinct vertices plus the closing vertex");
    }
    if pts.first() != pts.last() {
        return err("polyline is open; the last vertex must repeat the first");
    }
    if !contour.z.is_finite() || pts.iter().flatten().any(|v| !v.is_finite()) {
        return err("coordinates must be finite");
    }
    let mut ring: Vec<[f64; 2]> = pts[..pts.len() - 1].to_vec();
    ring.dedup();
    let mut area = signed_area(&ring);
    if area.abs() < 1e-12 {
        return err("polyline encloses no area");
    }
    if area < 0.0 {
        ring.reverse();
        area = -area;
    }
    let c = area_centroid(&ring, area);
    let n = ring.len();
    let mut best: Option<(f64, usize, [f64; 2])> = None;
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        let (ya, yb) = (a[1] - c[1], b[1] - c[1]);
        // Half-open rule so a crossing exactly at a vertex is counted once.
        if (ya <= 0.0) == (yb <= 0.0) {
            continue;
        }
        let t = ya / (ya - yb);
        let x = a[0] + t * (b[0] - a[0]);
        if x <= c[0] {
            continue;
        }
        if best.is_none_or(|(bx, _, _)| x - c[0] < bx) {
            best = Some((x - c[0], i, [x, c[1]]));
        }
    }
    let Some((_, edge, start)) = best else {
        return err("no boundary crossing on the +x side of the centroid");
    };
    let mut out = vec![start];
    for s in 1..=n {
        let v = ring[(edge + s) % n];
        if v != start {
            out.push(v);
        }
    }
    Ok(out)
}

/// `n` points equally spaced in arc length around a closed ring.
fn resample_ring(ring: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    let m = ring.len();
    let seg: Vec<f64> = (0..m)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % m]);
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .collect();
    let total: f64 = seg.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let mut walked = 0.0;
    for q in 0..n {
        let s = total * q as f64 / n as f64;
        while i + 1 < m && walked + seg[i] < s {
            walked += seg[i];
            i += 1;
        }
        let t = if seg[i] > 0.0 {
            ((s - walked) / seg[i]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (ring[i], ring[(i + 1) % m]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}

/// Resample each contour to `points_per_contour` points, equally spaced in
/// arc length, counter-clockwise from the +x crossing; slices are stacked in
/// input order.
pub fn resample_contours(
    contours: &[SliceContour],
    points_per_contour: usize,
) -> Result<PointCloud> {
    if contours.is_empty() {
        return Err(Error::invalid("no contours to resample"));
    }
    if points_per_contour < 3 {
        return Err(Error::invalid("need at least 3 points per contour"));
    }
    let mut pts = Vec::with_capacity(contours.len() * points_per_contour);
    for (idx, c) in contours.iter().enumerate() {
        let ring = canonical_ring(c, idx)?;
        pts.extend(
            resample_ring(&ring, points_per_contour)
                .into_iter()
                .map(|[x, y]| Vec3::new(x, y, c.z)),
        );
    }
    PointCloud::new(pts)
}
