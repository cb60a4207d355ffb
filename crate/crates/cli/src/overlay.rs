//! Per-slice PGM images of a probability map with mask outlines.

use std::path::Path;

use shapefit::dataio::write_atomic;
use shapefit::geometry::Volume3D;
use shapefit::Result;

/// Voxel on the boundary of `mask` within slice `k` (4-neighborhood).
fn is_edge(mask: &Volume3D, i: usize, j: usize, k: usize) -> bool {
    let [nx, ny, _] = mask.grid().dims;
    if mask.get(i, j, k) == 0.0 {
        return false;
    }
    i == 0
        || j == 0
        || i + 1 == nx
        || j + 1 == ny
        || mask.get(i - 1, j, k) == 0.0
        || mask.get(i + 1, j, k) == 0.0
        || mask.get(i, j - 1, k) == 0.0
        || mask.get(i, j + 1, k) == 0.0
}

/// One binary PGM per z slice touched by either mask: the map in gray,
/// predicted outline white, truth outline black. Returns the files written.
pub fn write_overlays(
    dir: &Path,
    map: &Volume3D,
    pred: &Volume3D,
    truth: Option<&Volume3D>,
) -> Result<usize> {
    let [nx, ny, nz] = map.grid().dims;
    let mut written = 0;
    for k in 0..nz {
        let touched = (0..ny).any(|j| {
            (0..nx)
                .any(|i| pred.get(i, j, k) != 0.0 || truth.is_some_and(|t| t.get(i, j, k) != 0.0))
        });
        if !touched {
            continue;
        }
        let mut img = format!("P5\n{nx} {ny}\n255\n").into_bytes();
        // Rows top to bottom with y increasing upward.
        for j in (0..ny).rev() {
            for i in 0..nx {
                let px = if is_edge(pred, i, j, k) {
                    255
                } else if truth.is_some_and(|t| is_edge(t, i, j, k)) {
                    0
                } else {
                    (40.0 + 160.0 * map.get(i, j, k).clamp(0.0, 1.0)).round() as u8
                };
                img.push(px);
            }
        }
        write_atomic(&dir.join(format!("slice_{k:04}.pgm")), &img)?;
        written += 1;
    }
    Ok(written)
}
