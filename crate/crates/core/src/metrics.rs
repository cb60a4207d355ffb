//! Overlap scores between binary masks, an apex/mid-gland/base breakdown,
//! and per-case summary tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Volume3D, VolumeKind};

fn check_pair(a: &Volume3D, b: &Volume3D) -> Result<()> {
    a.require_kind(VolumeKind::Mask)?;
    b.require_kind(VolumeKind::Mask)?;
    if !a.grid().same_lattice(b.grid()) {
        return Err(Error::GridMismatch(format!(
            "masks live on different grids: {:?} vs {:?}",
            a.grid(),
            b.grid()
        )));
    }
    Ok(())
}

/// (|a ∩ b|, |a|, |b|) over voxels selected by `keep`.
fn counts(a: &Volume3D, b: &Volume3D, keep: impl Fn(usize) -> bool) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut na = 0;
    let mut nb = 0;
    for (idx, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        if !keep(idx) {
            continue;
        }
        let (x, y) = (x != 0.0, y != 0.0);
        inter += (x && y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    (inter, na, nb)
}

fn jaccard_from(inter: usize, na: usize, nb: usize) -> f64 {
    let union = na + nb - inter;
    if union == 0 {
        100.0
    } else {
        100.0 * inter as f64 / union as f64
    }
}

/// Jaccard similarity in percent; 100 when both masks are empty.
pub fn jaccard(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    check_pair(a, b)?;
    let (i, na, nb) = counts(a, b, |_| true);
    Ok(jaccard_from(i, na, nb))
}

/// Dice coefficient in percent; 100 when both masks are empty.
pub fn dice(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    check_pair(a, b)?;
    let (i, na, nb) = counts(a, b, |_| true);
    Ok(if na + nb == 0 {
        100.0
    } else {
        200.0 * i as f64 / (na + nb) as f64
    })
}

/// Grid axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    #[default]
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(Error::invalid(format!(
                "unknown axis {s:?}; expected x, y or z"
            ))),
        }
    }
}

/// How the ground-truth extent is split into regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    pub axis: Axis,
    /// Apex occupies the low-coordinate third; otherwise the high one.
    pub apex_at_low_end: bool,
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig {
            axis: Axis::Z,
            apex_at_low_end: true,
        }
    }
}

/// Jaccard scores (percent) overall and per region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionalScore {
    pub overall: f64,
    pub apex: f64,
    pub midgland: f64,
    pub base: f64,
}

impl RegionalScore {
    pub fn as_array(&self) -> [f64; 4] {
        [self.overall, self.apex, self.midgland, self.base]
    }
}

/// Band (0 = low, 1 = middle, 2 = high) of every slice along the axis.
///
/// The truth's extent, from the outer face of its first slice to the outer
/// face of its last, is cut into three equal lengths and each slice goes to
/// the band holding its center. Slices beyond the extent join the nearest
/// end band, so predictions overshooting the truth count against that region.
pub fn region_bands(truth: &Volume3D, axis: Axis) -> Result<Vec<u8>> {
    truth.require_kind(VolumeKind::Mask)?;
    let grid = truth.grid();
    let a = axis.index();
    let n = grid.dims[a];
    let mut lo = usize::MAX;
    let mut hi = 0;
    for (idx, &v) in truth.data().iter().enumerate() {
        if v != 0.0 {
            let s = grid.ijk(idx)[a];
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    if lo == usize::MAX {
        return Err(Error::invalid(
            "ground-truth mask is empty; regions are undefined",
        ));
    }
    let len = (hi - lo + 1) as f64;
    Ok((0..n)
        .map(|s| {
            if s < lo {
                0
            } else if s > hi {
                2
            } else {
                ((3.0 * ((s - lo) as f64 + 0.5) / len).floor() as u8).min(2)
            }
        })
        .collect())
}

/// Overall Jaccard plus one per third of the truth's extent along the axis.
pub fn regional_jaccard(
    pred: &Volume3D,
    truth: &Volume3D,
    cfg: &RegionConfig,
) -> Result<RegionalScore> {
    check_pair(pred, truth)?;
    let bands = region_bands(truth, cfg.axis)?;
    let grid = truth.grid();
    let a = cfg.axis.index();
    let band_score = |band: u8| {
        let (i, np, nt) = counts(pred, truth, |idx| bands[grid.ijk(idx)[a]] == band);
        jaccard_from(i, np, nt)
    };
    let (i, np, nt) = counts(pred, truth, |_| true);
    let (low, high) = (band_score(0), band_score(2));
    let (apex, base) = if cfg.apex_at_low_end {
        (low, high)
    } else {
        (high, low)
    };
    Ok(RegionalScore {
        overall: jaccard_from(i, np, nt),
        apex,
        midgland: band_score(1),
        base,
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
        }
    }
}

/// One summary row: statistics of each score column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub n: usize,
    pub overall: Stat,
    pub apex: Stat,
    pub midgland: Stat,
    pub base: Stat,
}

impl SummaryRow {
    fn from_scores(label: String, scores: &[RegionalScore]) -> Self {
        let col =
            |f: fn(&RegionalScore) -> f64| Stat::of(&scores.iter().map(f).collect::<Vec<_>>());
        SummaryRow {
            label,
            n: scores.len(),
            overall: col(|s| s.overall),
            apex: col(|s| s.apex),
            midgland: col(|s| s.midgland),
            base: col(|s| s.base),
        }
    }

    fn stats(&self) -> [Stat; 4] {
        [self.overall, self.apex, self.midgland, self.base]
    }
}

/// Per-case rows plus totals over all volumes and over case means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cases: Vec<SummaryRow>,
    /// Statistics over every volume.
    pub total: SummaryRow,
    /// Statistics over the per-case means.
    pub total_of_cases: SummaryRow,
}

const COLUMNS: [&str; 4] = ["overall", "apex", "midgland", "base"];

/// Group per-volume scores by case id (in order of first appearance).
pub fn tabulate(results: &[(String, RegionalScore)]) -> Result<Summary> {
    if results.is_empty() {
        return Err(Error::invalid("no results to tabulate"));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<RegionalScore>> = BTreeMap::new();
    for (id, s) in results {
        groups
            .entry(id.as_str())
            .or_insert_with(|| {
                order.push(id.as_str());
                Vec::new()
            })
            .push(*s);
    }
    let cases: Vec<SummaryRow> = order
        .iter()
        .map(|id| SummaryRow::from_scores(id.to_string(), &groups[id]))
        .collect();
    let all: Vec<RegionalScore> = results.iter().map(|(_, s)| *s).collect();
    let means: Vec<RegionalScore> = cases
        .iter()
        .map(|r| RegionalScore {
            overall: r.overall.mean,
            apex: r.apex.mean,
            midgland: r.midgland.mean,
            base: r.base.mean,
        })
        .collect();
    Ok(Summary {
        total: SummaryRow::from_scores("total".into(), &all),
        total_of_cases: SummaryRow::from_scores("total_of_cases".into(), &means),
        cases,
    })
}

impl Summary {
    fn rows(&self) -> impl Iterator<Item = &SummaryRow> {
        self.cases.iter().chain([&self.total, &self.total_of_cases])
    }

    /// `case_id,n,overall_mean,overall_std,...` with one row per case and both totals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("case_id,n");
        for c in COLUMNS {
            let _ = write!(out, ",{c}_mean,{c}_std");
        }
        out.push('\n');
        for r in self.rows() {
            let _ = write!(out, "{},{}", r.label, r.n);
            for s in r.stats() {
                let _ = write!(out, ",{:.6},{:.6}", s.mean, s.std);
            }
            out.push('\n');
        }
        out
    }

    /// Aligned table with `mean ± std` cells.
    pub fn to_text(&self) -> String {
        let cell = |s: Stat| format!("{:.2} ± {:.2}", s.mean, s.std);
        let width = self
            .rows()
            .map(|r| r.label.chars().count())
            .max()
            .unwrap_or(0)
            .max(7);
        let mut out = format!("{:<width$}  {:>4}", "case", "n");
        for c in ["Overall", "Apex", "Mid-gland", "Base"] {
            let _ = write!(out, "  {c:>15}");
        }
        out.push('\n');
        for r in self.rows() {
            let _ = write!(out, "{:<width$}  {:>4}", r.label, r.n);
            for s in r.stats() {
                let _ = write!(out, "  {:>15}", cell(s));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-volume CSV: `case_id,overall,apex,midgland,base`.
pub fn scores_to_csv(results: &[(String, RegionalScore)]) -> String {
    let mut out = String::from("case_id,overall,apex,midgland,base\n");
    for (id, s) in results {
        let _ = writeln!(
            out,
            "{id},{:.6},{:.6},{:.6},{:.6}",
            s.overall, s.apex, s.midgland, s.base
        );
    }
    out
}
