use std::path::{Path, PathBuf};

use clap::Args;
use shapefit::dataio::{read_volume, write_atomic};
use shapefit::metrics::{regional_jaccard, scores_to_csv, tabulate, Axis, RegionalScore};
use shapefit::{Error, Result};

use crate::manifest::{list_dirs, list_files};

/// Score predicted masks against ground truth.
#[derive(Debug, Args)]
pub struct Eval {
    /// Directory of predicted masks, mirroring the truth layout or holding
    /// `<case>/<volume>.sfv`.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of truth masks: `*.sfv` files, or case subdirectories of them.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value = "z")]
    axis: Axis,
    /// Apex occupies the high end of the axis instead of the low end.
    #[arg(long)]
    apex_high: bool,
    /// Per-volume CSV; the summary goes next to it as `<stem>_summary.csv`.
    #[arg(long)]
    out: PathBuf,
}

/// `(case id, relative path)` of every truth volume.
fn truth_volumes(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = list_files(root, "sfv")?
        .into_iter()
        .map(|p| {
            let stem = p.file_stem().unwrap().to_string_lossy().into_owned();
            (stem, PathBuf::from(p.file_name().unwrap()))
        })
        .collect();
    for dir in list_dirs(root)? {
        let case = dir.file_name().unwrap().to_string_lossy().into_owned();
        let mut files = list_files(&dir, "sfv")?;
        let nested = dir.join("truth");
        if files.is_empty() && nested.is_dir() {
            files = list_files(&nested, "sfv")?;
        }
        for f in files {
            out.push((case.clone(), f.strip_prefix(root).unwrap().to_path_buf()));
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .sfv volumes under {}",
            root.display()
        )));
    }
    Ok(out)
}

/// `<pred>/<rel>` when it exists, else `<pred>/<case>/<file name>`, the
/// layout written by `loo`.
fn pred_path_for(pred: &Path, case: &str, rel: &Path) -> PathBuf {
    let mirrored = pred.join(rel);
    if mirrored.exists() || rel.parent().is_none_or(|p| p.as_os_str().is_empty()) {
        return mirrored;
    }
    let flat = pred.join(case).join(rel.file_name().unwrap());
    if flat.exists() {
        flat
    } else {
        mirrored
    }
}

impl Eval {
    pub fn run(self) -> Result<()> {
        let cfg = shapefit::metrics::RegionConfig {
            axis: self.axis,
            apex_at_low_end: !self.apex_high,
        };
        let mut scores: Vec<(String, RegionalScore)> = Vec::new();
        for (case, rel) in truth_volumes(&self.truth)? {
            let truth = read_volume(self.truth.join(&rel))?;
            let pred_path = pred_path_for(&self.pred, &case, &rel);
            let pred = read_volume(&pred_path)?;
            let s = regional_jaccard(&pred, &truth, &cfg).map_err(|e| e.in_file(&pred_path))?;
            scores.push((case, s));
        }
        let summary = tabulate(&scores)?;
        if let Some(dir) = self.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            crate::manifest::create_dir(dir)?;
        }
        write_atomic(&self.out, scores_to_csv(&scores).as_bytes())?;
        let stem = self
            .out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "table".into());
        let summary_path = self.out.with_file_name(format!("{stem}_summary.csv"));
        write_atomic(&summary_path, summary.to_csv().as_bytes())?;
        print!("{}", summary.to_text());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_truth_files_and_matching_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for p in [
            "truth/a.sfv",
            "truth/case_1/v0.sfv",
            "truth/case_2/truth/v0.sfv",
            "pred/case_2/v0.sfv",
        ] {
            std::fs::create_dir_all(root.join(p).parent().unwrap()).unwrap();
            std::fs::write(root.join(p), b"").unwrap();
        }
        let found = truth_volumes(&root.join("truth")).unwrap();
        let ids: Vec<&str> = found.iter().map(|(c, _)| c.as_str()).collect();
        assert_eq!(ids, ["a", "case_1", "case_2"]);
        let pred = root.join("pred");
        assert_eq!(
            pred_path_for(&pred, "a", Path::new("a.sfv")),
            pred.join("a.sfv")
        );
        assert_eq!(
            pred_path_for(&pred, "case_2", &found[2].1),
            pred.join("case_2/v0.sfv")
        );
        assert_eq!(
            pred_path_for(&pred, "case_1", &found[1].1),
            pred.join("case_1/v0.sfv")
        );
    }
}
