//! Model building shared by `build-ssm` and `loo`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use shapefit::cpd::{establish_correspondence_detailed, CpdConfig};
use shapefit::dataio::read_cloud;
use shapefit::geometry::{triangulate_reference, PointCloud, Topology};
use shapefit::ssm::{build_model, ShapeModel};
use shapefit::{Error, Result};

/// Registration diagnostics for one population member.
#[derive(Debug, Serialize)]
pub struct MemberReport {
    pub file: PathBuf,
    pub rigid_scale: f64,
    pub rigid_sigma2: f64,
    pub rigid_iters: usize,
    pub nonrigid_sigma2: f64,
    pub nonrigid_iters: usize,
    pub converged: bool,
}

#[derive(Debug, Serialize)]
pub struct CorrespondenceReport {
    pub reference: PathBuf,
    pub members: Vec<MemberReport>,
    pub n_modes: usize,
    pub explained_fraction: f64,
    pub explained_curve: Vec<f64>,
}

pub fn read_clouds(files: &[PathBuf]) -> Result<Vec<PointCloud>> {
    let (ok, failed): (Vec<_>, Vec<_>) = files.iter().map(read_cloud).partition(Result::is_ok);
    if !failed.is_empty() {
        let msgs: Vec<String> = failed
            .into_iter()
            .map(|e| e.unwrap_err().to_string())
            .collect();
        return Err(Error::Format(format!(
            "{} cloud file(s) could not be read:\n  {}",
            msgs.len(),
            msgs.join("\n  ")
        )));
    }
    Ok(ok.into_iter().map(Result::unwrap).collect())
}

/// Reference triangulation, per-member diagnostics and corresponded clouds.
pub struct Correspondence {
    pub topology: Topology,
    pub members: Vec<MemberReport>,
    pub clouds: Vec<PointCloud>,
}

/// Map every cloud onto the reference. All per-file failures are reported
/// together, each with its file name.
pub fn correspond_files(
    reference_path: &Path,
    files: &[PathBuf],
    cpd: &CpdConfig,
) -> Result<Correspondence> {
    let reference = read_cloud(reference_path)?;
    let topology = triangulate_reference(&reference)
        .map_err(|e| e.in_file(reference_path))?
        .topology()
        .clone();
    let clouds = read_clouds(files)?;
    let results: Vec<Result<_>> = clouds
        .par_iter()
        .zip(files)
        .map(|(c, f)| {
            establish_correspondence_detailed(&reference, std::slice::from_ref(c), cpd)
                .map(|mut v| v.remove(0))
                .map_err(|e| match e {
                    Error::Member { source, .. } => source.in_file(f),
                    other => other.in_file(f),
                })
        })
        .collect();
    let failures: Vec<&Error> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    if !failures.is_empty() {
        let numerical = failures.iter().all(|e| e.is_numerical());
        let lines: Vec<String> = failures.iter().map(|e| e.to_string()).collect();
        let msg = format!(
            "correspondence failed for {} file(s):\n  {}",
            lines.len(),
            lines.join("\n  ")
        );
        return Err(if numerical {
            Error::Numerical(msg)
        } else {
            Error::InvalidArgument(msg)
        });
    }
    let mut members = Vec::with_capacity(files.len());
    let mut out = Vec::with_capacity(files.len());
    for (m, f) in results.into_iter().map(Result::unwrap).zip(files) {
        members.push(MemberReport {
            file: f.clone(),
            rigid_scale: m.rigid.scale,
            rigid_sigma2: m.rigid.sigma2,
            rigid_iters: m.rigid.iters,
            nonrigid_sigma2: m.nonrigid_sigma2,
            nonrigid_iters: m.nonrigid_iters,
            converged: m.rigid.converged && m.nonrigid_converged,
        });
        out.push(m.cloud);
    }
    Ok(Correspondence {
        topology,
        members,
        clouds: out,
    })
}

pub fn check_population(n: usize) -> Result<()> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 training shapes to build a model, found {n}"
        )));
    }
    Ok(())
}

pub fn build_from_clouds(
    reference_path: &Path,
    files: &[PathBuf],
    cpd: &CpdConfig,
    variance: f64,
) -> Result<(ShapeModel, CorrespondenceReport)> {
    check_population(files.len())?;
    let corr = correspond_files(reference_path, files, cpd)?;
    let model = build_model(&corr.clouds, variance)?.with_topology(corr.topology)?;
    let report = CorrespondenceReport {
        reference: reference_path.to_path_buf(),
        members: corr.members,
        n_modes: model.n_modes(),
        explained_fraction: model.explained_fraction(),
        explained_curve: model.explained_curve(),
    };
    Ok((model, report))
}
