use std::path::PathBuf;

use clap::Args;
use shapefit::dataio::{write_model, PipelineConfig};
use shapefit::Result;

use crate::manifest::{list_files, write_json, RunManifest};
use crate::pipeline::build_from_clouds;

/// Build a shape model from a directory of surface point clouds.
#[derive(Debug, Args)]
pub struct BuildSsm {
    /// Directory of `x,y,z` CSV point clouds.
    #[arg(long)]
    clouds: PathBuf,
    /// Cloud whose points and triangulation every member is mapped onto.
    #[arg(long)]
    reference: PathBuf,
    /// Fraction of variance the retained modes must explain.
    #[arg(long)]
    variance: Option<f64>,
    /// Pipeline settings (JSON); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

impl BuildSsm {
    pub fn run(self) -> Result<()> {
        let mut manifest = RunManifest::new("build-ssm");
        let mut cfg = crate::load_config(self.config.as_deref(), &mut manifest)?;
        if let Some(v) = self.variance {
            cfg.ssm.variance_target = v;
        }
        cfg.validate()?;
        let files = list_files(&self.clouds, "csv")?;
        manifest.input(&self.reference)?;
        for f in &files {
            manifest.input(f)?;
        }
        let (model, report) = manifest.time("correspondence+pca", || {
            build_from_clouds(&self.reference, &files, &cfg.cpd, cfg.ssm.variance_target)
        })?;
        write_model(&self.out, &model)?;
        let report_path = self.out.with_extension("report.json");
        write_json(&report_path, &report)?;
        manifest.config = snapshot(&cfg);
        manifest.outputs = vec![self.out.clone(), report_path];
        manifest.details = serde_json::json!({
            "n_training": model.n_training(),
            "n_modes": model.n_modes(),
            "explained_fraction": model.explained_fraction(),
        });
        manifest.write(&self.out.with_extension("manifest.json"))?;
        println!(
            "model: {} shapes, {} points, {} modes explaining {:.2}% of variance -> {}",
            model.n_training(),
            model.n_points(),
            model.n_modes(),
            100.0 * model.explained_fraction(),
            self.out.display()
        );
        Ok(())
    }
}

pub fn snapshot(cfg: &PipelineConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}
