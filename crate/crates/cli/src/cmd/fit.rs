use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use shapefit::dataio::{read_model, read_volume, write_volume};
use shapefit::fitter::{fit, FitParams};
use shapefit::metrics::{dice, regional_jaccard, RegionalScore};
use shapefit::Result;

use crate::cmd::build_ssm::snapshot;
use crate::manifest::{create_dir, write_json, RunManifest};
use crate::overlay::write_overlays;

/// Fit a shape model to a probability map.
#[derive(Debug, Args)]
pub struct Fit {
    /// Shape model written by `build-ssm`.
    #[arg(long)]
    model: PathBuf,
    /// Probability map (`SFV1`, kind probability).
    #[arg(long)]
    map: PathBuf,
    /// Pipeline settings (JSON); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the swarm seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Ground-truth mask to score the result against.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write per-slice PGM overlays to `<out>/overlay`.
    #[arg(long)]
    overlay: bool,
}

#[derive(Debug, Serialize)]
struct FitSummary {
    utility: f64,
    iterations: usize,
    evaluations: usize,
    converged: bool,
    out_of_grid: bool,
    non_finite_evaluations: usize,
    mask_voxels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    jaccard: Option<RegionalScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dice: Option<f64>,
}

impl Fit {
    pub fn run(self) -> Result<()> {
        let mut manifest = RunManifest::new("fit");
        let mut cfg = crate::load_config(self.config.as_deref(), &mut manifest)?;
        if let Some(s) = self.seed {
            cfg.fit.seed = s;
        }
        cfg.validate()?;
        manifest.seed = Some(cfg.fit.seed);
        manifest.input(&self.model)?;
        manifest.input(&self.map)?;
        let model = read_model(&self.model)?;
        let map = read_volume(&self.map)?;
        let truth = match &self.truth {
            Some(p) => {
                manifest.input(p)?;
                Some(read_volume(p)?)
            }
            None => None,
        };
        let result = manifest.time("fit", || fit(&model, &map, &cfg.fit))?;

        create_dir(&self.out)?;
        let mask_path = self.out.join("mask.sfv");
        let params_path = self.out.join("params.json");
        let trace_path = self.out.join("trace.csv");
        let summary_path = self.out.join("summary.json");
        write_volume(&mask_path, &result.mask)?;
        write_json(&params_path, &ParamsFile::new(&result.params, &model))?;
        let mut trace = String::from("iteration,best_utility\n");
        for (i, u) in result.trace.iter().enumerate() {
            trace.push_str(&format!("{i},{u:?}\n"));
        }
        shapefit::dataio::write_atomic(&trace_path, trace.as_bytes())?;

        let (jaccard, dsc) = match &truth {
            Some(t) => (
                Some(regional_jaccard(&result.mask, t, &cfg.metrics)?),
                Some(dice(&result.mask, t)?),
            ),
            None => (None, None),
        };
        let summary = FitSummary {
            utility: result.utility,
            iterations: result.iterations,
            evaluations: result.evaluations,
            converged: result.converged,
            out_of_grid: result.out_of_grid,
            non_finite_evaluations: result.non_finite,
            mask_voxels: result.mask.count_nonzero(),
            jaccard,
            dice: dsc,
        };
        write_json(&summary_path, &summary)?;
        manifest.outputs = vec![mask_path, params_path, trace_path, summary_path];
        if self.overlay {
            let dir = self.out.join("overlay");
            create_dir(&dir)?;
            let n = manifest.time("overlay", || {
                write_overlays(&dir, &map, &result.mask, truth.as_ref())
            })?;
            manifest.outputs.push(dir);
            println!("wrote {n} overlay slices");
        }
        manifest.config = snapshot(&cfg);
        manifest.write(&self.out.join("manifest.json"))?;

        print!(
            "utility {:.4} after {} iterations",
            result.utility, result.iterations
        );
        if let Some(j) = jaccard {
            print!(
                "; JSC overall {:.2} apex {:.2} mid-gland {:.2} base {:.2}",
                j.overall, j.apex, j.midgland, j.base
            );
        }
        println!();
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct ParamsFile<'a> {
    #[serde(flatten)]
    params: &'a FitParams,
    /// The same pose as a transform of model coordinates.
    world_transform: shapefit::geometry::RigidTransform,
}

impl<'a> ParamsFile<'a> {
    fn new(params: &'a FitParams, model: &shapefit::ssm::ShapeModel) -> Self {
        ParamsFile {
            params,
            world_transform: params.world_transform(model),
        }
    }
}
