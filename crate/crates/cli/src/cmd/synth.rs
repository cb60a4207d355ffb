use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use shapefit::dataio::{
    make_phantom, write_cloud, write_volume, PhantomConfig, PhantomSpec, PhantomTruth, ShapeSource,
};
use shapefit::{Error, Result};

use crate::manifest::{create_dir, write_json, RunManifest};

/// Generate synthetic cases with known ground truth.
///
/// Each case is one family shape; its volumes differ in placement and noise.
/// Layout: `<out>/case_XXX/{clouds/shape.csv, maps/, truth/, images/, params/}`.
#[derive(Debug, Args)]
pub struct Synth {
    /// Phantom settings (JSON); defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Number of cases.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Volumes per case, each with its own placement and noise.
    #[arg(long, default_value_t = 1)]
    volumes_per_case: usize,
    /// Overrides the seed in the phantom settings.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct VolumeParams<'a> {
    seed: u64,
    #[serde(flatten)]
    truth: &'a PhantomTruth,
    truth_voxels: usize,
}

impl Synth {
    pub fn run(self) -> Result<()> {
        let mut manifest = RunManifest::new("synth");
        let mut cfg = match &self.spec {
            Some(p) => {
                manifest.input(p)?;
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io(e).in_file(p))?;
                serde_json::from_str::<PhantomConfig>(&text)
                    .map_err(|e| Error::Json(e).in_file(p))?
            }
            None => PhantomConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        if self.n == 0 || self.volumes_per_case == 0 {
            return Err(Error::InvalidArgument(
                "--n and --volumes-per-case must be positive".into(),
            ));
        }
        manifest.seed = Some(cfg.seed);
        manifest.config = serde_json::to_value(&cfg)?;
        create_dir(&self.out)?;
        let start = std::time::Instant::now();
        for case in 0..self.n {
            let dir = self.out.join(format!("case_{case:03}"));
            for sub in ["clouds", "maps", "truth", "images", "params"] {
                create_dir(&dir.join(sub))?;
            }
            let mut source = ShapeSource::Family(cfg.family.clone());
            for vol in 0..self.volumes_per_case {
                let seed = cfg
                    .seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add((case * self.volumes_per_case + vol) as u64);
                let spec = PhantomSpec {
                    source: source.clone(),
                    config: PhantomConfig {
                        seed,
                        ..cfg.clone()
                    },
                };
                let p = make_phantom(&spec).map_err(|e| e.in_file(&dir))?;
                let shape = p.truth.family_shape.expect("family phantom");
                if vol == 0 {
                    write_cloud(dir.join("clouds/shape.csv"), &cfg.family.surface(&shape)?)?;
                    source = ShapeSource::FamilyMember(cfg.family.clone(), shape);
                }
                let name = format!("vol_{vol:03}");
                write_volume(dir.join(format!("maps/{name}.sfv")), &p.prob_map)?;
                write_volume(dir.join(format!("truth/{name}.sfv")), &p.truth_mask)?;
                write_volume(dir.join(format!("images/{name}.sfv")), &p.image)?;
                write_json(
                    &dir.join(format!("params/{name}.json")),
                    &VolumeParams {
                        seed,
                        truth: &p.truth,
                        truth_voxels: p.truth_mask.count_nonzero(),
                    },
                )?;
            }
            manifest.outputs.push(dir);
        }
        manifest.timings.push(crate::manifest::StageTiming {
            stage: "generate".into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        manifest.write(&self.out.join("manifest.json"))?;
        println!(
            "wrote {} cases x {} volumes to {}",
            self.n,
            self.volumes_per_case,
            self.out.display()
        );
        Ok(())
    }
}
