use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use shapefit::cpd::{establish_correspondence_detailed, CpdConfig};
use shapefit::dataio::{read_cloud, read_volume, write_atomic, write_volume, PipelineConfig};
use shapefit::fitter::fit;
use shapefit::geometry::{triangulate_reference, PointCloud, Topology};
use shapefit::metrics::{regional_jaccard, tabulate, RegionalScore};
use shapefit::ssm::build_model;
use shapefit::{Error, Result};

use crate::cmd::build_ssm::snapshot;
use crate::manifest::{create_dir, list_dirs, list_files, write_json, RunManifest};
use crate::pipeline::check_population;

/// Leave-one-case-out evaluation over a directory of cases.
///
/// Each case directory holds `clouds/*.csv`, `maps/*.sfv` and `truth/*.sfv`
/// with matching map and truth names.
#[derive(Debug, Args)]
pub struct Loo {
    /// Directory of case subdirectories, as written by `synth`.
    #[arg(long)]
    cases: PathBuf,
    /// Pipeline settings (JSON); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for predictions, scores and summaries.
    #[arg(long)]
    out: PathBuf,
}

struct Case {
    id: String,
    dir: PathBuf,
    clouds: Vec<PathBuf>,
    maps: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct FoldReport {
    case_id: String,
    reference: Option<PathBuf>,
    n_training: usize,
    n_modes: usize,
    excluded_training: Vec<String>,
    volumes: usize,
    seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn discover(root: &Path) -> Result<Vec<Case>> {
    let mut cases = Vec::new();
    for dir in list_dirs(root)? {
        let clouds_dir = dir.join("clouds");
        let maps_dir = dir.join("maps");
        if !clouds_dir.is_dir() || !maps_dir.is_dir() {
            continue;
        }
        cases.push(Case {
            id: dir.file_name().unwrap().to_string_lossy().into_owned(),
            clouds: list_files(&clouds_dir, "csv")?,
            maps: list_files(&maps_dir, "sfv")?,
            dir,
        });
    }
    if cases.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-out needs at least 2 cases with clouds/ and maps/, found {} under {}",
            cases.len(),
            root.display()
        )));
    }
    Ok(cases)
}

/// Every cloud registered to one reference; failures are kept per file.
struct Registered {
    topology: Topology,
    clouds: BTreeMap<PathBuf, std::result::Result<PointCloud, String>>,
}

fn register_all(reference: &Path, files: &[&PathBuf], cpd: &CpdConfig) -> Result<Registered> {
    let ref_cloud = read_cloud(reference)?;
    let topology = triangulate_reference(&ref_cloud)
        .map_err(|e| e.in_file(reference))?
        .topology()
        .clone();
    let clouds = files
        .par_iter()
        .map(|f| {
            let r = read_cloud(f).and_then(|c| {
                establish_correspondence_detailed(&ref_cloud, std::slice::from_ref(&c), cpd)
                    .map(|mut v| v.remove(0).cloud)
            });
            ((*f).clone(), r.map_err(|e| e.root().to_string()))
        })
        .collect();
    Ok(Registered { topology, clouds })
}

impl Loo {
    pub fn run(self) -> Result<()> {
        let mut manifest = RunManifest::new("loo");
        let cfg = crate::load_config(self.config.as_deref(), &mut manifest)?;
        cfg.validate()?;
        manifest.seed = Some(cfg.fit.seed);
        manifest.config = snapshot(&cfg);
        let cases = discover(&self.cases)?;
        let all_clouds: Vec<&PathBuf> = cases.iter().flat_map(|c| &c.clouds).collect();
        for f in &all_clouds {
            manifest.input(f)?;
        }
        create_dir(&self.out)?;

        let mut registered: BTreeMap<PathBuf, Registered> = BTreeMap::new();
        let mut scores: Vec<(String, String, RegionalScore)> = Vec::new();
        let mut folds = Vec::new();
        for (i, case) in cases.iter().enumerate() {
            let start = std::time::Instant::now();
            let mut fold = FoldReport {
                case_id: case.id.clone(),
                reference: None,
                n_training: 0,
                n_modes: 0,
                excluded_training: Vec::new(),
                volumes: 0,
                seconds: 0.0,
                error: None,
            };
            let outcome = self.run_fold(i, &cases, &all_clouds, &cfg, &mut registered, &mut fold);
            fold.seconds = start.elapsed().as_secs_f64();
            match outcome {
                Ok(case_scores) => {
                    fold.volumes = case_scores.len();
                    for (vol, s) in case_scores {
                        println!(
                            "{} {}: JSC {:.2} (apex {:.2}, mid-gland {:.2}, base {:.2})",
                            case.id, vol, s.overall, s.apex, s.midgland, s.base
                        );
                        scores.push((case.id.clone(), vol, s));
                    }
                }
                Err(e) => {
                    eprintln!("{}: {e}", case.id);
                    fold.error = Some(e.to_string());
                }
            }
            folds.push(fold);
        }
        manifest.timings = folds
            .iter()
            .map(|f| crate::manifest::StageTiming {
                stage: format!("fold {}", f.case_id),
                seconds: f.seconds,
            })
            .collect();

        let folds_path = self.out.join("folds.json");
        write_json(&folds_path, &folds)?;
        manifest.outputs.push(folds_path);
        if !scores.is_empty() {
            let mut csv = String::from("case_id,volume,overall,apex,midgland,base\n");
            for (c, v, s) in &scores {
                let _ = writeln!(
                    csv,
                    "{c},{v},{:.6},{:.6},{:.6},{:.6}",
                    s.overall, s.apex, s.midgland, s.base
                );
            }
            let by_case: Vec<(String, RegionalScore)> =
                scores.iter().map(|(c, _, s)| (c.clone(), *s)).collect();
            let summary = tabulate(&by_case)?;
            let paths = ["scores.csv", "summary.csv", "summary.txt"].map(|n| self.out.join(n));
            write_atomic(&paths[0], csv.as_bytes())?;
            write_atomic(&paths[1], summary.to_csv().as_bytes())?;
            write_atomic(&paths[2], summary.to_text().as_bytes())?;
            manifest.outputs.extend(paths);
            print!("{}", summary.to_text());
        }
        let failed: Vec<&FoldReport> = folds.iter().filter(|f| f.error.is_some()).collect();
        manifest.details = serde_json::json!({
            "cases": cases.len(),
            "failed_cases": failed.iter().map(|f| &f.case_id).collect::<Vec<_>>(),
        });
        manifest.write(&self.out.join("manifest.json"))?;
        if !failed.is_empty() {
            let ids: Vec<&str> = failed.iter().map(|f| f.case_id.as_str()).collect();
            return Err(Error::Numerical(format!(
                "{} of {} cases failed: {}",
                failed.len(),
                cases.len(),
                ids.join(", ")
            )));
        }
        Ok(())
    }

    fn run_fold(
        &self,
        held_out: usize,
        cases: &[Case],
        all_clouds: &[&PathBuf],
        cfg: &PipelineConfig,
        registered: &mut BTreeMap<PathBuf, Registered>,
        fold: &mut FoldReport,
    ) -> Result<Vec<(String, RegionalScore)>> {
        let case = &cases[held_out];
        let training: Vec<&PathBuf> = cases
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != held_out)
            .flat_map(|(_, c)| &c.clouds)
            .collect();
        let reference = (*training.first().ok_or_else(|| {
            Error::InvalidArgument("no training clouds outside the held-out case".into())
        })?)
        .clone();
        fold.reference = Some(reference.clone());
        if !registered.contains_key(&reference) {
            let reg = register_all(&reference, all_clouds, &cfg.cpd)?;
            registered.insert(reference.clone(), reg);
        }
        let reg = &registered[&reference];
        let mut population = Vec::with_capacity(training.len());
        for f in &training {
            match &reg.clouds[*f] {
                Ok(c) => population.push(c.clone()),
                Err(e) => fold.excluded_training.push(format!("{}: {e}", f.display())),
            }
        }
        check_population(population.len())?;
        let model = build_model(&population, cfg.ssm.variance_target)?
            .with_topology(reg.topology.clone())?;
        fold.n_training = model.n_training();
        fold.n_modes = model.n_modes();

        let pred_dir = self.out.join("pred").join(&case.id);
        create_dir(&pred_dir)?;
        let mut out = Vec::with_capacity(case.maps.len());
        for map_path in &case.maps {
            let name = map_path.file_name().unwrap();
            let truth_path = case.dir.join("truth").join(name);
            let map = read_volume(map_path)?;
            let truth = read_volume(&truth_path)?;
            let result = fit(&model, &map, &cfg.fit).map_err(|e| e.in_file(map_path))?;
            write_volume(pred_dir.join(name), &result.mask)?;
            let s = regional_jaccard(&result.mask, &truth, &cfg.metrics)
                .map_err(|e| e.in_file(&truth_path))?;
            out.push((
                map_path.file_stem().unwrap().to_string_lossy().into_owned(),
                s,
            ));
        }
        Ok(out)
    }
}
