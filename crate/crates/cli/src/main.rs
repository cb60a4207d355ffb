//! `shapefit`: build shape models, fit them to probability maps, and score
//! the results.

mod cmd;
mod manifest;
mod overlay;
mod pipeline;

use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shapefit::dataio::PipelineConfig;
use shapefit::Result;

use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(
    name = "shapefit",
    version,
    about = "Statistical shape model segmentation pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    BuildSsm(cmd::build_ssm::BuildSsm),
    Fit(cmd::fit::Fit),
    Eval(cmd::eval::Eval),
    Synth(cmd::synth::Synth),
    Recon(cmd::recon::Recon),
    Loo(cmd::loo::Loo),
}

/// Pipeline settings from `path`, or defaults.
pub(crate) fn load_config(
    path: Option<&Path>,
    manifest: &mut RunManifest,
) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            manifest.input(p)?;
            PipelineConfig::read(p)
        }
        None => Ok(PipelineConfig::default()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::BuildSsm(c) => c.run(),
        Command::Fit(c) => c.run(),
        Command::Eval(c) => c.run(),
        Command::Synth(c) => c.run(),
        Command::Recon(c) => c.run(),
        Command::Loo(c) => c.run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 1 } else { 2 })
        }
    }
}
