use std::path::{Path, PathBuf};

use clap::Args;
use shapefit::dataio::{reconstruct_volume, write_volume, FanAcquisition};
use shapefit::{Error, Result};

use crate::manifest::{list_files, RunManifest};

/// Resample a rotational sweep of 2-D frames onto a Cartesian grid.
#[derive(Debug, Args)]
pub struct Recon {
    /// Directory of frames, one CSV matrix per frame in name order.
    #[arg(long)]
    frames: PathBuf,
    /// One angle in degrees per line, matching the frame order.
    #[arg(long)]
    angles: PathBuf,
    /// Output voxel size (mm).
    #[arg(long, default_value_t = 0.5)]
    spacing: f64,
    /// Frame pixel size as `radial,axial` (mm).
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.5])]
    pixel_spacing: Vec<f64>,
    /// Distance from the roll axis to the first frame row (mm).
    #[arg(long, default_value_t = 0.0)]
    axis_offset: f64,
    /// Axial position of the first frame column (mm).
    #[arg(long, default_value_t = 0.0)]
    z_origin: f64,
    /// Output volume; the coverage mask goes to `<stem>.valid.sfv`.
    #[arg(long)]
    out: PathBuf,
}

fn parse_numbers(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|c| {
            c.trim().parse::<f64>().map_err(|_| {
                Error::Format(format!(
                    "line {}: `{}` is not a number",
                    line_no + 1,
                    c.trim()
                ))
                .in_file(path)
            })
        })
        .collect()
}

fn is_header(line: &str) -> bool {
    line.split(',').any(|c| c.trim().parse::<f64>().is_err())
}

/// Returns `(rows, cols, row-major data)`.
pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e).in_file(path))?;
    let mut data = Vec::new();
    let (mut rows, mut cols) = (0, None);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_numbers(path, i, line)?;
        match cols {
            None => cols = Some(v.len()),
            Some(c) if c != v.len() => {
                return Err(Error::Format(format!(
                    "line {}: expected {c} columns, found {}",
                    i + 1,
                    v.len()
                ))
                .in_file(path))
            }
            _ => {}
        }
        data.extend(v);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Format("empty frame".into()).in_file(path))?;
    Ok((rows, cols, data))
}

pub fn read_angles(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e).in_file(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && is_header(line)) {
            continue;
        }
        out.extend(parse_numbers(path, i, line)?);
    }
    Ok(out)
}

impl Recon {
    pub fn run(self) -> Result<()> {
        let mut manifest = RunManifest::new("recon");
        if self.pixel_spacing.len() != 2 {
            return Err(Error::InvalidArgument(
                "--pixel-spacing takes two values: radial,axial".into(),
            ));
        }
        let files = list_files(&self.frames, "csv")?;
        let angles = read_angles(&self.angles)?;
        manifest.input(&self.angles)?;
        if files.len() != angles.len() {
            return Err(Error::InvalidArgument(format!(
                "{} frames but {} angles",
                files.len(),
                angles.len()
            )));
        }
        let mut frames = Vec::with_capacity(files.len());
        let mut shape = None;
        for f in &files {
            manifest.input(f)?;
            let (r, c, d) = read_matrix(f)?;
            if shape.is_some_and(|s| s != (r, c)) {
                return Err(
                    Error::Format(format!("frame is {r}x{c}, earlier frames differ")).in_file(f),
                );
            }
            shape = Some((r, c));
            frames.push(d);
        }
        let (rows, cols) = shape.ok_or_else(|| Error::InvalidArgument("no frames found".into()))?;
        let acq = FanAcquisition {
            frames,
            rows,
            cols,
            angles,
            pixel_spacing: [self.pixel_spacing[0], self.pixel_spacing[1]],
            axis_offset: self.axis_offset,
            z_origin: self.z_origin,
        };
        let rec = manifest.time("reconstruct", || reconstruct_volume(&acq, self.spacing))?;
        let stem = self
            .out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let valid_path = self.out.with_file_name(format!("{stem}.valid.sfv"));
        write_volume(&self.out, &rec.volume)?;
        write_volume(&valid_path, &rec.valid)?;
        manifest.outputs = vec![self.out.clone(), valid_path];
        manifest.config = serde_json::json!({
            "spacing": self.spacing,
            "pixel_spacing": self.pixel_spacing,
            "axis_offset": self.axis_offset,
            "z_origin": self.z_origin,
        });
        manifest.write(&self.out.with_file_name(format!("{stem}.manifest.json")))?;
        let g = rec.volume.grid();
        println!(
            "reconstructed {} frames onto {}x{}x{} voxels ({} covered)",
            acq.frames.len(),
            g.dims[0],
            g.dims[1],
            g.dims[2],
            rec.valid.count_nonzero()
        );
        Ok(())
    }
}
