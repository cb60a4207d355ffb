//! Readers and writers for volumes, point clouds, meshes and shape models.
//!
//! Volumes use the `SFV1` layout: the magic line `SFV1`, one line of JSON
//! describing the grid, then the raw little-endian samples in x-fastest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Grid, PointCloud, Topology, TriMesh, Vec3, Volume3D, VolumeKind};
use crate::ssm::ShapeModel;

pub const VOLUME_MAGIC: &str = "SFV1";

/// Sample encoding of a volume payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32le,
    F64le,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32le => 4,
            Dtype::F64le => 8,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    kind: VolumeKind,
    dtype: Dtype,
}

/// Narrowest dtype that stores every sample exactly.
pub fn lossless_dtype(vol: &Volume3D) -> Dtype {
    if vol
        .data()
        .iter()
        .all(|&v| (v as f32) as f64 == v || v.is_nan())
    {
        Dtype::F32le
    } else {
        Dtype::F64le
    }
}

/// Serialize a volume; `dtype = None` picks [`lossless_dtype`].
pub fn encode_volume(vol: &Volume3D, dtype: Option<Dtype>) -> Vec<u8> {
    let dtype = dtype.unwrap_or_else(|| lossless_dtype(vol));
    let g = vol.grid();
    let header = VolumeHeader {
        dims: g.dims,
        spacing: g.spacing,
        origin: g.origin,
        kind: vol.kind(),
        dtype,
    };
    let mut out = format!(
        "{VOLUME_MAGIC}\n{}\n",
        serde_json::to_string(&header).expect("header serializes")
    )
    .into_bytes();
    out.reserve(vol.data().len() * dtype.size());
    for &v in vol.data() {
        match dtype {
            Dtype::F32le => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64le => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

fn split_line(bytes: &[u8], what: &str) -> Result<(usize, usize)> {
    bytes
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| (p, p + 1))
        .ok_or_else(|| Error::Truncated(format!("file ends inside the {what}")))
}

/// Parse an `SFV1` byte stream.
pub fn decode_volume(bytes: &[u8]) -> Result<Volume3D> {
    let magic_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .unwrap_or(bytes.len())
        .min(16);
    let magic = String::from_utf8_lossy(&bytes[..magic_end]).into_owned();
    if magic != VOLUME_MAGIC {
        if magic.len() == 4 && magic.starts_with("SFV") {
            return Err(Error::UnsupportedVersion {
                expected: 1,
                found: magic[3..].to_string(),
            });
        }
        if bytes.len() < VOLUME_MAGIC.len() && VOLUME_MAGIC.as_bytes().starts_with(bytes) {
            return Err(Error::Truncated("file ends inside the magic".into()));
        }
        return Err(Error::BadMagic(magic));
    }
    let (_, header_start) = split_line(bytes, "magic")?;
    let rest = &bytes[header_start..];
    let (header_end, payload_start) = split_line(rest, "header")?;
    let header: VolumeHeader = serde_json::from_slice(&rest[..header_end])
        .map_err(|e| Error::Format(format!("volume header: {e}")))?;
    let grid = Grid::new(header.dims, header.spacing, header.origin)?;
    let payload = &rest[payload_start..];
    let size = header.dtype.size();
    if !payload.len().is_multiple_of(size) {
        return Err(Error::Truncated(format!(
            "payload of {} bytes ends inside a {size}-byte sample",
            payload.len()
        )));
    }
    let found = payload.len() / size;
    if found != grid.len() {
        return Err(Error::PayloadMismatch {
            expected: grid.len(),
            found,
        });
    }
    let data: Vec<f64> = match header.dtype {
        Dtype::F32le => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64le => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Volume3D::new(grid, header.kind, data)
}

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let run = || -> std::io::Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, path).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })
    };
    run().map_err(|e| Error::Io(e).in_file(path))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(e).in_file(path))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    decode_volume(&read_bytes(path)?).map_err(|e| e.in_file(path))
}

/// Write losslessly (float32 when every sample fits, float64 otherwise).
pub fn write_volume(path: impl AsRef<Path>, vol: &Volume3D) -> Result<()> {
    write_atomic(path.as_ref(), &encode_volume(vol, None))
}

/// Point cloud as CSV with header `x,y,z`.
pub fn encode_cloud(cloud: &PointCloud) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "z"])?;
    for p in cloud.points() {
        w.serialize((p.x, p.y, p.z))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if headers != ["x", "y", "z"] {
        return Err(Error::Format(format!(
            "point cloud header must be `x,y,z`, found {headers:?}"
        )));
    }
    let mut pts = Vec::new();
    for rec in r.deserialize::<(f64, f64, f64)>() {
        let (x, y, z) = rec?;
        pts.push(Vec3::new(x, y, z));
    }
    PointCloud::new(pts)
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    decode_cloud(&read_bytes(path)?).map_err(|e| e.in_file(path))
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    write_atomic(path.as_ref(), &encode_cloud(cloud)?)
}

/// Mesh as CSV sections `#vertices` (x,y,z rows) and `#faces` (index rows).
pub fn encode_mesh(mesh: &TriMesh) -> Vec<u8> {
    let mut s = String::from("#vertices\n");
    for p in mesh.cloud().points() {
        // `{:?}` prints the shortest representation that parses back exactly.
        s.push_str(&format!("{:?},{:?},{:?}\n", p.x, p.y, p.z));
    }
    s.push_str("#faces\n");
    for [a, b, c] in mesh.faces() {
        s.push_str(&format!("{a},{b},{c}\n"));
    }
    s.into_bytes()
}

pub fn decode_mesh(bytes: &[u8]) -> Result<TriMesh> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| Error::Format(format!("mesh is not UTF-8: {e}")))?;
    let mut section = None;
    let mut pts = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            section = match line {
                "#vertices" => Some(0),
                "#faces" => Some(1),
                other => {
                    return Err(Error::Format(format!(
                        "line {}: unknown section {other:?}",
                        n + 1
                    )))
                }
            };
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || {
            Error::Format(format!(
                "line {}: expected three comma-separated values",
                n + 1
            ))
        };
        if fields.len() != 3 {
            return Err(bad());
        }
        match section {
            Some(0) => {
                let v: Vec<f64> = fields
                    .iter()
                    .map(|f| f.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad())?;
                pts.push(Vec3::new(v[0], v[1], v[2]));
            }
            Some(1) => {
                let v: Vec<usize> = fields
                    .iter()
                    .map(|f| f.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad())?;
                faces.push([v[0], v[1], v[2]]);
            }
            _ => {
                return Err(Error::Format(format!(
                    "line {}: data before a section header",
                    n + 1
                )))
            }
        }
    }
    TriMesh::new(PointCloud::new(pts)?, faces)
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    decode_mesh(&read_bytes(path)?).map_err(|e| e.in_file(path))
}

pub fn write_mesh(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<()> {
    write_atomic(path.as_ref(), &encode_mesh(mesh))
}

pub const MODEL_FORMAT: &str = "shapefit-ssm";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    n_points: usize,
    n_training: usize,
    n_modes: usize,
    eigenvalues: Vec<f64>,
    spectrum: Vec<f64>,
    explained_fraction: f64,
    /// Base64 of float64 little-endian values.
    mean: String,
    /// Base64 of float64 little-endian values, mode-major.
    modes: String,
    faces: Option<Vec<[usize; 3]>>,
}

fn f64s_to_b64(v: &[f64]) -> String {
    B64.encode(v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>())
}

fn b64_to_f64s(s: &str, what: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Format(format!("{what}: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Truncated(format!("{what} ends inside a float64")));
    }
    if bytes.len() / 8 != expected {
        return Err(Error::PayloadMismatch {
            expected,
            found: bytes.len() / 8,
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn encode_model(model: &ShapeModel) -> Vec<u8> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        n_points: model.n_points(),
        n_training: model.n_training(),
        n_modes: model.n_modes(),
        eigenvalues: model.eigenvalues().to_vec(),
        spectrum: model.spectrum().to_vec(),
        explained_fraction: model.explained_fraction(),
        mean: f64s_to_b64(model.mean()),
        modes: f64s_to_b64(model.modes_flat()),
        faces: model.topology().map(|t| t.faces().to_vec()),
    };
    let mut out = serde_json::to_vec_pretty(&file).expect("model serializes");
    out.push(b'\n');
    out
}

/// Parse a model file, re-checking orthonormality and the triangulation.
pub fn decode_model(bytes: &[u8]) -> Result<ShapeModel> {
    let file: ModelFile =
        serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("model file: {e}")))?;
    if file.format != MODEL_FORMAT {
        return Err(Error::BadMagic(file.format));
    }
    if file.version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: MODEL_VERSION,
            found: file.version.to_string(),
        });
    }
    if file.eigenvalues.len() != file.n_modes {
        return Err(Error::Validation(format!(
            "header lists {} eigenvalues for {} modes",
            file.eigenvalues.len(),
            file.n_modes
        )));
    }
    let dim = 3 * file.n_points;
    let mean = b64_to_f64s(&file.mean, "mean", dim)?;
    let modes = b64_to_f64s(&file.modes, "modes", dim * file.n_modes)?;
    let model = ShapeModel::from_parts(
        mean,
        modes,
        file.eigenvalues,
        file.spectrum,
        file.n_training,
    )?;
    if (model.explained_fraction() - file.explained_fraction).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "explained fraction {} disagrees with eigenvalues ({})",
            file.explained_fraction,
            model.explained_fraction()
        )));
    }
    match file.faces {
        Some(faces) => model.with_topology(Topology::new(faces, file.n_points)?),
        None => Ok(model),
    }
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ShapeModel> {
    let path = path.as_ref();
    decode_model(&read_bytes(path)?).map_err(|e| e.in_file(path))
}

pub fn write_model(path: impl AsRef<Path>, model: &ShapeModel) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(model))
}
