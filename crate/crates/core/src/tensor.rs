//! Real-valued plane stacks on disk (`PFT1`): little-endian `f32` payload,
//! planes stored one after another in row-major order, plus a JSON sidecar
//! at `<path>.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mosaic::header_path;
use crate::plane::Plane;

pub const TENSOR_MAGIC: &str = "PFT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub magic: String,
    pub width: usize,
    pub height: usize,
    pub planes: usize,
    #[serde(default)]
    pub names: Vec<String>,
}

pub fn write_tensor(path: &Path, planes: &[&Plane], names: &[&str]) -> Result<()> {
    let first = planes
        .first()
        .ok_or_else(|| Error::EmptyInput("tensor needs at least one plane".into()))?;
    if planes.iter().any(|p| !p.same_dims(first)) {
        return Err(Error::DimensionMismatch(
            "tensor planes differ in size".into(),
        ));
    }
    let mut payload = Vec::with_capacity(planes.len() * first.len() * 4);
    for p in planes {
        for &v in p.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let header = TensorHeader {
        magic: TENSOR_MAGIC.into(),
        width: first.width(),
        height: first.height(),
        planes: planes.len(),
        names: names.iter().map(|s| s.to_string()).collect(),
    };
    let hpath = header_path(path);
    fs::write(
        &hpath,
        serde_json::to_string_pretty(&header).expect("header serializes"),
    )
    .map_err(|e| Error::io(&hpath, e))
}

pub fn read_tensor(path: &Path) -> Result<(TensorHeader, Vec<Plane>)> {
    let hpath = header_path(path);
    for p in [path, hpath.as_path()] {
        if !p.is_file() {
            return Err(Error::MissingFile(p.to_path_buf()));
        }
    }
    let text = fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let header: TensorHeader = serde_json::from_str(&text).map_err(|e| Error::ParseError {
        path: hpath.clone(),
        message: e.to_string(),
    })?;
    if header.magic != TENSOR_MAGIC {
        return Err(Error::BadMagic {
            path: hpath,
            expected: TENSOR_MAGIC,
            found: header.magic,
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n = header.width * header.height;
    if bytes.len() != n * header.planes * 4 {
        return Err(Error::DimensionMismatch(format!(
            "header says {} planes of {}x{}, payload has {} bytes",
            header.planes,
            header.width,
            header.height,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let planes = values
        .chunks_exact(n.max(1))
        .take(header.planes)
        .map(|c| Plane::new(header.width, header.height, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, planes))
}
