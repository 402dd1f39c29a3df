//! Named f32 array bundles: a JSON manifest plus one little-endian blob.
//!
//! The manifest lists `{name, shape, dtype: "f32", offset}` for every array
//! in storage order (`offset` counts bytes into the blob) together with a
//! free-form `meta` object.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub blob: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

pub const FORMAT: &str = "multizero-arrays";

pub struct NamedArray<'a> {
    pub name: &'a str,
    pub shape: &'a [usize],
    pub data: &'a [f32],
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `<stem>.json` and `<stem>.bin` into `dir`, creating it if needed.
pub fn write_bundle(
    dir: &Path,
    stem: &str,
    meta: serde_json::Value,
    arrays: &[NamedArray<'_>],
) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let blob_name = format!("{stem}.bin");
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(arrays.len());
    for a in arrays {
        debug_assert_eq!(a.shape.iter().product::<usize>(), a.data.len());
        entries.push(ArrayEntry {
            name: a.name.to_string(),
            shape: a.shape.to_vec(),
            dtype: "f32".into(),
            offset: blob.len(),
        });
        for v in a.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        blob: blob_name.clone(),
        meta,
        arrays: entries,
    };
    let blob_path = dir.join(&blob_name);
    fs::write(&blob_path, &blob).map_err(io_err(&blob_path))?;
    let manifest_path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(())
}

pub struct Bundle {
    pub meta: serde_json::Value,
    pub arrays: Vec<(ArrayEntry, Vec<f32>)>,
}

pub fn read_bundle(dir: &Path, stem: &str) -> Result<Bundle, CheckpointError> {
    let manifest_path = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| CheckpointError::Json {
        path: manifest_path.clone(),
        source,
    })?;
    if manifest.format != FORMAT {
        return Err(CheckpointError::Mismatch(format!(
            "unknown format '{}'",
            manifest.format
        )));
    }
    let blob_path = dir.join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(io_err(&blob_path))?;
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for entry in manifest.arrays {
        if entry.dtype != "f32" {
            return Err(CheckpointError::Mismatch(format!(
                "array {} has dtype {}",
                entry.name, entry.dtype
            )));
        }
        let len = entry.shape.iter().product::<usize>();
        let bytes = blob
            .get(entry.offset..entry.offset + 4 * len)
            .ok_or_else(|| CheckpointError::Mismatch(format!("array {} overruns blob", entry.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        arrays.push((entry, data));
    }
    Ok(Bundle {
        meta: manifest.meta,
        arrays,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_byte_positions_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let a = [1.0f32, -2.5];
        let b = [0.25f32; 6];
        write_bundle(
            dir.path(),
            "x",
            serde_json::json!({"k": 1}),
            &[
                NamedArray { name: "a", shape: &[2], data: &a },
                NamedArray { name: "b", shape: &[2, 3], data: &b },
            ],
        )
        .unwrap();
        let blob = fs::read(dir.path().join("x.bin")).unwrap();
        assert_eq!(blob.len(), 32);
        assert_eq!(&blob[4..8], &(-2.5f32).to_le_bytes());
        let back = read_bundle(dir.path(), "x").unwrap();
        assert_eq!(back.arrays[1].0.offset, 8);
        assert_eq!(back.arrays[1].0.shape, vec![2, 3]);
        assert_eq!(back.arrays[0].1, a.to_vec());
        assert_eq!(back.meta["k"], 1);
    }
}
