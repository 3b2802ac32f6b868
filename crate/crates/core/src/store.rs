//! Manifest-plus-payload persistence shared by datasets, reservoir weights and
//! readout checkpoints.
//!
//! `<stem>.json` describes every array (name, shape, element offset) together
//! with a kind-specific metadata object. `<stem>.bin` is the concatenation of
//! all arrays as little-endian IEEE-754 f64 values in row-major order, in the
//! order listed in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT: &str = "astrolsm-bundle";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in f64 elements (multiply by 8 for bytes).
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub format_version: u32,
    pub kind: String,
    pub payload: String,
    pub dtype: String,
    pub byte_order: String,
    pub order: String,
    pub total_values: usize,
    pub payload_sha256: String,
    pub arrays: Vec<ArrayEntry>,
    pub metadata: serde_json::Value,
}

pub struct ArrayRef<'a> {
    pub name: &'a str,
    pub shape: Vec<usize>,
    pub values: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayData {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub struct Bundle {
    pub manifest: Manifest,
    pub metadata: serde_json::Value,
    arrays: Vec<(String, ArrayData)>,
}

impl Bundle {
    pub fn array(&self, name: &str, path: &Path) -> Result<&ArrayData> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::format(path, format!("missing array `{name}`")))
    }
}

pub fn manifest_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.json"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write_bundle<M: Serialize>(
    dir: &Path,
    stem: &str,
    kind: &str,
    metadata: &M,
    arrays: &[ArrayRef<'_>],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(arrays.len());
    let mut payload = Vec::new();
    let mut offset = 0;
    for a in arrays {
        let expected: usize = a.shape.iter().product();
        Error::check_len("bundle array", expected, a.values.len())?;
        entries.push(ArrayEntry {
            name: a.name.to_string(),
            shape: a.shape.clone(),
            offset,
            len: a.values.len(),
        });
        offset += a.values.len();
        payload.reserve(a.values.len() * 8);
        for v in a.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let payload_name = format!("{stem}.bin");
    let manifest = Manifest {
        format: FORMAT.into(),
        format_version: FORMAT_VERSION,
        kind: kind.into(),
        payload: payload_name.clone(),
        dtype: "f64".into(),
        byte_order: "little-endian".into(),
        order: "row-major".into(),
        total_values: offset,
        payload_sha256: sha256_hex(&payload),
        arrays: entries,
        metadata: serde_json::to_value(metadata).map_err(|e| Error::format(dir, e))?,
    };
    let bin_path = dir.join(&payload_name);
    fs::write(&bin_path, &payload).map_err(|e| Error::io(&bin_path, e))?;
    let json_path = manifest_path(dir, stem);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(&json_path, e))?;
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

pub fn read_bundle(manifest_file: &Path, kind: &str) -> Result<Bundle> {
    let text = fs::read_to_string(manifest_file).map_err(|e| Error::io(manifest_file, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(manifest_file, e))?;
    if manifest.format != FORMAT || manifest.kind != kind {
        return Err(Error::format(
            manifest_file,
            format!("expected a `{kind}` bundle, found `{}`/`{}`", manifest.format, manifest.kind),
        ));
    }
    let dir = manifest_file.parent().unwrap_or_else(|| Path::new("."));
    let bin_path = dir.join(&manifest.payload);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if bytes.len() != manifest.total_values * 8 {
        return Err(Error::format(
            &bin_path,
            format!("payload has {} bytes, manifest declares {} values", bytes.len(), manifest.total_values),
        ));
    }
    if sha256_hex(&bytes) != manifest.payload_sha256 {
        return Err(Error::format(&bin_path, "payload checksum mismatch"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for e in &manifest.arrays {
        let end = e.offset + e.len;
        if end > values.len() || e.shape.iter().product::<usize>() != e.len {
            return Err(Error::format(manifest_file, format!("bad extent for array `{}`", e.name)));
        }
        arrays.push((
            e.name.clone(),
            ArrayData {
                shape: e.shape.clone(),
                values: values[e.offset..end].to_vec(),
            },
        ));
    }
    let metadata = manifest.metadata.clone();
    Ok(Bundle {
        manifest,
        metadata,
        arrays,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_is_flat_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let a = [1.0, -2.5, 3.25];
        let b = [0.5; 4];
        write_bundle(
            dir.path(),
            "x",
            "test",
            &serde_json::json!({"note": 1}),
            &[
                ArrayRef { name: "a", shape: vec![3], values: &a },
                ArrayRef { name: "b", shape: vec![2, 2], values: &b },
            ],
        )
        .unwrap();
        let bytes = fs::read(dir.path().join("x.bin")).unwrap();
        assert_eq!(bytes.len(), 7 * 8);
        assert_eq!(&bytes[8..16], &(-2.5f64).to_le_bytes());
        let bundle = read_bundle(&dir.path().join("x.json"), "test").unwrap();
        assert_eq!(bundle.manifest.arrays[1].offset, 3);
        assert_eq!(bundle.array("b", Path::new("x")).unwrap().values, b.to_vec());
        assert!(read_bundle(&dir.path().join("x.json"), "other").is_err());
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), "x", "test", &(), &[ArrayRef { name: "a", shape: vec![1], values: &[1.0] }])
            .unwrap();
        fs::write(dir.path().join("x.bin"), 2.0f64.to_le_bytes()).unwrap();
        assert!(matches!(
            read_bundle(&dir.path().join("x.json"), "test"),
            Err(Error::Format { .. })
        ));
    }
}
