//! WFM1 tensor files and sample archives.
//!
//! Tensor file layout, all integers little-endian:
//!
//! ```text
//! magic  b"WFM1"
//! dtype  u32   1 = f32, 2 = f64
//! rank   u32
//! dims   u64 × rank
//! data   element × prod(dims)
//! ```
//!
//! An archive is a directory holding `manifest.json` and a `samples/`
//! folder with one tensor file per sample (plus one per regression target).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GridSample, Modality};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"WFM1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor, dtype: Dtype) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * tensor.rank() + dtype.width() * tensor.numel());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&dtype.code().to_le_bytes());
    buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        Dtype::F32 => tensor.data().iter().for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => tensor.data().iter().for_each(|&v| buf.extend_from_slice(&v.to_le_bytes())),
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 {
        return Err(corrupt("truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let dtype = match u32_at(4) {
        1 => Dtype::F32,
        2 => Dtype::F64,
        _ => return Err(corrupt("unknown dtype code")),
    };
    let rank = u32_at(8) as usize;
    let header = 12 + 8 * rank;
    if bytes.len() < header {
        return Err(corrupt("truncated shape"));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| u64::from_le_bytes(bytes[12 + 8 * i..20 + 8 * i].try_into().expect("8 bytes")) as usize)
        .collect();
    let numel: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != numel * dtype.width() {
        return Err(corrupt(&format!(
            "payload has {} bytes, shape {shape:?} needs {}",
            payload.len(),
            numel * dtype.width()
        )));
    }
    let data = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    Tensor::new(shape, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub modality: Modality,
    pub file: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub format: String,
    pub dtype: Dtype,
    /// Generator parameters, recorded verbatim for reproducibility.
    pub generator: serde_json::Value,
    pub samples: Vec<ManifestEntry>,
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn write_archive(dir: &Path, samples: &[GridSample], generator: serde_json::Value, dtype: Dtype) -> Result<ArchiveMeta> {
    let sample_dir = dir.join("samples");
    fs::create_dir_all(&sample_dir).map_err(|e| Error::io(&sample_dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let stem = sanitize(&s.sample_id);
        let file = format!("samples/{stem}.wfm");
        write_tensor(&dir.join(&file), &s.data, dtype)?;
        let target_file = match &s.target {
            Some(t) => {
                let tf = format!("samples/{stem}.target.wfm");
                write_tensor(&dir.join(&tf), t, dtype)?;
                Some(tf)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            sample_id: s.sample_id.clone(),
            modality: s.modality,
            file,
            shape: s.data.shape().to_vec(),
            label: s.label,
            position: s.position,
            snr_db: s.snr_db,
            target_file,
        });
    }
    let meta = ArchiveMeta {
        format: "wfm-archive/1".into(),
        dtype,
        generator,
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&meta)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(meta)
}

pub fn read_archive(dir: &Path) -> Result<(Vec<GridSample>, ArchiveMeta)> {
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: ArchiveMeta = serde_json::from_str(&text)?;
    let mut samples = Vec::with_capacity(meta.samples.len());
    for e in &meta.samples {
        let data = read_tensor(&dir.join(&e.file))?;
        if data.shape() != e.shape.as_slice() {
            return Err(Error::Corrupt {
                path: dir.join(&e.file),
                reason: format!("manifest shape {:?} vs file {:?}", e.shape, data.shape()),
            });
        }
        let mut s = GridSample::new(data, e.modality, e.sample_id.clone())?;
        s.label = e.label;
        s.position = e.position;
        s.snr_db = e.snr_db;
        if let Some(tf) = &e.target_file {
            s.target = Some(read_tensor(&dir.join(tf))?);
        }
        samples.push(s);
    }
    Ok((samples, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_roundtrip_is_bit_exact_and_f32_rounds() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::new(vec![2, 3], vec![0.1, -2.5, 1e-30, 7.0, f64::MIN_POSITIVE, 3.3]).unwrap();
        let p = dir.path().join("t.wfm");
        write_tensor(&p, &t, Dtype::F64).unwrap();
        assert_eq!(read_tensor(&p).unwrap(), t);
        write_tensor(&p, &t, Dtype::F32).unwrap();
        let back = read_tensor(&p).unwrap();
        assert_eq!(back.data()[0], 0.1f32 as f64);
    }

    #[test]
    fn magic_and_truncation_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wfm");
        write_tensor(&p, &Tensor::zeros(&[4, 4]), Dtype::F32).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_tensor(&p), Err(Error::Corrupt { .. })));
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        let err = read_tensor(&p).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn archive_roundtrip_keeps_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let s = GridSample::new(Tensor::full(&[2, 2, 1], 0.5), Modality::Csi, "x/1")
            .unwrap()
            .with_label(2)
            .with_snr(-3.0)
            .with_position([1.0, 2.0, 0.5])
            .with_target(Tensor::full(&[3, 1, 2], 0.25));
        write_archive(dir.path(), &[s.clone()], serde_json::json!({"kind": "test"}), Dtype::F32).unwrap();
        let (back, meta) = read_archive(dir.path()).unwrap();
        assert_eq!(back, vec![s]);
        assert_eq!(meta.generator["kind"], "test");
    }
}
