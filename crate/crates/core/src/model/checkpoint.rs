//! Checkpoint container.
//!
//! ```text
//! magic   8 bytes  "GLMCKPT\0"
//! version u32 LE
//! hlen    u32 LE
//! header  hlen bytes of JSON: {"config": ModelConfig}
//! data    f64 LE, tensors in layout order
//! digest  32 bytes SHA-256 of everything above
//! ```
//!
//! A JSON manifest `<path>.manifest.json` records shapes and checksums.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::{ModelConfig, Params};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GLMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorShape>,
    /// [`Params::checksum`] of the stored parameters.
    pub params_checksum: String,
    /// SHA-256 of the checkpoint file bytes.
    pub file_sha256: String,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn encode_checkpoint(params: &Params) -> Vec<u8> {
    let header = serde_json::to_vec(&Header { config: params.config }).expect("header serializes");
    let mut buf = Vec::with_capacity(16 + header.len() + params.data.len() * 8 + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for x in &params.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Params> {
    if bytes.len() < 16 + 32 {
        return Err(Error::Corruption(format!("{} bytes is too short", bytes.len())));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Corruption("checksum mismatch".into()));
    }
    if &body[..8] != MAGIC {
        return Err(Error::Corruption("bad magic".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version(format!("file version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let hlen = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
    let header_end = 16 + hlen;
    if header_end > body.len() {
        return Err(Error::Corruption("header runs past end of file".into()));
    }
    let header: Header =
        serde_json::from_slice(&body[16..header_end]).map_err(|e| Error::Corruption(format!("header: {e}")))?;
    header.config.validate().map_err(|e| Error::Version(format!("stored config invalid: {e}")))?;
    let data_bytes = &body[header_end..];
    let expected = header.config.num_params() * 8;
    if data_bytes.len() != expected {
        return Err(Error::Version(format!(
            "tensor payload is {} bytes but config declares {expected}",
            data_bytes.len()
        )));
    }
    let data = data_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Params { config: header.config, data })
}

pub fn save_checkpoint(params: &Params, path: &Path) -> Result<CheckpointManifest> {
    let bytes = encode_checkpoint(params);
    write_atomic(path, &bytes)?;
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        config: params.config,
        tensors: params
            .config
            .layout()
            .into_iter()
            .map(|t| TensorShape { name: t.name, shape: [t.rows, t.cols] })
            .collect(),
        params_checksum: params.checksum(),
        file_sha256: hex::encode(Sha256::digest(&bytes)),
    };
    write_atomic(&manifest_path(path), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<Params> {
    decode_checkpoint(&fs::read(path)?)
}

/// Loads a checkpoint that must match `expected` shapes.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Params> {
    let p = load_checkpoint(path)?;
    if &p.config != expected {
        return Err(Error::Version(format!("stored config {:?} differs from expected {:?}", p.config, expected)));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = init_params(ModelConfig::default(), 9).unwrap();
        let m = save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert_eq!(p.config, q.config);
        assert!(p.data.iter().zip(&q.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(m.params_checksum, q.checksum());
        assert!(manifest_path(&path).exists());
    }

    #[test]
    fn truncation_is_corruption() {
        let p = init_params(ModelConfig::default(), 9).unwrap();
        let bytes = encode_checkpoint(&p);
        for cut in [10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Corruption(_))));
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Corruption(_))));
    }

    #[test]
    fn wrong_shapes_are_version_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = init_params(ModelConfig::default(), 9).unwrap();
        save_checkpoint(&p, &path).unwrap();
        let other = ModelConfig { d_model: 16, ..ModelConfig::default() };
        assert!(matches!(load_checkpoint_expecting(&path, &other), Err(Error::Version(_))));

        // A payload that disagrees with its own header.
        let header = serde_json::to_vec(&Header { config: other }).unwrap();
        let mut buf = MAGIC.to_vec();
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&[0u8; 64]);
        let d = Sha256::digest(&buf);
        buf.extend_from_slice(&d);
        assert!(matches!(decode_checkpoint(&buf), Err(Error::Version(_))));
    }
}
