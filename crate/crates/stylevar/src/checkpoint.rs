//! Checkpoint layout shared by every trained model: a manifest JSON next
//! to an opaque little-endian `f64` parameter blob. The manifest records
//! the architecture config, the training seed, and a SHA-256 digest of
//! the blob so reproducibility checks can compare a single string.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// What kind of model the blob holds (`generator`, `detector`, ...).
    pub kind: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// SHA-256 of the parameter blob, hex encoded.
    pub digest: String,
    /// Free-form training metadata (loss summaries, step counts).
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Hex SHA-256 over parameter slices in their stable order.
pub fn digest_params(values: &[&[f64]]) -> String {
    let mut hasher = Sha256::new();
    for slice in values {
        for v in *slice {
            hasher.update(v.to_le_bytes());
        }
    }
    hex_string(&hasher.finalize())
}

/// Hex SHA-256 of raw bytes.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex_string(&Sha256::digest(bytes))
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn write_blob(path: &Path, values: &[&[f64]]) -> Result<()> {
    let total: usize = values.iter().map(|s| s.len()).sum();
    let mut bytes = Vec::with_capacity(total * 8);
    for slice in values {
        for v in *slice {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a blob back into pre-shaped parameter slices. The slice layout
/// must match the one the blob was written with.
pub fn read_blob(path: &Path, slices: &mut [&mut [f64]]) -> Result<()> {
    let bytes = fs::read(path)?;
    let expect: usize = slices.iter().map(|s| s.len()).sum();
    if bytes.len() != expect * 8 {
        return Err(Error::Checkpoint(format!(
            "blob {} holds {} bytes but the model needs {}",
            path.display(),
            bytes.len(),
            expect * 8
        )));
    }
    let mut off = 0;
    for slice in slices {
        for v in slice.iter_mut() {
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&bytes[off..off + 8]);
            *v = f64::from_le_bytes(buf);
            off += 8;
        }
    }
    Ok(())
}

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Validate that a checkpoint directory's blob matches its manifest
/// digest, returning the manifest.
pub fn verify_checkpoint(dir: &Path, kind: &str) -> Result<Manifest> {
    let manifest = load_manifest(&dir.join("manifest.json"))?;
    if manifest.kind != kind {
        return Err(Error::Checkpoint(format!(
            "expected a {kind} checkpoint but found {}",
            manifest.kind
        )));
    }
    let blob = fs::read(dir.join("params.bin"))?;
    let digest = digest_bytes(&blob);
    if digest != manifest.digest {
        return Err(Error::Checkpoint(
            "parameter blob does not match manifest digest".into(),
        ));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_round_trip_and_digest_stability() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let a = vec![1.0f64, -2.5, 3.25];
        let b = vec![0.125f64];
        write_blob(&path, &[&a, &b]).unwrap();

        let mut a2 = vec![0.0; 3];
        let mut b2 = vec![0.0; 1];
        read_blob(&path, &mut [&mut a2, &mut b2]).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);

        let d1 = digest_params(&[&a, &b]);
        let d2 = digest_params(&[&a2, &b2]);
        assert_eq!(d1, d2);
        // Splitting differently does not change the digest; reordering does.
        let joined: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        assert_eq!(digest_params(&[&joined]), d1);
        let swapped = digest_params(&[&b, &a]);
        assert_ne!(swapped, d1);
    }

    #[test]
    fn read_blob_rejects_wrong_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        write_blob(&path, &[&[1.0, 2.0]]).unwrap();
        let mut too_big = vec![0.0; 3];
        assert!(read_blob(&path, &mut [&mut too_big]).is_err());
    }
}
