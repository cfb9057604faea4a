//! Content-addressed on-disk cache of `f64` vectors.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct SimCache {
    dir: PathBuf,
}

/// Hex SHA-256 of the length-prefixed concatenation of `parts`.
pub fn content_key(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn f64_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn f64_from_bytes(b: &[u8]) -> Option<Vec<f64>> {
    if b.len() % 8 != 0 {
        return None;
    }
    Some(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

impl SimCache {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.bin"))
    }

    pub fn get(&self, key: &str) -> Option<Vec<f64>> {
        std::fs::read(self.path(key)).ok().and_then(|b| f64_from_bytes(&b))
    }

    pub fn put(&self, key: &str, values: &[f64]) -> Result<()> {
        crate::fsutil::atomic_write(&self.path(key), &f64_bytes(values))
    }
}
