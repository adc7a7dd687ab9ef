//! Hashing, seed derivation and small numeric helpers shared across modules.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Incremental SHA-256 writer; fields are length-prefixed by the callers
/// that need unambiguous framing.
#[derive(Default)]
pub struct Hasher(Sha256);

impl Hasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.update((b.len() as u64).to_le_bytes());
        self.0.update(b);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.0.update(v.to_bits().to_le_bytes());
        self
    }

    pub fn hex(self) -> String {
        hex::encode(self.0.finalize())
    }

    pub fn seed(self) -> u64 {
        let out = self.0.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
    }
}

/// Derives an independent 64-bit seed for a named stage from a parent seed.
///
/// `derive_seed(s, name)` is the first eight bytes (little endian) of
/// `SHA-256(le_bytes(s) || name)`. Renaming or adding stages never shifts
/// the seeds of other stages.
pub fn derive_seed(parent: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update(stage.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

/// `⌈ratio · n⌉`, robust to representation error in products such as
/// `0.1 · 30`.
pub fn ceil_count(ratio: f64, n: usize) -> usize {
    let exact = ratio * n as f64;
    let rounded = exact.round();
    let c = if (exact - rounded).abs() <= 1e-9 * exact.abs().max(1.0) {
        rounded
    } else {
        exact.ceil()
    };
    (c.max(0.0) as usize).min(n)
}

/// Same guard as [`ceil_count`], rounding down.
pub fn floor_count(ratio: f64, n: usize) -> usize {
    let exact = ratio * n as f64;
    let rounded = exact.round();
    let c = if (exact - rounded).abs() <= 1e-9 * exact.abs().max(1.0) {
        rounded
    } else {
        exact.floor()
    };
    (c.max(0.0) as usize).min(n)
}

/// Writes `contents` to `path` only if the bytes differ, creating parent
/// directories as needed.
pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    if let Ok(existing) = fs::read(path) {
        if existing == contents {
            return Ok(());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(contents)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_count_absorbs_float_noise() {
        assert_eq!(ceil_count(0.1, 30), 3);
        assert_eq!(ceil_count(0.2, 10), 2);
        assert_eq!(ceil_count(0.2, 8), 2);
        assert_eq!(ceil_count(0.25, 8), 2);
        assert_eq!(ceil_count(0.2, 11), 3);
        assert_eq!(ceil_count(0.01, 1), 1);
        assert_eq!(floor_count(0.7, 10), 7);
        assert_eq!(floor_count(0.5, 3), 1);
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, "split"), derive_seed(7, "split"));
        assert_ne!(derive_seed(7, "split"), derive_seed(7, "train"));
        assert_ne!(derive_seed(7, "split"), derive_seed(8, "split"));
    }
}
