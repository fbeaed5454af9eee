//! Binary snapshots of a density and atomic file output.
//!
//! Layout, all little-endian:
//!
//! | offset | size | content                              |
//! |--------|------|--------------------------------------|
//! | 0      | 5    | magic `LFSH1`                        |
//! | 5      | 1    | endianness tag, `b'L'`               |
//! | 6      | 2    | zero padding                         |
//! | 8      | 8    | `n` as `u64`                         |
//! | 16     | 8    | box half-width `L` as `f64`          |
//! | 24     | 8    | `gamma` as `f64`                     |
//! | 32     | 8    | time `t` as `f64`                    |
//! | 40     | 8 n³ | cell values as `f64`, row-major `(i, j, k)` |

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::grid::{make_grid, Density};

pub const MAGIC: &[u8; 5] = b"LFSH1";
pub const LITTLE_ENDIAN_TAG: u8 = b'L';
pub const HEADER_LEN: usize = 40;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a snapshot: bad magic {0:?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported endianness tag {0:#04x}; only little-endian (b'L') snapshots are read")]
    Endianness(u8),
    #[error("snapshot size mismatch: header announces {expected} bytes, file has {actual}")]
    Size { expected: usize, actual: usize },
    #[error("invalid snapshot content: {0}")]
    Content(#[from] crate::Error),
}

/// A density together with the run parameters it was recorded under.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub density: Density,
    pub gamma: f64,
    pub t: f64,
}

impl Snapshot {
    pub fn to_bytes(&self) -> Vec<u8> {
        let grid = self.density.grid();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * grid.len());
        out.extend_from_slice(MAGIC);
        out.push(LITTLE_ENDIAN_TAG);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(grid.n() as u64).to_le_bytes());
        out.extend_from_slice(&grid.extent().to_le_bytes());
        out.extend_from_slice(&self.gamma.to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        for v in self.density.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        if bytes.len() < HEADER_LEN {
            return Err(SnapshotError::Size { expected: HEADER_LEN, actual: bytes.len() });
        }
        if &bytes[..5] != MAGIC {
            return Err(SnapshotError::BadMagic(bytes[..5].to_vec()));
        }
        if bytes[5] != LITTLE_ENDIAN_TAG {
            return Err(SnapshotError::Endianness(bytes[5]));
        }
        let word = |k: usize| -> [u8; 8] { bytes[8 * k..8 * k + 8].try_into().expect("eight bytes") };
        let n = u64::from_le_bytes(word(1));
        let extent = f64::from_le_bytes(word(2));
        let gamma = f64::from_le_bytes(word(3));
        let t = f64::from_le_bytes(word(4));
        let cells = usize::try_from(n)
            .ok()
            .and_then(|n| n.checked_mul(n)?.checked_mul(n))
            .and_then(|c| c.checked_mul(8)?.checked_add(HEADER_LEN))
            .ok_or(SnapshotError::Size { expected: usize::MAX, actual: bytes.len() })?;
        if cells != bytes.len() {
            return Err(SnapshotError::Size { expected: cells, actual: bytes.len() });
        }
        let grid = make_grid(n as usize, extent)?;
        let values = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        let density = Density::new(grid, values)?;
        Ok(Self { density, gamma, t })
    }

    pub fn save(&self, path: &Path) -> Result<(), SnapshotError> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, SnapshotError> {
        let bytes = fs::read(path).map_err(|source| SnapshotError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}

/// Write to a sibling temporary file, sync, then rename over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), SnapshotError> {
    let io = |source| SnapshotError::Io { path: path.display().to_string(), source };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path.file_name().ok_or_else(|| io(std::io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(contents)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Snapshot {
        let grid = make_grid(6, 3.0).unwrap();
        let density = Density::from_fn(grid, |v| (-(v[0] * v[0] + 2.0 * v[1] * v[1] + 0.5 * v[2]) / 3.0).exp() / 7.0).unwrap();
        Snapshot { density, gamma: -3.0, t: 0.125 }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let s = sample();
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 8 * 216);
        let back = Snapshot::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert!(back.density.values().iter().zip(s.density.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corruptions_are_reported() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Snapshot::from_bytes(&bad), Err(SnapshotError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[5] = b'B';
        assert!(matches!(Snapshot::from_bytes(&bad), Err(SnapshotError::Endianness(b'B'))));
        assert!(matches!(Snapshot::from_bytes(&bytes[..bytes.len() - 8]), Err(SnapshotError::Size { .. })));
        assert!(matches!(Snapshot::from_bytes(&bytes[..10]), Err(SnapshotError::Size { .. })));
        let mut bad = bytes.clone();
        bad[8] = 7;
        assert!(matches!(Snapshot::from_bytes(&bad), Err(SnapshotError::Size { .. })));
        let mut bad = bytes;
        bad[HEADER_LEN..HEADER_LEN + 8].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(matches!(Snapshot::from_bytes(&bad), Err(SnapshotError::Content(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.lfsh");
        let s = sample();
        s.save(&path).unwrap();
        assert_eq!(Snapshot::load(&path).unwrap(), s);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
