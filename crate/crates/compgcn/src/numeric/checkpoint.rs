//! Parameter checkpoint container.
//!
//! Layout: 8-byte magic (`CGCKPT01`), little-endian u64 manifest length,
//! JSON manifest mapping array names to shapes and byte offsets, then the
//! raw f64 little-endian data section. Array order follows the manifest,
//! so identical inputs produce byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CGCKPT01";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the data section.
    offset: u64,
}

/// Writes named tensors in iteration order.
pub fn save(path: &Path, arrays: &[(&str, &Tensor)]) -> Result<()> {
    let mut manifest = Manifest { arrays: Vec::new() };
    let mut offset = 0u64;
    for (name, t) in arrays {
        manifest.arrays.push(ArrayEntry {
            name: (*name).to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += (t.len() * 8) as u64;
    }
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for (_, t) in arrays {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads every array back, in manifest order.
pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic in {}: expected {:?}",
            path.display(),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;

    let mut out = Vec::with_capacity(manifest.arrays.len());
    for entry in manifest.arrays {
        let count: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + count * 8;
        if end > data.len() {
            return Err(Error::Checkpoint(format!(
                "array {} spans past end of data section",
                entry.name
            )));
        }
        let values: Vec<f64> = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((entry.name, Tensor::new(entry.shape, values)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        let a = Tensor::new(vec![2, 3], vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE, 1e300, -0.5])
            .unwrap();
        let b = Tensor::vector(vec![42.0]);
        save(&path, &[("layer.w", &a), ("bias", &b)]).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "layer.w");
        assert_eq!(loaded[0].1, a);
        assert_eq!(loaded[1].1, b);
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxx").unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn identical_saves_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let t = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        save(&p1, &[("x", &t)]).unwrap();
        save(&p2, &[("x", &t)]).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }
}
