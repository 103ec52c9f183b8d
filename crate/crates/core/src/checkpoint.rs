//! Parameter checkpoint file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "LGSA" | format version u32 | descriptor length u32 | descriptor
//! (UTF-8 key=value lines) | parameter count u32 | entries...
//! entry: name length u16 | UTF-8 name | rank u8 | dims u32 each | f32 data
//! ```
//!
//! Values are stored as 32-bit floats regardless of the build's element
//! type. Entries named `*.running_mean` / `*.running_var` reload as
//! non-trainable buffers. The descriptor is compared verbatim on load when
//! an expected descriptor is supplied.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::LgsaError;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::Elem;

const MAGIC: &[u8; 4] = b"LGSA";
const VERSION: u32 = 1;

pub fn save(params: &ParamStore, descriptor: &str, path: &Path) -> Result<(), LgsaError> {
    let file = File::create(path).map_err(|e| LgsaError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io = |e| LgsaError::io(path.display().to_string(), e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    let desc = descriptor.as_bytes();
    w.write_all(&(desc.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(desc).map_err(io)?;
    w.write_all(&(params.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, p) in params.iter() {
        let nb = name.as_bytes();
        assert!(nb.len() <= u16::MAX as usize, "parameter name too long");
        w.write_all(&(nb.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(nb).map_err(io)?;
        let shape = p.value.shape();
        assert!(shape.len() <= u8::MAX as usize);
        w.write_all(&[shape.len() as u8]).map_err(io)?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for &v in p.value.data() {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load(path: &Path) -> Result<(ParamStore, String), LgsaError> {
    let file = File::open(path).map_err(|e| LgsaError::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(LgsaError::Format {
            what: "checkpoint".into(),
            detail: format!("bad magic {magic:?}, expected \"LGSA\""),
        });
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(LgsaError::Format {
            what: "checkpoint".into(),
            detail: format!("unsupported format version {version}"),
        });
    }
    let desc_len = read_u32(&mut r, path)? as usize;
    let mut desc = vec![0u8; desc_len];
    read_exact(&mut r, &mut desc, path)?;
    let descriptor = String::from_utf8(desc).map_err(|e| LgsaError::Format {
        what: "checkpoint descriptor".into(),
        detail: e.to_string(),
    })?;
    let count = read_u32(&mut r, path)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let mut nl = [0u8; 2];
        read_exact(&mut r, &mut nl, path)?;
        let name_len = u16::from_le_bytes(nl) as usize;
        let mut nb = vec![0u8; name_len];
        read_exact(&mut r, &mut nb, path)?;
        let name = String::from_utf8(nb).map_err(|e| LgsaError::Format {
            what: "parameter name".into(),
            detail: e.to_string(),
        })?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank, path)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r, path)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 4];
        for _ in 0..numel {
            read_exact(&mut r, &mut buf, path)?;
            data.push(f32::from_le_bytes(buf) as Elem);
        }
        let trainable = !(name.ends_with(".running_mean") || name.ends_with(".running_var"));
        store.insert(name, Tensor::new(shape, data), trainable);
    }
    Ok((store, descriptor))
}

/// Loads a checkpoint and verifies its descriptor matches `expected`.
pub fn load_validated(path: &Path, expected: &str) -> Result<ParamStore, LgsaError> {
    let (store, desc) = load(path)?;
    if desc != expected {
        return Err(LgsaError::ArchMismatch(format!(
            "checkpoint {} was written for a different architecture:\n--- checkpoint\n{desc}\n--- expected\n{expected}",
            path.display()
        )));
    }
    Ok(store)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &Path) -> Result<(), LgsaError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            LgsaError::Format {
                what: "checkpoint".into(),
                detail: format!("{}: unexpected end of file", path.display()),
            }
        } else {
            LgsaError::io(path.display().to_string(), e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32, LgsaError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a.weight", Tensor::new(vec![2, 2], vec![1.0, -2.5, 0.25, 4.0]), true);
        s.insert("a.bn.running_mean", Tensor::new(vec![2], vec![0.5, -0.5]), false);
        s
    }

    #[test]
    fn round_trip_preserves_values_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let store = sample_store();
        save(&store, "arch=test\ndepth=3\n", &path).unwrap();
        let (loaded, desc) = load(&path).unwrap();
        assert_eq!(desc, "arch=test\ndepth=3\n");
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.get("a.weight").value, store.get("a.weight").value);
        assert!(loaded.get("a.weight").trainable);
        assert!(!loaded.get("a.bn.running_mean").trainable);
    }

    #[test]
    fn rewrite_is_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.ckpt");
        let p2 = dir.path().join("m2.ckpt");
        let store = sample_store();
        save(&store, "d", &p1).unwrap();
        let (loaded, desc) = load(&p1).unwrap();
        save(&loaded, &desc, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn descriptor_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&sample_store(), "arch=a", &path).unwrap();
        let err = load_validated(&path, "arch=b").unwrap_err();
        assert!(matches!(err, LgsaError::ArchMismatch(_)));
    }

    #[test]
    fn header_layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&sample_store(), "xy", &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"LGSA");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(&bytes[12..14], b"xy");
        assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 2);
    }

    #[test]
    fn truncated_file_reports_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&sample_store(), "d", &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load(&path).unwrap_err();
        assert!(matches!(err, LgsaError::Format { .. }), "{err}");
    }
}
