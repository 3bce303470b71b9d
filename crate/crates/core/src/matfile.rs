//! Binary matrix container shared by every persisted model.
//!
//! Layout (all little-endian):
//!
//! ```text
//! bytes 0..8    magic  b"SPKDMAT\0"
//! bytes 8..12   u32    format version
//! bytes 12..16  u32    matrix count n
//! n × (u64 rows, u64 cols)
//! n × rows·cols f64, row-major
//! ```
//!
//! Each container is paired with a JSON sidecar (`<file>.json`) that carries
//! the non-matrix settings of the model it stores.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"SPKDMAT\0";
pub const VERSION: u32 = 1;

pub fn encode(mats: &[Array2<f64>]) -> Vec<u8> {
    let payload: usize = mats.iter().map(|m| m.len() * 8 + 16).sum();
    let mut out = Vec::with_capacity(16 + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(mats.len() as u32).to_le_bytes());
    for m in mats {
        out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    }
    for m in mats {
        // iter() walks logical row-major order regardless of memory layout
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Array2<f64>>> {
    let bad = |msg: &str| Error::Validation(format!("matrix container: {msg}"));
    if bytes.len() < 16 || bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let mut pos = 16;
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        if bytes.len() < pos + 16 {
            return Err(bad("truncated header"));
        }
        let r = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
        let c = u64::from_le_bytes(bytes[pos + 8..pos + 16].try_into().unwrap()) as usize;
        dims.push((r, c));
        pos += 16;
    }
    let mut mats = Vec::with_capacity(n);
    for (r, c) in dims {
        let len = r.checked_mul(c).ok_or_else(|| bad("dimension overflow"))?;
        if bytes.len() < pos + len * 8 {
            return Err(bad("truncated payload"));
        }
        let data: Vec<f64> = bytes[pos..pos + len * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        pos += len * 8;
        mats.push(Array2::from_shape_vec((r, c), data).expect("length checked"));
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(mats)
}

pub fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(ndarray::Axis(0))
}

pub fn unrow(m: &Array2<f64>) -> Result<Array1<f64>> {
    if m.nrows() != 1 {
        return Err(Error::Shape(format!("expected a 1×n matrix, got {:?}", m.dim())));
    }
    Ok(m.row(0).to_owned())
}

/// Writes a container and its sidecar. Both files must not exist yet.
pub fn save(path: &Path, mats: &[Array2<f64>], sidecar: &serde_json::Value) -> Result<()> {
    write_new(path, &encode(mats))?;
    write_new(&sidecar_path(path), serde_json::to_string_pretty(sidecar)?.as_bytes())
}

pub fn load(path: &Path) -> Result<(Vec<Array2<f64>>, serde_json::Value)> {
    let bytes = read_artifact(path)?;
    let mats = decode(&bytes)?;
    let side = read_artifact(&sidecar_path(path))?;
    Ok((mats, serde_json::from_slice(&side)?))
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Creates `path` (and parents) and fails if the file already exists.
pub fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::AlreadyExists(path.to_path_buf())
            } else {
                Error::io(format!("writing {}", path.display()), e)
            }
        })?;
    f.write_all(bytes)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_artifact(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "file not found".into(),
            }
        } else {
            Error::io(format!("reading {}", path.display()), e)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip(shapes in prop::collection::vec((0usize..5, 0usize..5), 0..4), seed in any::<u64>()) {
            let mut k = seed;
            let mats: Vec<Array2<f64>> = shapes.iter().map(|&(r, c)| {
                Array2::from_shape_fn((r, c), |_| { k = crate::rng::mix(k, 1); (k as f64) / 3.0e18 - 1.5 })
            }).collect();
            let back = decode(&encode(&mats)).unwrap();
            prop_assert_eq!(back, mats);
        }
    }

    #[test]
    fn header_is_sixteen_bytes_then_dims() {
        let m = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = encode(&[m.t().to_owned()]);
        assert_eq!(&b[..8], b"SPKDMAT\0");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 3);
        // row-major of the transpose: 1, 4, 2, ...
        assert_eq!(f64::from_le_bytes(b[32..40].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(b[40..48].try_into().unwrap()), 4.0);
    }

    #[test]
    fn rejects_truncation() {
        let b = encode(&[Array2::zeros((2, 2))]);
        assert!(decode(&b[..b.len() - 1]).is_err());
        assert!(decode(b"nope").is_err());
    }
}
