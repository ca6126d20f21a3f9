//! Flat binary parameter checkpoints with a JSON sidecar.
//!
//! Layout (little-endian): `b"LAGC"`, `u32` version, then one record per
//! parameter until end of file: `u32` name length, UTF-8 name, `u32` rank,
//! `rank x u64` dims, `f64` payload.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::nn::Params;
use super::{Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"LAGC";
pub const VERSION: u32 = 1;

/// Architecture metadata stored next to the binary payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub format_version: u32,
    pub metadata: serde_json::Value,
}

impl CheckpointMeta {
    pub fn new(kind: impl Into<String>, metadata: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            format_version: VERSION,
            metadata,
        }
    }
}

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::Io(e.to_string())
}

pub fn write_params(mut w: impl Write, params: &Params) -> Result<(), TensorError> {
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    for (name, t) in params.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(bytes).map_err(io_err)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io_err)?;
        for d in t.shape() {
            w.write_all(&(*d as u64).to_le_bytes()).map_err(io_err)?;
        }
        for x in t.data() {
            w.write_all(&x.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn read_params(mut r: impl Read) -> Result<Params, TensorError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(io_err)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut params = Params::new();
    while cur.pos < buf.len() {
        let len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec())
            .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        let shape = (0..rank).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>, _>>()?;
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        if self.pos + n > self.buf.len() {
            return Err(TensorError::Checkpoint("truncated record".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TensorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, TensorError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` (binary) and `path.json` (metadata).
pub fn save_checkpoint(path: &Path, params: &Params, meta: &CheckpointMeta) -> Result<(), TensorError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    write_params(&mut w, params)?;
    w.flush().map_err(io_err)?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    std::fs::write(sidecar_path(path), json).map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<(Params, CheckpointMeta), TensorError> {
    let file = std::fs::File::open(path).map_err(io_err)?;
    let params = read_params(std::io::BufReader::new(file))?;
    let text = std::fs::read_to_string(sidecar_path(path)).map_err(io_err)?;
    let meta = serde_json::from_str(&text).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn params_roundtrip_bit_exact(vals in proptest::collection::vec(-1e6f64..1e6, 1..40), rows in 1usize..4) {
            let cols = vals.len().div_ceil(rows);
            let mut data = vals.clone();
            data.resize(rows * cols, 0.5);
            let mut p = Params::new();
            p.insert("layer.weight", Tensor::new(vec![rows, cols], data).unwrap());
            p.insert("b", Tensor::scalar(vals[0]));
            let mut bytes = Vec::new();
            write_params(&mut bytes, &p).unwrap();
            prop_assert_eq!(&bytes[..4], b"LAGC");
            let back = read_params(bytes.as_slice()).unwrap();
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(read_params(&b"NOPE\x01\0\0\0"[..]).is_err());
    }

    #[test]
    fn sidecar_written_next_to_binary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.lagc");
        let mut p = Params::new();
        p.insert("w", Tensor::scalar(1.5));
        let meta = CheckpointMeta::new("encoder", serde_json::json!({"p": 16}));
        save_checkpoint(&path, &p, &meta).unwrap();
        let (q, m) = load_checkpoint(&path).unwrap();
        assert_eq!(q, p);
        assert_eq!(m, meta);
    }
}
