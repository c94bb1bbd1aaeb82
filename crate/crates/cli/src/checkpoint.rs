//! Binary checkpoint format: a named-parameter archive with the model spec
//! and a content hash. Loading rebuilds the model, replays the tensors and
//! verifies the recorded hash, so silent corruption or spec drift cannot
//! pass unnoticed.
//!
//! Layout (little-endian):
//!   magic "SSLKDCK1"
//!   u32 spec-JSON length, spec JSON bytes
//!   u32 tensor count, then per tensor:
//!     u32 name length, name bytes
//!     u32 rank, u64 dims...
//!     f64 bit patterns (u64) for every element
//!   u64 model content hash

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sslkd_core::model::{build_model, ModelSpec, SegModel};
use sslkd_core::tensor::Tensor;

use crate::error::{AppError, AppResult};

const MAGIC: &[u8; 8] = b"SSLKDCK1";

pub fn save(path: &Path, model: &SegModel) -> AppResult<u64> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(AppError::io(parent))?;
    }
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let spec_json = serde_json::to_vec(model.spec())
        .map_err(|e| AppError::Runtime(format!("spec serialization failed: {e}")))?;
    buf.extend_from_slice(&(spec_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&spec_json);

    let tensors = model.named_tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    let hash = model.content_hash();
    buf.extend_from_slice(&hash.to_le_bytes());

    let mut file = fs::File::create(path).map_err(AppError::io(path))?;
    file.write_all(&buf).map_err(AppError::io(path))?;
    Ok(hash)
}

struct Reader<'a> {
    path: &'a Path,
    buf: Vec<u8>,
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> AppResult<&[u8]> {
        if self.at + n > self.buf.len() {
            return Err(AppError::Checkpoint {
                path: self.path.to_path_buf(),
                message: "truncated file".into(),
            });
        }
        let slice = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u32(&mut self) -> AppResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> AppResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads and verifies a checkpoint; returns the model (in eval mode) and
/// its content hash.
pub fn load(path: &Path) -> AppResult<(SegModel, u64)> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .map_err(AppError::io(path))?
        .read_to_end(&mut buf)
        .map_err(AppError::io(path))?;
    let mut r = Reader { path, buf, at: 0 };

    if r.take(8)? != MAGIC {
        return Err(AppError::Checkpoint {
            path: path.to_path_buf(),
            message: "bad magic; not an sslkd checkpoint".into(),
        });
    }
    let spec_len = r.u32()? as usize;
    let spec: ModelSpec =
        serde_json::from_slice(r.take(spec_len)?).map_err(|e| AppError::Checkpoint {
            path: path.to_path_buf(),
            message: format!("bad spec: {e}"),
        })?;

    let n_tensors = r.u32()? as usize;
    let mut tensors: Vec<(String, Tensor)> = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = r.u32()? as usize;
        let name =
            String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| AppError::Checkpoint {
                path: path.to_path_buf(),
                message: "bad tensor name".into(),
            })?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_bits(r.u64()?));
        }
        tensors.push((
            name,
            Tensor::from_vec(&shape, data).map_err(AppError::Core)?,
        ));
    }
    let stored_hash = r.u64()?;

    let mut model = build_model(&spec, 0).map_err(AppError::Core)?;
    model.load_named_tensors(&tensors).map_err(AppError::Core)?;
    model.set_mode(sslkd_core::model::Mode::Eval);
    let actual = model.content_hash();
    if actual != stored_hash {
        return Err(AppError::Checkpoint {
            path: path.to_path_buf(),
            message: format!(
                "content hash mismatch: stored {stored_hash:016x}, recomputed {actual:016x}"
            ),
        });
    }
    Ok((model, actual))
}
