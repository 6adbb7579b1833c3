//! HTF: the little-endian binary32 tensor file format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HTF1"
//! 4       4     u32 ndims (always 3)
//! 8       12    u32 dims C, H, W
//! 20      4     u32 dtype (1 = float32)
//! 24      4·CHW f32 values, channel-major row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const MAGIC: &[u8; 4] = b"HTF1";
pub const HEADER_LEN: usize = 24;
const DTYPE_F32: u32 = 1;

/// Serializes a tensor to HTF bytes. Values are rounded to binary32.
pub fn encode(t: &Tensor3) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&3u32.to_le_bytes());
    for d in [t.channels(), t.height(), t.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parses HTF bytes. `path` is only used for error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor3> {
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    let read_u32 = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| fail(offset, "truncated header".into()))
    };

    match bytes.get(0..4) {
        Some(m) if m == MAGIC => {}
        Some(m) => return Err(fail(0, format!("bad magic {:?}", String::from_utf8_lossy(m)))),
        None => return Err(fail(0, "truncated header".into())),
    }
    let ndims = read_u32(4)?;
    if ndims != 3 {
        return Err(fail(4, format!("expected 3 dims, found {ndims}")));
    }
    let mut dims = [0usize; 3];
    for (k, d) in dims.iter_mut().enumerate() {
        let offset = 8 + 4 * k;
        *d = read_u32(offset)? as usize;
        if *d == 0 {
            return Err(fail(offset, "zero dimension".into()));
        }
    }
    let dtype = read_u32(20)?;
    if dtype != DTYPE_F32 {
        return Err(fail(20, format!("unsupported dtype code {dtype}")));
    }
    let count = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .filter(|&n| n.checked_mul(4).is_some())
        .ok_or_else(|| fail(8, "dimension product overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < 4 * count {
        return Err(fail(
            bytes.len(),
            format!("truncated payload: need {} value bytes, have {}", 4 * count, payload.len()),
        ));
    }
    if payload.len() > 4 * count {
        return Err(fail(HEADER_LEN + 4 * count, "trailing bytes after payload".into()));
    }
    let mut data = Vec::with_capacity(count);
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(fail(HEADER_LEN + 4 * k, format!("non-finite value {v}")));
        }
        data.push(v as f64);
    }
    Ok(Tensor3::from_raw(dims[0], dims[1], dims[2], data))
}

pub fn save_tensor(t: &Tensor3, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor3> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
