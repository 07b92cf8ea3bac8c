//! Binary parameter checkpoints.
//!
//! Layout: `b"IGT1"`, one element-type byte (4 = f32, 8 = f64), then per
//! parameter: name length (u16 LE), UTF-8 name, rows (u32 LE), cols
//! (u32 LE), row-major LE values. Optimizer state is not stored.

use std::path::Path;

use crate::error::{IgtError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"IGT1";

pub fn encode<T: Real>(params: &[(String, &Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(T::BYTES as u8);
    for (name, t) in params {
        let bytes = name.as_bytes();
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for &x in t.data() {
            x.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(IgtError::Ingestion {
                source_name: self.source.to_string(),
                offset: self.pos,
                message: format!(
                    "truncated {what}: expected {n} bytes, found {}",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint, converting stored values to `T` if the file
/// uses the other precision.
pub fn decode<T: Real>(buf: &[u8], source: &str) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = Reader { buf, pos: 0, source };
    if r.take(4, "magic")? != MAGIC {
        return Err(IgtError::Ingestion {
            source_name: source.to_string(),
            offset: 0,
            message: "bad magic (expected IGT1)".into(),
        });
    }
    let code = r.take(1, "element type")?[0];
    if code != 4 && code != 8 {
        return Err(IgtError::Ingestion {
            source_name: source.to_string(),
            offset: 4,
            message: format!("unknown element type code {code}"),
        });
    }
    let width = code as usize;
    let mut out = Vec::new();
    while r.pos < buf.len() {
        let start = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| IgtError::Ingestion {
                source_name: source.to_string(),
                offset: start + 2,
                message: "parameter name is not UTF-8".into(),
            })?
            .to_string();
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let raw = r.take(rows * cols * width, &format!("values of {name}"))?;
        let data = raw
            .chunks_exact(width)
            .map(|c| {
                if width == 4 {
                    T::of(f32::read_le(c) as f64)
                } else {
                    T::of(f64::read_le(c))
                }
            })
            .collect();
        out.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

pub fn save<T: Real>(path: &Path, params: &[(String, &Tensor<T>)]) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| IgtError::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let buf = std::fs::read(path).map_err(|e| IgtError::io(path, e))?;
    decode(&buf, &path.display().to_string())
}
