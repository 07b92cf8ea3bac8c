//! One-file-per-bag binary format and the JSON dataset manifest.
//!
//! Bag layout, all little-endian: `b"IGTB"`, u32 N, u32 d_in, u32 label,
//! N f32 coordinate pairs, then N×d_in f32 features row-major.

use std::path::Path;

use crate::error::{IgtError, Result};
use crate::graph::{build_graph, GraphConfig, WsiGraph};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BAG_MAGIC: &[u8; 4] = b"IGTB";
const HEADER_BYTES: usize = 16;

/// A bag as stored on disk, before graph construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub coords: Vec<[f32; 2]>,
    pub features: Tensor<f32>,
    pub label: usize,
}

impl Bag {
    pub fn n_instances(&self) -> usize {
        self.coords.len()
    }

    pub fn d_in(&self) -> usize {
        self.features.cols()
    }

    pub fn to_graph<T: Real>(&self, cfg: &GraphConfig, name: &str) -> Result<WsiGraph<T>> {
        build_graph(self.features.cast(), self.coords.clone(), self.label, cfg, name)
    }
}

pub fn encode_bag(bag: &Bag) -> Result<Vec<u8>> {
    if bag.features.rows() != bag.coords.len() {
        return Err(IgtError::Contract(format!(
            "bag has {} coordinates but {} feature rows",
            bag.coords.len(),
            bag.features.rows()
        )));
    }
    let n = bag.coords.len();
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * (2 * n + bag.features.len()));
    out.extend_from_slice(BAG_MAGIC);
    for v in [n, bag.d_in(), bag.label] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for c in &bag.coords {
        out.extend_from_slice(&c[0].to_le_bytes());
        out.extend_from_slice(&c[1].to_le_bytes());
    }
    for x in bag.features.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_bag(buf: &[u8], source: &str) -> Result<Bag> {
    let err = |offset: usize, message: String| IgtError::Ingestion {
        source_name: source.to_string(),
        offset,
        message,
    };
    if buf.len() < HEADER_BYTES {
        return Err(err(
            buf.len(),
            format!("truncated header: expected {HEADER_BYTES} bytes, found {}", buf.len()),
        ));
    }
    if &buf[..4] != BAG_MAGIC {
        return Err(err(0, "bad magic (expected IGTB)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(buf[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (n, d_in, label) = (word(1), word(2), word(3));
    let expected = n
        .checked_mul(d_in + 2)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_BYTES))
        .ok_or_else(|| err(4, format!("implausible shape N={n}, d_in={d_in}")))?;
    if buf.len() < expected {
        return Err(err(
            buf.len(),
            format!("truncated file: expected {expected} bytes, found {}", buf.len()),
        ));
    }
    if buf.len() > expected {
        return Err(err(
            expected,
            format!("{} trailing bytes after {expected}-byte body", buf.len() - expected),
        ));
    }
    let mut floats = buf[HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut values: Vec<f32> = Vec::with_capacity(n * (d_in + 2));
    values.extend(&mut floats);
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(err(HEADER_BYTES + 4 * i, "non-finite value".into()));
    }
    let coords = values[..2 * n].chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let features = Tensor::from_vec(n, d_in, values.split_off(2 * n))?;
    Ok(Bag {
        coords,
        features,
        label,
    })
}

pub fn write_bag(path: &Path, bag: &Bag) -> Result<()> {
    std::fs::write(path, encode_bag(bag)?).map_err(|e| IgtError::io(path, e))
}

pub fn read_bag(path: &Path) -> Result<Bag> {
    if !path.exists() {
        return Err(IgtError::MissingFile(path.to_path_buf()));
    }
    let buf = std::fs::read(path).map_err(|e| IgtError::io(path, e))?;
    decode_bag(&buf, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bag {
        Bag {
            coords: vec![[0.0, 1.5], [-2.25, 3.0], [1e-30, f32::MAX]],
            features: Tensor::from_fn(3, 4, |i, j| (i as f32 - j as f32) * 0.1 + f32::EPSILON),
            label: 1,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bag = sample();
        let bytes = encode_bag(&bag).unwrap();
        assert_eq!(bytes.len(), 16 + 4 * 3 * 6);
        let back = decode_bag(&bytes, "mem").unwrap();
        assert_eq!(encode_bag(&back).unwrap(), bytes);
        assert_eq!(back, bag);
    }

    #[test]
    fn truncation_names_lengths() {
        let bytes = encode_bag(&sample()).unwrap();
        let msg = decode_bag(&bytes[..50], "b7").unwrap_err().to_string();
        assert!(
            msg.contains("b7") && msg.contains("expected 88 bytes, found 50"),
            "{msg}"
        );
        let msg = decode_bag(&bytes[..10], "b7").unwrap_err().to_string();
        assert!(msg.contains("expected 16 bytes, found 10"), "{msg}");
    }

    #[test]
    fn trailing_and_non_finite_are_rejected() {
        let mut bytes = encode_bag(&sample()).unwrap();
        bytes.push(0);
        assert!(decode_bag(&bytes, "x").unwrap_err().to_string().contains("at byte 88"));
        bytes.pop();
        bytes[40..44].copy_from_slice(&f32::NAN.to_le_bytes());
        let msg = decode_bag(&bytes, "x").unwrap_err().to_string();
        assert!(msg.contains("at byte 40") && msg.contains("non-finite"), "{msg}");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_bag(&sample()).unwrap();
        bytes[3] = b'X';
        assert!(decode_bag(&bytes, "x").unwrap_err().to_string().contains("bad magic"));
    }
}
