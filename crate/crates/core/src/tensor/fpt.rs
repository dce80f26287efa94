//! FPT1 binary tensor files.
//!
//! Layout: magic `FPT1`, one dtype byte (`0x01` real f64, `0x02` complex as
//! interleaved f64 pairs), one rank byte, `rank` little-endian u64 axis
//! lengths, then the row-major little-endian payload. No padding.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use super::{Grid, Shape};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FPT1";
const HEADER_FIXED: usize = 6;

pub trait FptElement: Copy + Default {
    const TAG: u8;
    const NAME: &'static str;
    const WIDTH: usize;
    fn put(&self, out: &mut Vec<u8>);
    fn take(bytes: &[u8]) -> Self;
}

impl FptElement for f64 {
    const TAG: u8 = 0x01;
    const NAME: &'static str = "real64";
    const WIDTH: usize = 8;
    fn put(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

impl FptElement for Complex64 {
    const TAG: u8 = 0x02;
    const NAME: &'static str = "complex64x2";
    const WIDTH: usize = 16;
    fn put(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.re.to_le_bytes());
        out.extend_from_slice(&self.im.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        Complex64::new(f64::take(&bytes[..8]), f64::take(&bytes[8..16]))
    }
}

fn tag_name(tag: u8) -> String {
    match tag {
        0x01 => f64::NAME.to_string(),
        0x02 => Complex64::NAME.to_string(),
        t => format!("unknown tag 0x{t:02x}"),
    }
}

pub fn encode<T: FptElement>(g: &Grid<T>) -> Vec<u8> {
    let dims = g.shape().dims();
    let mut out = Vec::with_capacity(HEADER_FIXED + 8 * dims.len() + T::WIDTH * g.len());
    out.extend_from_slice(MAGIC);
    out.push(T::TAG);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in g.data() {
        v.put(&mut out);
    }
    out
}

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        reason: reason.into(),
    }
}

pub fn decode<T: FptElement>(bytes: &[u8]) -> Result<Grid<T>> {
    if bytes.len() < HEADER_FIXED {
        return Err(format_err(bytes.len(), "file shorter than the fixed header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic, expected FPT1"));
    }
    let tag = bytes[4];
    if tag != 0x01 && tag != 0x02 {
        return Err(format_err(4, format!("unknown dtype tag 0x{tag:02x}")));
    }
    if tag != T::TAG {
        return Err(Error::TypeTag {
            expected: T::NAME,
            found: tag_name(tag),
        });
    }
    let rank = bytes[5] as usize;
    if rank == 0 {
        return Err(format_err(5, "rank 0"));
    }
    let shape_end = HEADER_FIXED + 8 * rank;
    if bytes.len() < shape_end {
        return Err(format_err(bytes.len(), "truncated shape block"));
    }
    let mut dims = Vec::with_capacity(rank);
    for ax in 0..rank {
        let at = HEADER_FIXED + 8 * ax;
        let d = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let d = usize::try_from(d).map_err(|_| format_err(at, "axis length too large"))?;
        dims.push(d);
    }
    let shape = Shape::new(dims).map_err(|e| format_err(HEADER_FIXED, e.to_string()))?;
    let payload = shape
        .len()
        .checked_mul(T::WIDTH)
        .ok_or_else(|| format_err(HEADER_FIXED, "payload size overflows"))?;
    let expected = shape_end + payload;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload, expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, "trailing bytes after payload"));
    }
    let data = bytes[shape_end..]
        .chunks_exact(T::WIDTH)
        .map(T::take)
        .collect();
    Grid::new(shape, data)
}

pub fn write_tensor<T: FptElement>(path: impl AsRef<Path>, g: &Grid<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(g)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor<T: FptElement>(path: impl AsRef<Path>) -> Result<Grid<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
