//! `.vol` container: magic `GMPV`, little-endian u32 height, width, depth,
//! then depth×height×width little-endian f32 samples, slice-major row-major.

use std::fs;
use std::path::Path;

use crate::error::{GmpError, Result};
use crate::image::{Image2D, Volume};

pub const MAGIC: &[u8; 4] = b"GMPV";
const HEADER_LEN: usize = 16;

pub fn encode(volume: &Volume) -> Vec<u8> {
    let (d, h, w) = volume.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * d * h * w);
    out.extend_from_slice(MAGIC);
    for v in [h, w, d] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for s in volume.slices() {
        for &v in s.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Volume> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(GmpError::format(path, "missing GMPV magic"));
    }
    let field = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
    };
    let (h, w, d) = (field(0), field(1), field(2));
    if h == 0 || w == 0 || d == 0 {
        return Err(GmpError::format(path, "zero dimension in header"));
    }
    let n = h * w;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * n * d {
        return Err(GmpError::format(
            path,
            format!("expected {} payload bytes, found {}", 4 * n * d, body.len()),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let slices = values
        .chunks_exact(n)
        .map(|chunk| Image2D::new(h, w, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| GmpError::format(path, e.to_string()))?;
    Volume::new(slices, path.display().to_string())
        .map_err(|e| GmpError::format(path, e.to_string()))
}

pub fn read(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| GmpError::io(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, volume: &Volume) -> Result<()> {
    fs::write(path, encode(volume)).map_err(|e| GmpError::io(path, e))
}
