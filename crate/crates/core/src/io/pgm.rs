//! Binary (P5) PGM reading and writing for 8-bit and 16-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{GmpError, Result};

/// Raw PGM raster: samples stay in file units, `maxval` says how to scale them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl PgmImage {
    pub fn bytes_per_sample(&self) -> usize {
        if self.maxval > 255 {
            2
        } else {
            1
        }
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Option<u32> {
        std::str::from_utf8(self.token()?).ok()?.parse().ok()
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<PgmImage> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    if cur.token() != Some(b"P5".as_slice()) {
        return Err(GmpError::format(path, "not a binary PGM (missing P5 magic)"));
    }
    let width = cur.number().ok_or_else(|| GmpError::format(path, "bad width"))? as usize;
    let height = cur.number().ok_or_else(|| GmpError::format(path, "bad height"))? as usize;
    let maxval = cur.number().ok_or_else(|| GmpError::format(path, "bad maxval"))?;
    if width == 0 || height == 0 {
        return Err(GmpError::format(path, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(GmpError::UnsupportedDepth(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(GmpError::format(path, "truncated header"));
    }
    let raster = &bytes[cur.pos + 1..];
    let n = width * height;
    let samples: Vec<u16> = if maxval <= 255 {
        if raster.len() < n {
            return Err(GmpError::format(path, "truncated raster"));
        }
        raster[..n].iter().map(|&b| u16::from(b)).collect()
    } else {
        if raster.len() < 2 * n {
            return Err(GmpError::format(path, "truncated raster"));
        }
        raster[..2 * n]
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]))
            .collect()
    };
    if let Some(&bad) = samples.iter().find(|&&s| u32::from(s) > maxval) {
        return Err(GmpError::format(
            path,
            format!("sample {bad} exceeds maxval {maxval}"),
        ));
    }
    Ok(PgmImage {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode(img: &PgmImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.bytes_per_sample() == 1 {
        out.extend(img.samples.iter().map(|&s| s as u8));
    } else {
        for s in &img.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    }
    out
}

pub fn read(path: &Path) -> Result<PgmImage> {
    let bytes = fs::read(path).map_err(|e| GmpError::io(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, img: &PgmImage) -> Result<()> {
    fs::write(path, encode(img)).map_err(|e| GmpError::io(path, e))
}
