//! Loading and saving volumes, masks and probability maps.
//!
//! A volume on disk is either a directory of P5 PGM slices (read in
//! lexicographic filename order) or a single `.vol` file. A lone `.pgm` file
//! loads as a one-slice volume. PGM samples are normalized by the file's
//! maxval, so only 8-bit and 16-bit rasters are accepted.

pub mod pgm;
pub mod vol;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{GmpError, Result};
use crate::image::{Image2D, Volume};
use crate::roi::RoiRecord;
use crate::segment::SegmentationMask;

pub use pgm::PgmImage;

const ROI_SIDECAR: &str = "roi.json";

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Lists the `.pgm` files of a directory in lexicographic order.
pub fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| GmpError::io(dir, e))? {
        let path = entry.map_err(|e| GmpError::io(dir, e))?.path();
        if path.is_file() && has_ext(&path, "pgm") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(GmpError::format(dir, "directory contains no .pgm slices"));
    }
    Ok(files)
}

fn pgm_to_image(pgm: &PgmImage) -> Image2D {
    let scale = 1.0 / f64::from(pgm.maxval);
    let data = pgm.samples.iter().map(|&s| f64::from(s) * scale).collect();
    Image2D::from_raw(pgm.height, pgm.width, data)
}

fn slice_name(index: usize, count: usize) -> String {
    let digits = count.saturating_sub(1).to_string().len().max(4);
    format!("slice_{index:0digits$}.pgm")
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GmpError::io(dir, e))?;
    // Stale slices from an earlier, deeper volume would corrupt the stack.
    for entry in fs::read_dir(dir).map_err(|e| GmpError::io(dir, e))? {
        let path = entry.map_err(|e| GmpError::io(dir, e))?.path();
        if path.is_file() && has_ext(&path, "pgm") {
            fs::remove_file(&path).map_err(|e| GmpError::io(&path, e))?;
        }
    }
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    if !path.exists() {
        return Err(GmpError::MissingPath(path.to_path_buf()));
    }
    if path.is_file() {
        if has_ext(path, "vol") {
            return vol::read(path);
        }
        let pgm = pgm::read(path)?;
        return Volume::new(vec![pgm_to_image(&pgm)], path.display().to_string());
    }
    let files = pgm_files(path)?;
    let mut slices = Vec::with_capacity(files.len());
    for f in &files {
        let pgm = pgm::read(f)?;
        slices.push(pgm_to_image(&pgm));
    }
    Volume::new(slices, path.display().to_string())
}

/// Writes a volume as `.vol` when the path has that extension, otherwise as a
/// directory of 16-bit PGM slices.
pub fn save_volume(volume: &Volume, path: &Path) -> Result<()> {
    if has_ext(path, "vol") {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| GmpError::io(parent, e))?;
        }
        return vol::write(path, volume);
    }
    save_probability_map(volume, path)
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Stores a `[0, 1]` map as 16-bit PGM slices, value × 65535 rounded.
pub fn save_probability_map(map: &Volume, dir: &Path) -> Result<()> {
    prepare_dir(dir)?;
    let (d, h, w) = map.dims();
    for (i, s) in map.slices().iter().enumerate() {
        let pgm = PgmImage {
            width: w,
            height: h,
            maxval: 65535,
            samples: s.data().iter().map(|&v| quantize16(v)).collect(),
        };
        pgm::write(&dir.join(slice_name(i, d)), &pgm)?;
    }
    Ok(())
}

pub fn load_probability_map(path: &Path) -> Result<Volume> {
    load_volume(path)
}

/// Writes a mask as 8-bit PGM slices holding 0 or 255, plus a `roi.json`
/// sidecar recording where the mask sits in the original volume.
pub fn save_mask(mask: &SegmentationMask, dir: &Path) -> Result<()> {
    prepare_dir(dir)?;
    let (d, h, w) = mask.dims();
    for (i, s) in mask.slices().iter().enumerate() {
        let pgm = PgmImage {
            width: w,
            height: h,
            maxval: 255,
            samples: s.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect(),
        };
        pgm::write(&dir.join(slice_name(i, d)), &pgm)?;
    }
    let sidecar = dir.join(ROI_SIDECAR);
    let json = serde_json::to_string_pretty(mask.roi())
        .map_err(|e| GmpError::Serialization(e.to_string()))?;
    fs::write(&sidecar, json + "\n").map_err(|e| GmpError::io(&sidecar, e))
}

pub fn load_mask(dir: &Path) -> Result<SegmentationMask> {
    if !dir.exists() {
        return Err(GmpError::MissingPath(dir.to_path_buf()));
    }
    let files = pgm_files(dir)?;
    let mut slices = Vec::with_capacity(files.len());
    let mut dims = None;
    for f in &files {
        let pgm = pgm::read(f)?;
        let this = (pgm.height, pgm.width);
        match dims {
            None => dims = Some(this),
            Some(expected) if expected != this => {
                return Err(GmpError::DimensionMismatch {
                    expected,
                    found: this,
                })
            }
            _ => {}
        }
        let mut bits = Vec::with_capacity(pgm.samples.len());
        for &s in &pgm.samples {
            match s {
                0 => bits.push(0u8),
                255 => bits.push(1u8),
                other => return Err(GmpError::InvalidMaskValue(other)),
            }
        }
        slices.push(bits);
    }
    let (h, w) = dims.expect("pgm_files returns at least one file");
    let sidecar = dir.join(ROI_SIDECAR);
    let roi = if sidecar.exists() {
        let text = fs::read_to_string(&sidecar).map_err(|e| GmpError::io(&sidecar, e))?;
        serde_json::from_str(&text).map_err(|e| GmpError::format(&sidecar, e.to_string()))?
    } else {
        RoiRecord::full_frame(h, w)
    };
    SegmentationMask::new(h, w, slices, roi)
}
