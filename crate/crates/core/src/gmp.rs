//! Generalized motion pattern synthesis.
//!
//! For one direction θ, the source slice (and its neighbours across the
//! volume) is translated by `j·δ` along θ for every `j` in `−D/δ ..= D/δ`,
//! and the stack is reduced pixelwise by its minimum. Dark compact
//! structures survive the minimum while bright background is replaced by
//! its darkest shifted neighbour. One such image per direction forms the
//! ensemble, which a second reduction (ψ) collapses into the enhanced slice.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest::config_digest;
use crate::error::{GmpError, Result};
use crate::image::{Image2D, Volume};
use crate::parallel::with_threads;
use crate::resample::translate_min_into;

/// Reduction applied across the translation stack of one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerCoalescer {
    #[default]
    Min,
}

/// Reduction applied across the per-direction ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Psi {
    #[default]
    Min,
    Mean,
    Max,
}

impl std::str::FromStr for Psi {
    type Err = GmpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(Psi::Min),
            "mean" => Ok(Psi::Mean),
            "max" => Ok(Psi::Max),
            other => Err(GmpError::InvalidParameter(format!(
                "unknown coalescer '{other}' (expected min, mean or max)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Border {
    #[default]
    Replicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmpConfig {
    /// Translation step δ in pixels.
    pub delta: f64,
    /// Translation extent D in pixels; the stack covers `−D ..= D` in steps
    /// of δ, so `D/δ` must be a whole number.
    pub extent: f64,
    /// Translation directions in degrees, each in `[0, 180)`.
    pub angles: Vec<f64>,
    /// Neighbouring slices gathered on each side of the centre slice.
    pub k_neighbors: usize,
    pub inner: InnerCoalescer,
    pub psi: Psi,
    pub border: Border,
}

/// `count` directions evenly spaced over `[0°, 180°)`.
pub fn evenly_spaced_angles(count: usize) -> Vec<f64> {
    (0..count).map(|i| 180.0 * i as f64 / count as f64).collect()
}

impl Default for GmpConfig {
    fn default() -> Self {
        Self {
            delta: 1.0,
            extent: 5.0,
            angles: evenly_spaced_angles(8),
            k_neighbors: 1,
            inner: InnerCoalescer::Min,
            psi: Psi::Min,
            border: Border::Replicate,
        }
    }
}

impl GmpConfig {
    /// Single-direction configuration with no translation and no
    /// neighbours: enhancement becomes the identity.
    pub fn identity() -> Self {
        Self {
            extent: 0.0,
            angles: vec![0.0],
            k_neighbors: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(GmpError::InvalidParameter(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if !(self.extent >= 0.0 && self.extent.is_finite()) {
            return Err(GmpError::InvalidParameter(format!(
                "extent must be non-negative, got {}",
                self.extent
            )));
        }
        let ratio = self.extent / self.delta;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(GmpError::InvalidParameter(format!(
                "extent {} is not a whole number of {} pixel steps",
                self.extent, self.delta
            )));
        }
        if self.angles.is_empty() {
            return Err(GmpError::InvalidParameter("no translation angles".into()));
        }
        for (i, &a) in self.angles.iter().enumerate() {
            if !(0.0..180.0).contains(&a) {
                return Err(GmpError::InvalidParameter(format!(
                    "angle {a} outside [0, 180)"
                )));
            }
            if self.angles[..i].contains(&a) {
                return Err(GmpError::InvalidParameter(format!("duplicate angle {a}")));
            }
        }
        Ok(())
    }

    /// Number of shifts on each side of the untranslated image.
    pub fn steps(&self) -> usize {
        (self.extent / self.delta).round() as usize
    }

    /// Images per direction and per gathered slice: `2·D/δ + 1`.
    pub fn stack_size(&self) -> usize {
        2 * self.steps() + 1
    }

    pub fn digest(&self) -> Result<String> {
        config_digest(self)
    }

    /// Translation offsets (dx, dy) for direction `theta_deg`. Components
    /// within 1e-9 of an integer are snapped so axis-aligned directions give
    /// exact pixel shifts.
    pub fn offsets(&self, theta_deg: f64) -> Vec<(f64, f64)> {
        let (sin, cos) = theta_deg.to_radians().sin_cos();
        let snap = |v: f64| {
            let r = v.round();
            if (v - r).abs() < 1e-9 {
                r
            } else {
                v
            }
        };
        let n = self.steps() as i64;
        (-n..=n)
            .map(|j| {
                let s = j as f64 * self.delta;
                (snap(s * cos), snap(s * sin))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmpEnsemble {
    /// One image per configured angle, in configuration order.
    pub per_angle: Vec<Image2D>,
    pub slice_index: usize,
    pub config_digest: String,
}

/// Min-coalesced translation stack of `slices` along `theta_deg`.
///
/// Every gathered slice is shifted by every offset of the direction, and the
/// output is the pixelwise minimum over all of them. The zero offset is part
/// of the stack, so the output never exceeds any input slice.
pub fn gmp_single_angle(slices: &[&Image2D], theta_deg: f64, config: &GmpConfig) -> Result<Image2D> {
    config.validate()?;
    let first = slices.first().ok_or(GmpError::Empty("gmp needs at least one slice"))?;
    let dims = first.dims();
    if let Some(bad) = slices.iter().find(|s| s.dims() != dims) {
        return Err(GmpError::DimensionMismatch {
            expected: dims,
            found: bad.dims(),
        });
    }
    let offsets = config.offsets(theta_deg);
    let mut acc = vec![f64::INFINITY; first.len()];
    for s in slices {
        for &(dx, dy) in &offsets {
            translate_min_into(s, dx, dy, &mut acc);
        }
    }
    Ok(Image2D::from_raw(dims.0, dims.1, acc))
}

/// Slice indices `index−k ..= index+k`, clamped to the volume.
pub fn neighbor_indices(depth: usize, index: usize, k: usize) -> Vec<usize> {
    let lo = index as isize - k as isize;
    let hi = index as isize + k as isize;
    (lo..=hi)
        .map(|i| i.clamp(0, depth as isize - 1) as usize)
        .collect()
}

fn ensemble_images(volume: &Volume, slice_index: usize, config: &GmpConfig) -> Result<Vec<Image2D>> {
    let gathered: Vec<&Image2D> = neighbor_indices(volume.depth(), slice_index, config.k_neighbors)
        .into_iter()
        .map(|i| volume.slice(i))
        .collect();
    config
        .angles
        .par_iter()
        .map(|&theta| gmp_single_angle(&gathered, theta, config))
        .collect()
}

pub fn build_ensemble(volume: &Volume, slice_index: usize, config: &GmpConfig) -> Result<GmpEnsemble> {
    if slice_index >= volume.depth() {
        return Err(GmpError::IndexOutOfRange {
            index: slice_index,
            len: volume.depth(),
        });
    }
    config.validate()?;
    Ok(GmpEnsemble {
        per_angle: ensemble_images(volume, slice_index, config)?,
        slice_index,
        config_digest: config.digest()?,
    })
}

fn coalesce_images(images: &[Image2D], psi: Psi) -> Result<Image2D> {
    let first = images.first().ok_or(GmpError::Empty("empty gmp ensemble"))?;
    let (h, w) = first.dims();
    if let Some(bad) = images.iter().find(|i| i.dims() != (h, w)) {
        return Err(GmpError::DimensionMismatch {
            expected: (h, w),
            found: bad.dims(),
        });
    }
    let mut acc = first.data().to_vec();
    for img in &images[1..] {
        let data = img.data();
        match psi {
            Psi::Min => acc.iter_mut().zip(data).for_each(|(a, &v)| *a = a.min(v)),
            Psi::Max => acc.iter_mut().zip(data).for_each(|(a, &v)| *a = a.max(v)),
            Psi::Mean => acc.iter_mut().zip(data).for_each(|(a, &v)| *a += v),
        }
    }
    if psi == Psi::Mean {
        let k = images.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
    }
    Ok(Image2D::from_raw(h, w, acc))
}

/// Pixelwise ψ across the ensemble members, in ensemble order.
pub fn coalesce_ensemble(ensemble: &GmpEnsemble, psi: Psi) -> Result<Image2D> {
    coalesce_images(&ensemble.per_angle, psi)
}

/// Enhances every slice of `volume` with `config` (ψ taken from
/// `config.psi`) on `threads` workers (`0` = automatic). The result does not
/// depend on the thread count.
///
/// Equivalent to coalescing [`build_ensemble`] for every slice, but each
/// slice's translated minimum is computed once per angle and shared by the
/// neighbours that gather it; minima are exact, so the output is
/// bit-identical.
pub fn enhance_volume(volume: &Volume, config: &GmpConfig, threads: usize) -> Result<Volume> {
    config.validate()?;
    let depth = volume.depth();
    let (h, w) = (volume.height(), volume.width());
    let slices = with_threads(threads, || {
        let mut acc: Vec<Vec<f64>> = vec![Vec::new(); depth];
        for (a, &theta) in config.angles.iter().enumerate() {
            let offsets = config.offsets(theta);
            let own: Vec<Vec<f64>> = volume
                .slices()
                .par_iter()
                .map(|s| {
                    let mut m = vec![f64::INFINITY; s.len()];
                    for &(dx, dy) in &offsets {
                        translate_min_into(s, dx, dy, &mut m);
                    }
                    m
                })
                .collect();
            acc.par_iter_mut().enumerate().for_each(|(i, out)| {
                let mut nb = neighbor_indices(depth, i, config.k_neighbors).into_iter();
                let first = nb.next().map(|j| own[j].clone()).unwrap_or_default();
                let gmp = nb.fold(first, |mut m, j| {
                    m.iter_mut().zip(&own[j]).for_each(|(a, &v)| *a = a.min(v));
                    m
                });
                if a == 0 {
                    *out = gmp;
                    return;
                }
                match config.psi {
                    Psi::Min => out.iter_mut().zip(&gmp).for_each(|(o, &v)| *o = o.min(v)),
                    Psi::Max => out.iter_mut().zip(&gmp).for_each(|(o, &v)| *o = o.max(v)),
                    Psi::Mean => out.iter_mut().zip(&gmp).for_each(|(o, &v)| *o += v),
                }
            });
        }
        if config.psi == Psi::Mean {
            let k = config.angles.len() as f64;
            acc.par_iter_mut().for_each(|s| s.iter_mut().for_each(|v| *v /= k));
        }
        acc.into_iter()
            .map(|d| Image2D::new(h, w, d))
            .collect::<Result<Vec<_>>>()
    })??;
    Volume::new_clamped(slices, volume.meta())
}
