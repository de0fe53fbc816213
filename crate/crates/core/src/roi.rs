//! Locating the bright band of a volume and cropping a fixed-size region
//! around it.
//!
//! Every column of every slice votes for the row holding its brightest
//! pixel. A 1D Gaussian fitted to the pooled votes gives the band position,
//! and the crop is centred on that row.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GmpError, Result};
use crate::image::{Image2D, Volume};

/// Lower bound on the fitted spread, in rows.
pub const SIGMA_FLOOR: f64 = 0.5;
const MAX_GN_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowProfile {
    pub counts: Vec<u64>,
    pub total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: f64,
    pub sigma: f64,
    pub amplitude: f64,
    pub residual: f64,
    /// Refinement failed to improve on the moment estimate, which was kept.
    pub fallback: bool,
    pub iterations: usize,
}

/// Placement of a cropped region inside the volume it was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiRecord {
    pub row_offset: usize,
    pub col_offset: usize,
    pub roi_height: usize,
    pub roi_width: usize,
    /// (height, width) of the source volume.
    pub source_dims: (usize, usize),
}

impl RoiRecord {
    pub fn full_frame(height: usize, width: usize) -> Self {
        Self {
            row_offset: 0,
            col_offset: 0,
            roi_height: height,
            roi_width: width,
            source_dims: (height, width),
        }
    }

    pub fn is_full_frame(&self) -> bool {
        self.row_offset == 0
            && self.col_offset == 0
            && (self.roi_height, self.roi_width) == self.source_dims
    }

    /// Maps an ROI pixel coordinate back into the source volume.
    pub fn to_source(&self, row: usize, col: usize) -> (usize, usize) {
        (row + self.row_offset, col + self.col_offset)
    }
}

/// Which per-row statistic drives band localisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    /// Histogram of per-column argmax rows.
    #[default]
    Argmax,
    /// Mean intensity of each row.
    Rowmean,
}

impl std::str::FromStr for ProfileKind {
    type Err = GmpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "argmax" => Ok(ProfileKind::Argmax),
            "rowmean" => Ok(ProfileKind::Rowmean),
            other => Err(GmpError::InvalidParameter(format!(
                "unknown profile '{other}' (expected argmax or rowmean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiParams {
    pub height: usize,
    pub width: usize,
    pub profile: ProfileKind,
}

impl Default for RoiParams {
    fn default() -> Self {
        Self {
            height: 256,
            width: 256,
            profile: ProfileKind::Argmax,
        }
    }
}

fn slice_argmax_counts(slice: &Image2D) -> Vec<u64> {
    let (h, w) = slice.dims();
    let mut best_row = vec![0usize; w];
    let mut best_val = slice.row(0).to_vec();
    for r in 1..h {
        for (c, &v) in slice.row(r).iter().enumerate() {
            // Strict comparison keeps the smallest row on ties.
            if v > best_val[c] {
                best_val[c] = v;
                best_row[c] = r;
            }
        }
    }
    let mut counts = vec![0u64; h];
    for r in best_row {
        counts[r] += 1;
    }
    counts
}

pub fn brightest_row_profile(volume: &Volume) -> RowProfile {
    let partials: Vec<Vec<u64>> = volume.slices().par_iter().map(slice_argmax_counts).collect();
    let mut counts = vec![0u64; volume.height()];
    for part in &partials {
        for (acc, v) in counts.iter_mut().zip(part) {
            *acc += v;
        }
    }
    let total = counts.iter().sum();
    RowProfile { counts, total }
}

/// Mean intensity of every row, pooled over all slices.
pub fn row_mean_profile(volume: &Volume) -> Vec<f64> {
    let (d, h, w) = volume.dims();
    let mut sums = vec![0.0; h];
    for s in volume.slices() {
        for (r, acc) in sums.iter_mut().enumerate() {
            *acc += s.row(r).iter().sum::<f64>();
        }
    }
    let n = (d * w) as f64;
    sums.into_iter().map(|s| s / n).collect()
}

fn gaussian(x: f64, amplitude: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    amplitude * (-0.5 * z * z).exp()
}

/// Sum of squared differences between `samples` and the Gaussian model.
pub fn gaussian_residual(samples: &[f64], amplitude: f64, mean: f64, sigma: f64) -> f64 {
    samples
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let e = y - gaussian(i as f64, amplitude, mean, sigma);
            e * e
        })
        .sum()
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    if !d.is_finite() || d.abs() < 1e-300 {
        return None;
    }
    let mut x = [0.0; 3];
    for (k, xk) in x.iter_mut().enumerate() {
        let mut m = a;
        for i in 0..3 {
            m[i][k] = b[i];
        }
        *xk = det(&m) / d;
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub fn fit_gaussian_1d(profile: &RowProfile) -> Result<GaussianFit> {
    let samples: Vec<f64> = profile.counts.iter().map(|&c| c as f64).collect();
    fit_gaussian_samples(&samples)
}

/// Moment initialisation followed by Gauss–Newton refinement with step
/// halving. The refined fit is kept only if it beats the moment estimate.
pub fn fit_gaussian_samples(samples: &[f64]) -> Result<GaussianFit> {
    let mass: f64 = samples.iter().sum();
    if samples.is_empty() || !(mass > 0.0) || samples.iter().any(|&v| v < 0.0) {
        return Err(GmpError::InvalidParameter(
            "gaussian fit needs a non-negative profile with positive mass".into(),
        ));
    }
    let n = samples.len() as f64;
    let mean0 = samples.iter().enumerate().map(|(i, &y)| i as f64 * y).sum::<f64>() / mass;
    let var0 = samples
        .iter()
        .enumerate()
        .map(|(i, &y)| (i as f64 - mean0).powi(2) * y)
        .sum::<f64>()
        / mass;
    let sigma0 = var0.sqrt().max(SIGMA_FLOOR);
    let amp0 = samples.iter().copied().fold(0.0, f64::max);
    let residual0 = gaussian_residual(samples, amp0, mean0, sigma0);

    let (mut amp, mut mean, mut sigma, mut residual) = (amp0, mean0, sigma0, residual0);
    let mut iterations = 0;
    while iterations < MAX_GN_ITERS {
        iterations += 1;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (i, &y) in samples.iter().enumerate() {
            let x = i as f64;
            let e = gaussian(x, 1.0, mean, sigma);
            let model = amp * e;
            let dxm = x - mean;
            let j = [
                e,
                model * dxm / (sigma * sigma),
                model * dxm * dxm / (sigma * sigma * sigma),
            ];
            let r = y - model;
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let Some(step) = solve3(jtj, jtr) else { break };

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let a = amp + scale * step[0];
            let m = mean + scale * step[1];
            let s = (sigma + scale * step[2]).max(SIGMA_FLOOR);
            if a > 0.0 && m.is_finite() {
                let res = gaussian_residual(samples, a, m, s);
                if res < residual {
                    let gain = residual - res;
                    amp = a;
                    mean = m;
                    sigma = s;
                    residual = res;
                    accepted = true;
                    if gain <= 1e-12 * residual.max(1e-300) {
                        accepted = false;
                    }
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let in_range = (0.0..n).contains(&mean) && amp > 0.0 && sigma >= SIGMA_FLOOR;
    if !in_range || !(residual <= residual0) {
        return Ok(GaussianFit {
            mean: mean0,
            sigma: sigma0,
            amplitude: amp0,
            residual: residual0,
            fallback: true,
            iterations,
        });
    }
    Ok(GaussianFit {
        mean,
        sigma,
        amplitude: amp,
        residual,
        fallback: false,
        iterations,
    })
}

/// Localises the band with the requested profile statistic.
pub fn locate_band(volume: &Volume, kind: ProfileKind) -> Result<GaussianFit> {
    match kind {
        ProfileKind::Argmax => fit_gaussian_1d(&brightest_row_profile(volume)),
        ProfileKind::Rowmean => fit_gaussian_samples(&row_mean_profile(volume)),
    }
}

/// Crops a `roi_height` row band centred on the fitted mean (clamped inside
/// the volume) and a centred `roi_width` column span.
pub fn extract_roi(
    volume: &Volume,
    fit: &GaussianFit,
    roi_height: usize,
    roi_width: usize,
) -> Result<(Volume, RoiRecord)> {
    let (_, h, w) = volume.dims();
    if roi_height == 0 || roi_width == 0 || roi_height > h || roi_width > w {
        return Err(GmpError::InvalidParameter(format!(
            "roi {roi_height}x{roi_width} does not fit a {h}x{w} volume"
        )));
    }
    let center = fit.mean.round() as isize;
    let start = center - (roi_height / 2) as isize;
    let row_offset = start.clamp(0, (h - roi_height) as isize) as usize;
    let col_offset = (w - roi_width) / 2;
    let slices = volume
        .slices()
        .iter()
        .map(|s| s.crop(row_offset, col_offset, roi_height, roi_width))
        .collect::<Result<Vec<_>>>()?;
    let record = RoiRecord {
        row_offset,
        col_offset,
        roi_height,
        roi_width,
        source_dims: (h, w),
    };
    Ok((Volume::new(slices, volume.meta())?, record))
}
