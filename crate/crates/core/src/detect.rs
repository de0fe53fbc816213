//! Volume-level fluid presence from a per-slice score trace.
//!
//! Each slice gets a score (fraction of pixels above a threshold). A slice
//! is flagged when its score clears `score_floor`, or when it clears the
//! lower `grad_floor` while sitting on the rising or falling edge of a
//! strong slice. Flags are smoothed by a majority vote over `2k+1`
//! neighbouring slices, and the volume counts as positive only when at
//! least `min_run` consecutive slices stay flagged. Every rule is monotone
//! in the scores, so raising a score can never retract a detection.

use serde::{Deserialize, Serialize};

use crate::digest::config_digest;
use crate::error::{GmpError, Result};
use crate::image::{Image2D, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectParams {
    /// Pixel threshold used to turn a map slice into a score.
    pub threshold: f64,
    /// Neighbouring slices on each side used for smoothing and scoring.
    pub k: usize,
    pub score_floor: f64,
    pub grad_floor: f64,
    pub min_run: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            k: 1,
            score_floor: 0.02,
            grad_floor: 0.01,
            min_run: 2,
        }
    }
}

impl DetectParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_run == 0 {
            return Err(GmpError::InvalidParameter("min_run must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(GmpError::InvalidParameter(format!(
                "detection threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.score_floor.is_nan() || self.grad_floor.is_nan() {
            return Err(GmpError::InvalidParameter("NaN detection floor".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub slice_scores: Vec<f64>,
    /// Central-difference gradient of the scores (diagnostic).
    pub gradient: Vec<f64>,
    /// Flags before smoothing.
    pub raw_flags: Vec<bool>,
    /// Flags after majority-vote smoothing.
    pub slice_flags: Vec<bool>,
    pub volume_score: f64,
    pub volume_present: bool,
    pub params: DetectParams,
    pub params_digest: String,
}

/// Fraction of pixels strictly above `t`.
pub fn slice_score(slice: &Image2D, t: f64) -> f64 {
    slice.data().iter().filter(|&&v| v > t).count() as f64 / slice.len() as f64
}

pub fn volume_slice_scores(map: &Volume, t: f64) -> Vec<f64> {
    map.slices().iter().map(|s| slice_score(s, t)).collect()
}

/// Central differences inside the trace, one-sided differences at its ends.
pub fn score_gradient(scores: &[f64]) -> Result<Vec<f64>> {
    let n = scores.len();
    if n < 2 {
        return Err(GmpError::InvalidParameter(format!(
            "score gradient needs at least 2 slices, got {n}"
        )));
    }
    Ok((0..n)
        .map(|i| match i {
            0 => scores[1] - scores[0],
            i if i == n - 1 => scores[n - 1] - scores[n - 2],
            i => 0.5 * (scores[i + 1] - scores[i - 1]),
        })
        .collect())
}

fn raw_flags(scores: &[f64], params: &DetectParams) -> Vec<bool> {
    let strong: Vec<bool> = scores.iter().map(|&s| s > params.score_floor).collect();
    (0..scores.len())
        .map(|i| {
            let edge = (i > 0 && strong[i - 1]) || (i + 1 < scores.len() && strong[i + 1]);
            strong[i] || (edge && scores[i] > params.grad_floor)
        })
        .collect()
}

/// Strict majority over a `2k+1` window; slices beyond the ends count as
/// unflagged.
fn majority_smooth(flags: &[bool], k: usize) -> Vec<bool> {
    let n = flags.len() as isize;
    let k = k as isize;
    (0..n)
        .map(|i| {
            let votes = (i - k..=i + k)
                .filter(|&j| j >= 0 && j < n && flags[j as usize])
                .count();
            2 * votes > (2 * k + 1) as usize
        })
        .collect()
}

fn longest_run(flags: &[bool]) -> usize {
    let (mut best, mut cur) = (0, 0);
    for &f in flags {
        cur = if f { cur + 1 } else { 0 };
        best = best.max(cur);
    }
    best
}

/// Mean score over the in-range part of each `2k+1` window.
fn windowed_means(scores: &[f64], k: usize) -> Vec<f64> {
    let n = scores.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(k);
            let hi = (i + k).min(n - 1);
            scores[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

pub fn detect_volume(scores: &[f64], params: &DetectParams) -> Result<DetectionReport> {
    params.validate()?;
    if scores.is_empty() {
        return Err(GmpError::Empty("detection needs at least one slice score"));
    }
    let gradient = if scores.len() >= 2 {
        score_gradient(scores)?
    } else {
        vec![0.0]
    };
    let raw = raw_flags(scores, params);
    let smoothed = majority_smooth(&raw, params.k);
    let volume_present = longest_run(&smoothed) >= params.min_run;
    let volume_score = windowed_means(scores, params.k)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DetectionReport {
        slice_scores: scores.to_vec(),
        gradient,
        raw_flags: raw,
        slice_flags: smoothed,
        volume_score,
        volume_present,
        params: *params,
        params_digest: config_digest(params)?,
    })
}

/// Scores every slice of `map` at `params.threshold`, then detects.
pub fn detect_map(map: &Volume, params: &DetectParams) -> Result<DetectionReport> {
    detect_volume(&volume_slice_scores(map, params.threshold), params)
}
