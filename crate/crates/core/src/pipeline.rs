//! End-to-end processing: load → resize → denoise → ROI → enhance →
//! segment → detect, with an optional evaluation against a truth mask.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoise::{median_filter, tv_denoise, TvParams};
use crate::detect::{detect_volume, DetectParams, DetectionReport};
use crate::digest::{canonical_toml, config_digest};
use crate::error::{GmpError, Result};
use crate::eval::dice;
use crate::gmp::{enhance_volume, GmpConfig};
use crate::image::{Image2D, Volume};
use crate::io::{load_mask, load_volume, save_mask, save_volume};
use crate::parallel::with_threads;
use crate::resample::resize_slice;
use crate::roi::{extract_roi, locate_band, GaussianFit, RoiParams, RoiRecord};
use crate::segment::{fluid_score_map, segment_volume, ComponentRecord, MapKind, SegmentParams, SegmentationMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResizeParams {
    pub enabled: bool,
    pub height: usize,
    pub width: usize,
}

impl Default for ResizeParams {
    fn default() -> Self {
        Self {
            enabled: true,
            height: 512,
            width: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseParams {
    pub enabled: bool,
    /// Optional median prefilter radius; 0 disables it.
    pub median_radius: usize,
    pub tv: TvParams,
}

impl Default for DenoiseParams {
    fn default() -> Self {
        Self {
            enabled: true,
            median_radius: 0,
            tv: TvParams::default(),
        }
    }
}

/// Every knob of a pipeline run. The TOML rendering produced by
/// [`PipelineConfig::to_toml`] is canonical: parsing it and rendering again
/// gives the same bytes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub threads: usize,
    pub minmax_normalize: bool,
    pub resize: ResizeParams,
    pub denoise: DenoiseParams,
    pub roi: RoiParams,
    pub gmp: GmpConfig,
    pub segment: SegmentParams,
    pub detect: DetectParams,
}

impl PipelineConfig {
    pub fn to_toml(&self) -> Result<String> {
        canonical_toml(self)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GmpError::Serialization(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GmpError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Digest of everything that affects the outputs (the thread count
    /// does not).
    pub fn processing_digest(&self) -> Result<String> {
        config_digest(&PipelineConfig {
            threads: 0,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.resize.enabled && (self.resize.height < 2 || self.resize.width < 2) {
            return Err(GmpError::InvalidParameter("resize target must be at least 2x2".into()));
        }
        self.denoise.tv.validate()?;
        self.gmp.validate()?;
        self.detect.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Load,
    Resize,
    Denoise,
    Roi,
    Enhance,
    Segment,
    Detect,
    Eval,
    Write,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Resize => "resize",
            Stage::Denoise => "denoise",
            Stage::Roi => "roi",
            Stage::Enhance => "enhance",
            Stage::Segment => "segment",
            Stage::Detect => "detect",
            Stage::Eval => "eval",
            Stage::Write => "write",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
#[error("stage {stage} failed for volume '{volume}': {source}")]
pub struct PipelineError {
    pub stage: Stage,
    pub volume: String,
    #[source]
    pub source: GmpError,
}

impl PipelineError {
    /// True for failures caused by the caller's paths or files rather than by
    /// processing.
    pub fn is_io(&self) -> bool {
        matches!(self.stage, Stage::Load | Stage::Write | Stage::Config)
            || matches!(
                self.source,
                GmpError::MissingPath(_) | GmpError::Io { .. } | GmpError::Format { .. }
            )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

/// In-memory results of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Final mask in the coordinates of the loaded volume.
    pub mask: SegmentationMask,
    /// Final mask inside the ROI of the standardized volume.
    pub roi_mask: SegmentationMask,
    pub report: DetectionReport,
    pub fit: GaussianFit,
    pub roi: RoiRecord,
    pub components: Vec<ComponentRecord>,
    pub threshold: f64,
    pub timings: Vec<StageTiming>,
    pub intermediates: Option<Intermediates>,
}

#[derive(Debug, Clone)]
pub struct Intermediates {
    pub resized: Volume,
    pub denoised: Volume,
    pub roi: Volume,
    pub enhanced: Volume,
}

fn map_slices(volume: &Volume, f: impl Fn(&Image2D) -> Result<Image2D> + Sync + Send) -> Result<Volume> {
    let slices = volume.slices().par_iter().map(f).collect::<Result<Vec<_>>>()?;
    Volume::new_clamped(slices, volume.meta())
}

struct Timer {
    timings: Vec<StageTiming>,
    volume: String,
}

impl Timer {
    fn run<T>(&mut self, stage: Stage, f: impl FnOnce() -> Result<T>) -> std::result::Result<T, PipelineError> {
        let start = Instant::now();
        let out = f().map_err(|source| PipelineError {
            stage,
            volume: self.volume.clone(),
            source,
        })?;
        self.timings.push(StageTiming {
            stage,
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }
}

/// Runs every processing stage on an already loaded volume.
pub fn process_volume(
    volume: &Volume,
    config: &PipelineConfig,
    keep_intermediates: bool,
) -> std::result::Result<PipelineOutput, PipelineError> {
    let name = volume.meta().to_string();
    let fail = |stage, source| PipelineError {
        stage,
        volume: name.clone(),
        source,
    };
    config.validate().map_err(|e| fail(Stage::Config, e))?;
    with_threads(config.threads, || process_inner(volume, config, keep_intermediates))
        .map_err(|e| fail(Stage::Config, e))?
}

fn process_inner(
    volume: &Volume,
    config: &PipelineConfig,
    keep_intermediates: bool,
) -> std::result::Result<PipelineOutput, PipelineError> {
    let mut timer = Timer {
        timings: Vec::new(),
        volume: volume.meta().to_string(),
    };
    let (_, src_h, src_w) = volume.dims();

    let normalized;
    let input = if config.minmax_normalize {
        normalized = volume.minmax_normalized();
        &normalized
    } else {
        volume
    };

    let resized = timer.run(Stage::Resize, || {
        if config.resize.enabled {
            map_slices(input, |s| resize_slice(s, config.resize.height, config.resize.width))
        } else {
            Ok(input.clone())
        }
    })?;

    let denoised = timer.run(Stage::Denoise, || {
        if !config.denoise.enabled {
            return Ok(resized.clone());
        }
        map_slices(&resized, |s| {
            let pre = if config.denoise.median_radius > 0 {
                median_filter(s, config.denoise.median_radius)?
            } else {
                s.clone()
            };
            Ok(tv_denoise(&pre, &config.denoise.tv)?.image)
        })
    })?;

    let (fit, roi_volume, roi) = timer.run(Stage::Roi, || {
        let fit = locate_band(&denoised, config.roi.profile)?;
        let (roi_volume, record) = extract_roi(&denoised, &fit, config.roi.height, config.roi.width)?;
        Ok((fit, roi_volume, record))
    })?;

    // Enhancement runs inside the pool installed by `process_volume`, so the
    // inner pool size matches the configured thread count.
    let enhanced = timer.run(Stage::Enhance, || enhance_volume(&roi_volume, &config.gmp, config.threads))?;

    let seg = timer.run(Stage::Segment, || {
        segment_volume(&enhanced, &roi_volume, MapKind::Enhanced, &config.segment)
    })?;

    let report = timer.run(Stage::Detect, || {
        let n = (roi.roi_height * roi.roi_width) as f64;
        let scores: Vec<f64> = (0..seg.mask.depth())
            .map(|i| seg.mask.slice_count(i) as f64 / n)
            .collect();
        detect_volume(&scores, &config.detect)
    })?;

    let roi_mask = seg.mask.with_roi(roi).map_err(|source| PipelineError {
        stage: Stage::Segment,
        volume: timer.volume.clone(),
        source,
    })?;
    let mask = roi_mask
        .embed_in_source()
        .resample_nearest(src_h, src_w)
        .map_err(|source| PipelineError {
            stage: Stage::Segment,
            volume: timer.volume.clone(),
            source,
        })?;

    Ok(PipelineOutput {
        mask,
        roi_mask,
        report,
        fit,
        roi,
        components: seg.components,
        threshold: seg.threshold,
        timings: timer.timings,
        intermediates: keep_intermediates.then_some(Intermediates {
            resized,
            denoised,
            roi: roi_volume,
            enhanced,
        }),
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub keep_intermediates: bool,
    /// Ground-truth mask directory for an optional Dice evaluation.
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub input: String,
    pub volume: String,
    pub config_digest: String,
    pub threads: usize,
    pub timings: Vec<StageTiming>,
    pub total_seconds: f64,
    pub fit: GaussianFit,
    pub roi: RoiRecord,
    pub threshold: f64,
    pub volume_present: bool,
    pub volume_score: f64,
    pub dice: Option<f64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| GmpError::Serialization(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| GmpError::io(path, e))
}

/// Loads `input`, processes it and writes artifacts under `out_dir`:
/// `mask/`, `report.json`, `components.json`, `config.toml`,
/// `manifest.json`, and with intermediates a `stages/` directory.
pub fn run_pipeline(
    input: &Path,
    config: &PipelineConfig,
    out_dir: &Path,
    options: &RunOptions,
) -> std::result::Result<RunManifest, PipelineError> {
    let started = Instant::now();
    let volume_name = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| input.display().to_string());
    let fail = |stage, source| PipelineError {
        stage,
        volume: volume_name.clone(),
        source,
    };

    let load_start = Instant::now();
    let volume = load_volume(input)
        .map_err(|e| fail(Stage::Load, e))?
        .with_meta(volume_name.clone());
    let load_time = load_start.elapsed().as_secs_f64();

    let output = process_volume(&volume, config, options.keep_intermediates)?;

    let write_start = Instant::now();
    let dice_score = match &options.truth {
        Some(path) => {
            let truth = load_mask(path).map_err(|e| fail(Stage::Eval, e))?;
            Some(dice(&output.mask, &truth).map_err(|e| fail(Stage::Eval, e))?)
        }
        None => None,
    };

    let write = || -> Result<()> {
        fs::create_dir_all(out_dir).map_err(|e| GmpError::io(out_dir, e))?;
        save_mask(&output.mask, &out_dir.join("mask"))?;
        write_json(&out_dir.join("report.json"), &output.report)?;
        write_json(&out_dir.join("components.json"), &output.components)?;
        // The thread count lives in the manifest so that every other
        // artifact is independent of it.
        let cfg_path = out_dir.join("config.toml");
        let recorded = PipelineConfig {
            threads: 0,
            ..config.clone()
        };
        fs::write(&cfg_path, recorded.to_toml()?).map_err(|e| GmpError::io(&cfg_path, e))?;
        if let Some(stages) = &output.intermediates {
            let dir = out_dir.join("stages");
            fs::create_dir_all(&dir).map_err(|e| GmpError::io(&dir, e))?;
            save_volume(&stages.resized, &dir.join("1_resized.vol"))?;
            save_volume(&stages.denoised, &dir.join("2_denoised.vol"))?;
            save_volume(&stages.roi, &dir.join("3_roi.vol"))?;
            save_volume(&stages.enhanced, &dir.join("4_enhanced.vol"))?;
            save_volume(&fluid_score_map(&stages.enhanced), &dir.join("5_score.vol"))?;
            save_mask(&output.roi_mask, &dir.join("6_roi_mask"))?;
        }
        Ok(())
    };
    write().map_err(|e| fail(Stage::Write, e))?;

    let mut timings = vec![StageTiming {
        stage: Stage::Load,
        seconds: load_time,
    }];
    timings.extend(output.timings.iter().cloned());
    timings.push(StageTiming {
        stage: Stage::Write,
        seconds: write_start.elapsed().as_secs_f64(),
    });

    let manifest = RunManifest {
        input: input.display().to_string(),
        volume: volume_name.clone(),
        config_digest: config.processing_digest().map_err(|e| fail(Stage::Config, e))?,
        threads: if config.threads == 0 {
            rayon::current_num_threads()
        } else {
            config.threads
        },
        timings,
        total_seconds: started.elapsed().as_secs_f64(),
        fit: output.fit,
        roi: output.roi,
        threshold: output.threshold,
        volume_present: output.report.volume_present,
        volume_score: output.report.volume_score,
        dice: dice_score,
    };
    write_json(&out_dir.join("manifest.json"), &manifest).map_err(|e| fail(Stage::Write, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_canonically() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        let back = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn otsu_threshold_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.segment.threshold = crate::segment::Threshold::Otsu;
        let text = cfg.to_toml().unwrap();
        assert!(text.contains("threshold = \"otsu\""));
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = PipelineConfig::default().to_toml().unwrap();
        text = text.replacen("threads = 0", "threads = 0\nbogus = 1", 1);
        assert!(PipelineConfig::from_toml(&text).is_err());
    }

    #[test]
    fn digest_ignores_thread_count() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            threads: 8,
            ..a.clone()
        };
        assert_eq!(a.processing_digest().unwrap(), b.processing_digest().unwrap());
    }
}
