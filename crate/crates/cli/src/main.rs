//! `gmp` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmp_core::denoise::{median_filter, tv_denoise, TvParams};
use gmp_core::detect::{detect_map, DetectParams};
use gmp_core::eval::{evaluate, render_table, Manifest, ManifestEntry};
use gmp_core::gmp::{build_ensemble, enhance_volume, evenly_spaced_angles, GmpConfig, Psi};
use gmp_core::image::Volume;
use gmp_core::io::{load_volume, save_mask, save_volume};
use gmp_core::parallel::{with_threads, THREADS_ENV};
use gmp_core::phantom::{PhantomConfig, Span};
use gmp_core::pipeline::{run_pipeline, PipelineConfig, PipelineError, RunOptions};
use gmp_core::resample::resize_slice;
use gmp_core::roi::{extract_roi, locate_band, ProfileKind};
use gmp_core::segment::{fluid_score_map, segment_volume, MapKind, SegmentParams, Threshold};
use gmp_core::GmpError;
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "gmp", version, about = "Generalized motion pattern enhancement pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert between PGM stacks and .vol files, optionally resizing.
    Convert(ConvertArgs),
    /// Total-variation denoising of every slice.
    Denoise(DenoiseArgs),
    /// Locate the bright band and crop a fixed-size region around it.
    Roi(RoiArgs),
    /// Build and coalesce the motion-pattern ensemble for every slice.
    Enhance(EnhanceArgs),
    /// Threshold a map and post-process it into a fluid mask.
    Segment(SegmentArgs),
    /// Per-slice and per-volume presence decisions from a fluid map.
    Detect(DetectArgs),
    /// Dice and detection AUC over a set of predictions.
    Eval(EvalArgs),
    /// Generate synthetic volumes with known ground truth.
    Phantom(PhantomArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct Threads {
    /// Worker threads (0 = one per core).
    #[arg(long, env = THREADS_ENV, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct ConvertArgs {
    input: PathBuf,
    /// Output: a `.vol` file, or a directory of PGM slices.
    output: PathBuf,
    /// Target size as HxW, e.g. 512x256.
    #[arg(long, value_parser = parse_dims)]
    resize: Option<(usize, usize)>,
    #[arg(long)]
    minmax_normalize: bool,
    #[command(flatten)]
    threads: Threads,
}

#[derive(Args)]
struct DenoiseArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long)]
    weight: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Median prefilter radius, applied before TV.
    #[arg(long)]
    median: Option<usize>,
    #[command(flatten)]
    threads: Threads,
}

#[derive(Args)]
struct RoiArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value = "argmax")]
    profile: ProfileKind,
    /// Write the Gaussian fit and crop record as JSON.
    #[arg(long)]
    emit_fit: Option<PathBuf>,
}

#[derive(Args)]
struct EnhanceArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    extent: Option<f64>,
    /// Number of directions, evenly spaced over [0°, 180°).
    #[arg(long)]
    angles: Option<usize>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    psi: Option<Psi>,
    /// Also write every per-angle image, one volume per angle.
    #[arg(long)]
    emit_ensemble: Option<PathBuf>,
    #[command(flatten)]
    threads: Threads,
}

#[derive(Args)]
struct SegmentArgs {
    map: PathBuf,
    #[arg(long)]
    source: PathBuf,
    output: PathBuf,
    /// The map holds fluid probabilities rather than enhanced intensities.
    #[arg(long)]
    prob_map: bool,
    /// A number or `otsu`.
    #[arg(long)]
    threshold: Option<Threshold>,
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long)]
    no_cluster_filter: bool,
    #[arg(long)]
    emit_components: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Fluid map (high = fluid), e.g. `stages/5_score.vol` of a pipeline run.
    map: PathBuf,
    /// The map holds GMP-enhanced intensities (dark = fluid) instead.
    #[arg(long)]
    enhanced: bool,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    score_floor: Option<f64>,
    #[arg(long)]
    grad_floor: Option<f64>,
    #[arg(long)]
    min_run: Option<usize>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Seed of the first volume; volume i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pocket count range, e.g. 1..3.
    #[arg(long, value_parser = parse_range)]
    pockets: Option<(usize, usize)>,
    #[arg(long)]
    looks: Option<f64>,
    /// Volume size as DxHxW.
    #[arg(long, value_parser = parse_dims3)]
    dims: Option<(usize, usize, usize)>,
    /// Extra pocket-free volumes appended after the `count` regular ones.
    #[arg(long, default_value_t = 0)]
    empty: usize,
    /// Volumes are assigned round-robin to this many groups.
    #[arg(long, default_value_t = 1)]
    groups: usize,
}

#[derive(Args)]
struct PipelineArgs {
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    /// TOML configuration; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    keep_intermediates: bool,
    /// Ground-truth mask directory; adds Dice to the run manifest.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long)]
    weight: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    extent: Option<f64>,
    #[arg(long)]
    psi: Option<Psi>,
    #[arg(long)]
    threshold: Option<Threshold>,
    #[arg(long)]
    min_area: Option<usize>,
    /// Worker threads (0 = one per core); overrides the config file.
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    Ok((h.trim().parse().map_err(|_| "bad height")?, w.trim().parse().map_err(|_| "bad width")?))
}

fn parse_dims3(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| "expected DxHxW")?;
    match parts[..] {
        [d, h, w] => Ok((d, h, w)),
        _ => Err("expected DxHxW".into()),
    }
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or("expected a..b")?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let (a, b) = (a.trim().parse().map_err(|_| "bad lower bound")?, b.trim().parse().map_err(|_| "bad upper bound")?);
    if a > b {
        return Err("empty range".into());
    }
    Ok((a, b))
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<GmpError> for Failure {
    fn from(e: GmpError) -> Self {
        let code = match e {
            GmpError::MissingPath(_)
            | GmpError::Io { .. }
            | GmpError::Format { .. }
            | GmpError::UnsupportedDepth(_)
            | GmpError::InvalidMaskValue(_)
            | GmpError::InvalidParameter(_)
            | GmpError::Phantom(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: if e.is_io() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), Failure>;

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), GmpError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| GmpError::Serialization(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| GmpError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text + "\n").map_err(|e| GmpError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn map_volume(
    volume: &Volume,
    threads: usize,
    f: impl Fn(&gmp_core::Image2D) -> gmp_core::Result<gmp_core::Image2D> + Sync + Send,
) -> Result<Volume, GmpError> {
    let slices = with_threads(threads, || volume.slices().par_iter().map(&f).collect::<gmp_core::Result<Vec<_>>>())??;
    Volume::new_clamped(slices, volume.meta())
}

fn convert(a: ConvertArgs) -> CliResult {
    let mut volume = load_volume(&a.input)?;
    if a.minmax_normalize {
        volume = volume.minmax_normalized();
    }
    if let Some((h, w)) = a.resize {
        volume = map_volume(&volume, a.threads.threads, |s| resize_slice(s, h, w))?;
    }
    save_volume(&volume, &a.output)?;
    Ok(())
}

fn denoise(a: DenoiseArgs) -> CliResult {
    let mut params = TvParams::default();
    if let Some(v) = a.weight {
        params.weight = v;
    }
    if let Some(v) = a.iters {
        params.max_iters = v;
    }
    if let Some(v) = a.tol {
        params.tol = v;
    }
    params.validate()?;
    let volume = load_volume(&a.input)?;
    let out = map_volume(&volume, a.threads.threads, |s| {
        let pre = match a.median {
            Some(r) => median_filter(s, r)?,
            None => s.clone(),
        };
        Ok(tv_denoise(&pre, &params)?.image)
    })?;
    save_volume(&out, &a.output)?;
    Ok(())
}

fn roi(a: RoiArgs) -> CliResult {
    let volume = load_volume(&a.input)?;
    let fit = locate_band(&volume, a.profile)?;
    let (cropped, record) = extract_roi(&volume, &fit, a.height, a.width)?;
    save_volume(&cropped, &a.output)?;
    if let Some(path) = a.emit_fit {
        write_json(&path, &serde_json::json!({ "fit": fit, "roi": record }))?;
    }
    Ok(())
}

fn enhance(a: EnhanceArgs) -> CliResult {
    let mut cfg = GmpConfig::default();
    if let Some(v) = a.delta {
        cfg.delta = v;
    }
    if let Some(v) = a.extent {
        cfg.extent = v;
    }
    if let Some(n) = a.angles {
        cfg.angles = evenly_spaced_angles(n);
    }
    if let Some(v) = a.neighbors {
        cfg.k_neighbors = v;
    }
    if let Some(v) = a.psi {
        cfg.psi = v;
    }
    cfg.validate()?;
    let volume = load_volume(&a.input)?;
    let out = enhance_volume(&volume, &cfg, a.threads.threads)?;
    save_volume(&out, &a.output)?;

    if let Some(dir) = a.emit_ensemble {
        let ensembles = with_threads(a.threads.threads, || {
            (0..volume.depth())
                .into_par_iter()
                .map(|i| build_ensemble(&volume, i, &cfg))
                .collect::<gmp_core::Result<Vec<_>>>()
        })??;
        for (k, theta) in cfg.angles.iter().enumerate() {
            let slices = ensembles.iter().map(|e| e.per_angle[k].clone()).collect();
            let per_angle = Volume::new_clamped(slices, format!("angle {theta}"))?;
            save_volume(&per_angle, &dir.join(format!("angle_{k:02}")))?;
        }
    }
    Ok(())
}

fn segment(a: SegmentArgs) -> CliResult {
    let mut params = SegmentParams::default();
    if let Some(t) = a.threshold {
        params.threshold = t;
    }
    if let Some(m) = a.min_area {
        params.min_area = m;
    }
    params.cluster_filter = !a.no_cluster_filter;
    let map = load_volume(&a.map)?;
    let source = load_volume(&a.source)?;
    let kind = if a.prob_map {
        MapKind::Probability
    } else {
        MapKind::Enhanced
    };
    let seg = segment_volume(&map, &source, kind, &params)?;
    save_mask(&seg.mask, &a.output)?;
    if let Some(path) = a.emit_components {
        write_json(&path, &seg.components)?;
    }
    Ok(())
}

fn detect(a: DetectArgs) -> CliResult {
    let mut params = DetectParams::default();
    if let Some(v) = a.threshold {
        params.threshold = v;
    }
    if let Some(v) = a.k {
        params.k = v;
    }
    if let Some(v) = a.score_floor {
        params.score_floor = v;
    }
    if let Some(v) = a.grad_floor {
        params.grad_floor = v;
    }
    if let Some(v) = a.min_run {
        params.min_run = v;
    }
    params.validate()?;
    let mut map = load_volume(&a.map)?;
    if a.enhanced {
        map = fluid_score_map(&map);
    }
    let report = detect_map(&map, &params)?;
    write_json(&a.report, &report)?;
    println!(
        "present: {} (score {:.4}, {} of {} slices flagged)",
        report.volume_present,
        report.volume_score,
        report.slice_flags.iter().filter(|&&f| f).count(),
        report.slice_flags.len()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let manifest = Manifest::load(&a.manifest)?;
    let report = evaluate(&a.pred, &a.truth, &manifest)?;
    write_json(&a.out, &report)?;
    let table = render_table(&report);
    if let Some(path) = a.table {
        fs::write(&path, &table).map_err(|e| GmpError::Io { path: path.clone(), source: e })?;
    }
    print!("{table}");
    Ok(())
}

fn phantom(a: PhantomArgs) -> CliResult {
    if a.groups == 0 {
        return Err(GmpError::InvalidParameter("--groups must be at least 1".into()).into());
    }
    let mut base = PhantomConfig::default();
    if let Some((lo, hi)) = a.pockets {
        base.pockets = Span::new(lo, hi);
    }
    if let Some(l) = a.looks {
        base.speckle_looks = l;
    }
    if let Some(d) = a.dims {
        base.dims = d;
    }
    base.validate()?;
    let mut manifest = Manifest::default();
    for i in 0..a.count + a.empty {
        let mut cfg = PhantomConfig {
            seed: a.seed + i as u64,
            ..base.clone()
        };
        if i >= a.count {
            cfg.pockets = Span::new(0, 0);
        }
        let id = format!("vol{i:03}");
        let p = cfg.generate()?;
        save_volume(&p.volume, &a.out.join("volumes").join(format!("{id}.vol")))?;
        save_mask(&p.truth, &a.out.join("truth").join(&id))?;
        manifest.volumes.push(ManifestEntry {
            id,
            group: format!("group{}", i % a.groups),
            label: p.label,
        });
    }
    manifest.save(&a.out.join("labels.json"))?;
    println!("wrote {} volumes to {}", manifest.volumes.len(), a.out.display());
    Ok(())
}

fn pipeline(a: PipelineArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| Failure {
            code: 2,
            message: format!("config {}: {e}", path.display()),
        })?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = a.weight {
        cfg.denoise.tv.weight = v;
    }
    if let Some(v) = a.iters {
        cfg.denoise.tv.max_iters = v;
    }
    if let Some(v) = a.extent {
        cfg.gmp.extent = v;
    }
    if let Some(v) = a.psi {
        cfg.gmp.psi = v;
    }
    if let Some(v) = a.threshold {
        cfg.segment.threshold = v;
    }
    if let Some(v) = a.min_area {
        cfg.segment.min_area = v;
    }
    if let Some(v) = a.threads {
        cfg.threads = v;
    }
    if a.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let (Some(input), Some(output)) = (a.input, a.output) else {
        return Err(Failure {
            code: 2,
            message: "pipeline needs <INPUT> and <OUTPUT> (or --print-config)".into(),
        });
    };
    let options = RunOptions {
        keep_intermediates: a.keep_intermediates,
        truth: a.truth,
    };
    let manifest = run_pipeline(&input, &cfg, &output, &options)?;
    print!(
        "{}: present {} (score {:.4}), {:.1}s",
        manifest.volume, manifest.volume_present, manifest.volume_score, manifest.total_seconds
    );
    if let Some(d) = manifest.dice {
        print!(", dice {d:.4}");
    }
    println!();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Convert(a) => convert(a),
        Command::Denoise(a) => denoise(a),
        Command::Roi(a) => roi(a),
        Command::Enhance(a) => enhance(a),
        Command::Segment(a) => segment(a),
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
        Command::Phantom(a) => phantom(a),
        Command::Pipeline(a) => pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
