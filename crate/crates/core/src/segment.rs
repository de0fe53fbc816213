//! Turning enhanced volumes or probability maps into binary fluid masks:
//! thresholding, per-slice connected components, a minimum-area filter and a
//! two-cluster split on component intensity that keeps the darker cluster.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GmpError, Result};
use crate::image::{Image2D, Volume};
use crate::roi::RoiRecord;

/// Binary mask volume; every slice stores 0 or 1 per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    height: usize,
    width: usize,
    slices: Vec<Vec<u8>>,
    roi: RoiRecord,
}

impl SegmentationMask {
    pub fn new(height: usize, width: usize, slices: Vec<Vec<u8>>, roi: RoiRecord) -> Result<Self> {
        if slices.is_empty() {
            return Err(GmpError::Empty("mask needs at least one slice"));
        }
        for s in &slices {
            if s.len() != height * width {
                return Err(GmpError::InvalidParameter(format!(
                    "mask slice of length {} does not match {height}x{width}",
                    s.len()
                )));
            }
            if let Some(&bad) = s.iter().find(|&&v| v > 1) {
                return Err(GmpError::InvalidMaskValue(u16::from(bad)));
            }
        }
        if (roi.roi_height, roi.roi_width) != (height, width) {
            return Err(GmpError::DimensionMismatch {
                expected: (roi.roi_height, roi.roi_width),
                found: (height, width),
            });
        }
        Ok(Self {
            height,
            width,
            slices,
            roi,
        })
    }

    pub fn empty(depth: usize, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            slices: vec![vec![0; height * width]; depth],
            roi: RoiRecord::full_frame(height, width),
        }
    }

    /// Foreground wherever `predicate` holds on the volume's samples.
    pub fn from_volume(volume: &Volume, predicate: impl Fn(f64) -> bool + Sync) -> Self {
        let (_, h, w) = volume.dims();
        let slices = volume
            .slices()
            .iter()
            .map(|s| s.data().iter().map(|&v| u8::from(predicate(v))).collect())
            .collect();
        Self {
            height: h,
            width: w,
            slices,
            roi: RoiRecord::full_frame(h, w),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.slices.len(), self.height, self.width)
    }

    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn slices(&self) -> &[Vec<u8>] {
        &self.slices
    }

    pub fn slice(&self, index: usize) -> &[u8] {
        &self.slices[index]
    }

    pub fn roi(&self) -> &RoiRecord {
        &self.roi
    }

    pub fn with_roi(mut self, roi: RoiRecord) -> Result<Self> {
        if (roi.roi_height, roi.roi_width) != (self.height, self.width) {
            return Err(GmpError::DimensionMismatch {
                expected: (roi.roi_height, roi.roi_width),
                found: (self.height, self.width),
            });
        }
        self.roi = roi;
        Ok(self)
    }

    pub fn get(&self, slice: usize, row: usize, col: usize) -> bool {
        self.slices[slice][row * self.width + col] != 0
    }

    pub fn count(&self) -> usize {
        self.slices
            .iter()
            .map(|s| s.iter().filter(|&&v| v != 0).count())
            .sum()
    }

    pub fn slice_count(&self, index: usize) -> usize {
        self.slices[index].iter().filter(|&&v| v != 0).count()
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &SegmentationMask) -> bool {
        self.dims() == other.dims()
            && self
                .slices
                .iter()
                .zip(&other.slices)
                .all(|(a, b)| a.iter().zip(b).all(|(&x, &y)| x <= y))
    }

    /// The mask as a 0/1 valued volume.
    pub fn to_volume(&self) -> Volume {
        let slices = self
            .slices
            .iter()
            .map(|s| {
                Image2D::from_raw(
                    self.height,
                    self.width,
                    s.iter().map(|&v| f64::from(v)).collect(),
                )
            })
            .collect();
        Volume::new(slices, "mask").expect("mask values lie in [0, 1]")
    }

    /// Places the mask back into the full frame it was cropped from.
    pub fn embed_in_source(&self) -> SegmentationMask {
        let (sh, sw) = self.roi.source_dims;
        let slices = self
            .slices
            .iter()
            .map(|s| {
                let mut full = vec![0u8; sh * sw];
                for r in 0..self.height {
                    let (fr, fc) = self.roi.to_source(r, 0);
                    full[fr * sw + fc..fr * sw + fc + self.width]
                        .copy_from_slice(&s[r * self.width..(r + 1) * self.width]);
                }
                full
            })
            .collect();
        SegmentationMask {
            height: sh,
            width: sw,
            slices,
            roi: RoiRecord::full_frame(sh, sw),
        }
    }

    /// Nearest-neighbour resample of a full-frame mask, using the same
    /// corner-aligned coordinate mapping as the bilinear resize.
    pub fn resample_nearest(&self, height: usize, width: usize) -> Result<SegmentationMask> {
        if height == 0 || width == 0 {
            return Err(GmpError::InvalidParameter("empty resample target".into()));
        }
        let scale = |src: usize, dst: usize| {
            if dst > 1 {
                (src - 1) as f64 / (dst - 1) as f64
            } else {
                0.0
            }
        };
        let (sy, sx) = (scale(self.height, height), scale(self.width, width));
        let rows: Vec<usize> = (0..height)
            .map(|r| ((r as f64 * sy).round() as usize).min(self.height - 1))
            .collect();
        let cols: Vec<usize> = (0..width)
            .map(|c| ((c as f64 * sx).round() as usize).min(self.width - 1))
            .collect();
        let slices = self
            .slices
            .iter()
            .map(|s| {
                let mut out = Vec::with_capacity(height * width);
                for &r in &rows {
                    out.extend(cols.iter().map(|&c| s[r * self.width + c]));
                }
                out
            })
            .collect();
        Ok(SegmentationMask {
            height,
            width,
            slices,
            roi: RoiRecord::full_frame(height, width),
        })
    }
}

/// `1 − enhanced`: dark fluid becomes a high score.
pub fn fluid_score_map(enhanced: &Volume) -> Volume {
    let slices = enhanced.slices().iter().map(|s| s.map(|v| 1.0 - v)).collect();
    Volume::new_clamped(slices, enhanced.meta()).expect("complement keeps the volume shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdRepr", into = "ThresholdRepr")]
pub enum Threshold {
    Fixed(f64),
    Otsu,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    Value(f64),
    Name(String),
}

impl TryFrom<ThresholdRepr> for Threshold {
    type Error = String;

    fn try_from(r: ThresholdRepr) -> std::result::Result<Self, String> {
        match r {
            ThresholdRepr::Value(v) if (0.0..=1.0).contains(&v) => Ok(Threshold::Fixed(v)),
            ThresholdRepr::Value(v) => Err(format!("threshold {v} outside [0, 1]")),
            ThresholdRepr::Name(n) if n.eq_ignore_ascii_case("otsu") => Ok(Threshold::Otsu),
            ThresholdRepr::Name(n) => Err(format!("unknown threshold mode '{n}'")),
        }
    }
}

impl From<Threshold> for ThresholdRepr {
    fn from(t: Threshold) -> Self {
        match t {
            Threshold::Fixed(v) => ThresholdRepr::Value(v),
            Threshold::Otsu => ThresholdRepr::Name("otsu".into()),
        }
    }
}

impl std::str::FromStr for Threshold {
    type Err = GmpError;

    fn from_str(s: &str) -> Result<Self> {
        let repr = match s.parse::<f64>() {
            Ok(v) => ThresholdRepr::Value(v),
            Err(_) => ThresholdRepr::Name(s.to_string()),
        };
        Threshold::try_from(repr).map_err(GmpError::InvalidParameter)
    }
}

pub const OTSU_BINS: usize = 256;

fn otsu_bin(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// Otsu threshold over a 256-bin histogram of `[0, 1]` values. The result is
/// the upper edge of the last bin assigned to the low class.
pub fn otsu_threshold(values: impl Iterator<Item = f64>) -> f64 {
    let mut hist = [0u64; OTSU_BINS];
    let mut total = 0u64;
    for v in values {
        hist[otsu_bin(v)] += 1;
        total += 1;
    }
    if total == 0 {
        return 0.5;
    }
    let centre = |i: usize| (i as f64 + 0.5) / OTSU_BINS as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &n)| n as f64 * centre(i)).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (k, &n) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += n as f64;
        sum0 += n as f64 * centre(k);
        let w1 = total as f64 - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, k);
        }
    }
    (best.1 + 1) as f64 / OTSU_BINS as f64
}

/// Resolves a threshold mode to a value for `score`.
pub fn resolve_threshold(score: &Volume, t: Threshold) -> f64 {
    match t {
        Threshold::Fixed(v) => v,
        Threshold::Otsu => {
            otsu_threshold(score.slices().iter().flat_map(|s| s.data().iter().copied()))
        }
    }
}

/// Foreground wherever `score > t` (strict).
pub fn threshold_map(score: &Volume, t: Threshold) -> SegmentationMask {
    let value = resolve_threshold(score, t);
    SegmentationMask::from_volume(score, |v| v > value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub label: u32,
    pub pixel_count: usize,
    pub slice_index: usize,
    pub mean_source_intensity: f64,
    /// (row, col, height, width)
    pub bounding_box: (usize, usize, usize, usize),
    /// Row-major pixel indices within the slice, ascending.
    #[serde(skip)]
    pub pixels: Vec<u32>,
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // Keep the smaller provisional label as root so that roots follow
        // raster order of first appearance.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// 8-connected components of one mask slice, labelled 1.. in order of their
/// first pixel in a row-major scan. Statistics are taken against `source`.
pub fn connected_components(
    mask: &[u8],
    source: &Image2D,
    slice_index: usize,
) -> Result<Vec<Component>> {
    let (h, w) = source.dims();
    if mask.len() != h * w {
        return Err(GmpError::InvalidParameter(format!(
            "mask slice length {} does not match source {h}x{w}",
            mask.len()
        )));
    }
    // First pass: provisional labels with union-find over already-visited
    // neighbours (W, NW, N, NE).
    let mut labels = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if mask[i] == 0 {
                continue;
            }
            let mut neighbours = [0u32; 4];
            if c > 0 {
                neighbours[0] = labels[i - 1];
            }
            if r > 0 {
                if c > 0 {
                    neighbours[1] = labels[i - w - 1];
                }
                neighbours[2] = labels[i - w];
                if c + 1 < w {
                    neighbours[3] = labels[i - w + 1];
                }
            }
            let mut current = 0u32;
            for &n in neighbours.iter().filter(|&&n| n != 0) {
                if current == 0 {
                    current = n;
                } else {
                    union(&mut parent, current, n);
                }
            }
            if current == 0 {
                current = parent.len() as u32;
                parent.push(current);
            }
            labels[i] = current;
        }
    }

    // Second pass: resolve roots and renumber in raster order.
    let mut final_label = vec![0u32; parent.len()];
    let mut components: Vec<Component> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if labels[i] == 0 {
                continue;
            }
            let root = find(&mut parent, labels[i]) as usize;
            if final_label[root] == 0 {
                components.push(Component {
                    label: components.len() as u32 + 1,
                    pixel_count: 0,
                    slice_index,
                    mean_source_intensity: 0.0,
                    bounding_box: (r, c, 0, 0),
                    pixels: Vec::new(),
                });
                final_label[root] = components.len() as u32;
            }
            components[final_label[root] as usize - 1].pixels.push(i as u32);
        }
    }

    for comp in &mut components {
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        let mut sum = 0.0;
        for &p in &comp.pixels {
            let (r, c) = (p as usize / w, p as usize % w);
            r0 = r0.min(r);
            c0 = c0.min(c);
            r1 = r1.max(r);
            c1 = c1.max(c);
            sum += source.data()[p as usize];
        }
        comp.pixel_count = comp.pixels.len();
        comp.mean_source_intensity = sum / comp.pixel_count as f64;
        comp.bounding_box = (r0, c0, r1 - r0 + 1, c1 - c0 + 1);
    }
    Ok(components)
}

pub fn filter_small_components(components: Vec<Component>, min_area: usize) -> Vec<Component> {
    components
        .into_iter()
        .filter(|c| c.pixel_count >= min_area)
        .collect()
}

/// 1D 2-means: `true` for values in the darker cluster.
///
/// In one dimension the optimal partition is a threshold cut of the sorted
/// values, so every cut between distinct values is scored by its
/// within-cluster sum of squares and the first minimum wins. The optimum is
/// also a fixed point of Lloyd's iteration (each value sits with its nearer
/// centre, ties impossible at the optimum), so this is exactly where a
/// min/max-seeded Lloyd run ends whenever it reaches the global solution.
/// Fewer than two distinct values keep everything.
pub fn two_means_lower(values: &[f64]) -> Vec<bool> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 || !(sorted[n - 1] > sorted[0]) {
        return vec![true; n];
    }
    let total: f64 = sorted.iter().sum();
    let total_sq: f64 = sorted.iter().map(|v| v * v).sum();
    let sse = |sum: f64, sq: f64, k: usize| sq - sum * sum / k as f64;
    let (mut sum, mut sq) = (0.0, 0.0);
    let mut best = (f64::INFINITY, sorted[0]);
    for cut in 1..n {
        let v = sorted[cut - 1];
        sum += v;
        sq += v * v;
        if sorted[cut] == v {
            continue;
        }
        let cost = sse(sum, sq, cut) + sse(total - sum, total_sq - sq, n - cut);
        if cost < best.0 {
            best = (cost, v);
        }
    }
    values.iter().map(|&v| v <= best.1).collect()
}

/// Keeps the components whose mean source intensity falls in the darker of
/// two intensity clusters.
pub fn intensity_cluster_filter(components: Vec<Component>) -> Vec<Component> {
    let values: Vec<f64> = components.iter().map(|c| c.mean_source_intensity).collect();
    let keep = two_means_lower(&values);
    components
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentParams {
    pub threshold: Threshold,
    pub min_area: usize,
    pub cluster_filter: bool,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            threshold: Threshold::Fixed(0.5),
            min_area: 10,
            cluster_filter: true,
        }
    }
}

/// How the input of [`segment_volume`] should be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    /// GMP-enhanced intensities: dark means fluid.
    Enhanced,
    /// Fluid probabilities, already oriented.
    Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Retained,
    TooSmall,
    BrightCluster,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentRecord {
    #[serde(flatten)]
    pub component: Component,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub mask: SegmentationMask,
    /// The thresholded mask before any component filtering.
    pub raw_mask: SegmentationMask,
    pub threshold: f64,
    pub components: Vec<ComponentRecord>,
}

/// Score map → threshold → per-slice components → area filter → intensity
/// clustering → mask. Stages only ever remove foreground.
pub fn segment_volume(
    map: &Volume,
    source: &Volume,
    kind: MapKind,
    params: &SegmentParams,
) -> Result<Segmentation> {
    if map.dims() != source.dims() {
        let (_, mh, mw) = map.dims();
        let (_, sh, sw) = source.dims();
        return Err(GmpError::DimensionMismatch {
            expected: (sh, sw),
            found: (mh, mw),
        });
    }
    let score = match kind {
        MapKind::Enhanced => fluid_score_map(map),
        MapKind::Probability => map.clone(),
    };
    let threshold = resolve_threshold(&score, params.threshold);
    let raw_mask = SegmentationMask::from_volume(&score, |v| v > threshold);

    let per_slice: Vec<Vec<Component>> = (0..raw_mask.depth())
        .into_par_iter()
        .map(|i| connected_components(raw_mask.slice(i), source.slice(i), i))
        .collect::<Result<_>>()?;

    let mut records: Vec<ComponentRecord> = Vec::new();
    let mut candidates: Vec<usize> = Vec::new();
    for comp in per_slice.into_iter().flatten() {
        let verdict = if comp.pixel_count >= params.min_area {
            candidates.push(records.len());
            Verdict::Retained
        } else {
            Verdict::TooSmall
        };
        records.push(ComponentRecord {
            component: comp,
            verdict,
        });
    }

    if params.cluster_filter && !candidates.is_empty() {
        let values: Vec<f64> = candidates
            .iter()
            .map(|&i| records[i].component.mean_source_intensity)
            .collect();
        for (&i, keep) in candidates.iter().zip(two_means_lower(&values)) {
            if !keep {
                records[i].verdict = Verdict::BrightCluster;
            }
        }
    }

    let (_, h, w) = raw_mask.dims();
    let mut slices = vec![vec![0u8; h * w]; raw_mask.depth()];
    for rec in records.iter().filter(|r| r.verdict == Verdict::Retained) {
        let s = &mut slices[rec.component.slice_index];
        for &p in &rec.component.pixels {
            s[p as usize] = 1;
        }
    }
    Ok(Segmentation {
        mask: SegmentationMask::new(h, w, slices, RoiRecord::full_frame(h, w))?,
        raw_mask,
        threshold,
        components: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vol(slices: Vec<Image2D>) -> Volume {
        Volume::new(slices, "t").unwrap()
    }

    fn flood_fill_oracle(mask: &[u8], h: usize, w: usize) -> Vec<Vec<usize>> {
        fn fill(mask: &[u8], seen: &mut [bool], h: usize, w: usize, r: isize, c: isize, out: &mut Vec<usize>) {
            if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                return;
            }
            let i = r as usize * w + c as usize;
            if mask[i] == 0 || seen[i] {
                return;
            }
            seen[i] = true;
            out.push(i);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    if dr != 0 || dc != 0 {
                        fill(mask, seen, h, w, r + dr, c + dc, out);
                    }
                }
            }
        }
        let mut seen = vec![false; h * w];
        let mut parts = Vec::new();
        for i in 0..h * w {
            if mask[i] != 0 && !seen[i] {
                let mut part = Vec::new();
                fill(mask, &mut seen, h, w, (i / w) as isize, (i % w) as isize, &mut part);
                part.sort_unstable();
                parts.push(part);
            }
        }
        parts
    }

    #[test]
    fn score_map_is_a_complement() {
        let zero = vol(vec![Image2D::filled(2, 2, 0.0)]);
        assert!(fluid_score_map(&zero).slice(0).data().iter().all(|&v| v == 1.0));
        let v = vol(vec![Image2D::new(1, 2, vec![0.3, 0.9]).unwrap()]);
        let s = fluid_score_map(&v);
        assert!((s.slice(0).get(0, 0) - 0.7).abs() < 1e-12);
        assert!(fluid_score_map(&s).slice(0).max_abs_diff(v.slice(0)) < 1e-9);
    }

    #[test]
    fn threshold_boundaries() {
        let v = vol(vec![Image2D::new(1, 3, vec![0.2, 1.0, 0.7]).unwrap()]);
        assert_eq!(threshold_map(&v, Threshold::Fixed(1.0)).count(), 0);
        assert_eq!(threshold_map(&v, Threshold::Fixed(0.0)).count(), 3);
        assert_eq!(threshold_map(&v, Threshold::Fixed(0.5)).count(), 2);
    }

    #[test]
    fn otsu_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let normal = rand_distr::Normal::new(0.0, 0.06).unwrap();
        let values: Vec<f64> = (0..4000)
            .map(|i| {
                let centre: f64 = if i % 2 == 0 { 0.2 } else { 0.8 };
                (centre + rng.sample(normal)).clamp(0.0, 1.0)
            })
            .collect();
        let t = otsu_threshold(values.iter().copied());

        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 1..256 {
            let cut = k as f64 / 256.0;
            let (lo, hi): (Vec<f64>, Vec<f64>) = values.iter().partition(|&&v| v < cut);
            if lo.is_empty() || hi.is_empty() {
                continue;
            }
            let m = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
            let between = lo.len() as f64 * hi.len() as f64 * (m(&lo) - m(&hi)).powi(2);
            if between > best.0 {
                best = (between, cut);
            }
        }
        assert!((t - best.1).abs() <= 0.05, "otsu {t} oracle {}", best.1);
        assert!(t > 0.3 && t < 0.7);
    }

    #[test]
    fn threshold_parsing() {
        assert_eq!("otsu".parse::<Threshold>().unwrap(), Threshold::Otsu);
        assert_eq!("0.25".parse::<Threshold>().unwrap(), Threshold::Fixed(0.25));
        assert!("1.5".parse::<Threshold>().is_err());
        assert!("median".parse::<Threshold>().is_err());
    }

    #[test]
    fn component_examples() {
        let src = Image2D::filled(4, 5, 0.5);
        assert!(connected_components(&[0; 20], &src, 0).unwrap().is_empty());
        let full = connected_components(&[1; 20], &src, 0).unwrap();
        assert_eq!(full.len(), 1);
        assert_eq!(full[0].pixel_count, 20);
        assert_eq!(full[0].bounding_box, (0, 0, 4, 5));
    }

    #[test]
    fn diagonal_pixels_join() {
        let src = Image2D::filled(3, 3, 0.0);
        let mask = [1, 0, 0, 0, 1, 0, 0, 0, 1];
        assert_eq!(connected_components(&mask, &src, 0).unwrap().len(), 1);
    }

    #[test]
    fn labels_follow_raster_order() {
        // A U shape whose arms meet only on the bottom row must be one
        // component labelled before the lone pixel to its right.
        let src = Image2D::filled(3, 5, 0.0);
        let mask = [1, 0, 1, 0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 0];
        let comps = connected_components(&mask, &src, 0).unwrap();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].pixel_count, 7);
        assert_eq!(comps[1].pixels, vec![4]);
        assert_eq!(comps[1].label, 2);
    }

    #[test]
    fn components_match_flood_fill() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let mask: Vec<u8> = (0..256).map(|_| u8::from(rng.random_bool(0.45))).collect();
            let src = Image2D::filled(16, 16, 0.0);
            let got: Vec<Vec<usize>> = connected_components(&mask, &src, 0)
                .unwrap()
                .into_iter()
                .map(|c| c.pixels.into_iter().map(|p| p as usize).collect())
                .collect();
            assert_eq!(got, flood_fill_oracle(&mask, 16, 16));
        }
    }

    fn comp(size: usize, intensity: f64) -> Component {
        Component {
            label: 1,
            pixel_count: size,
            slice_index: 0,
            mean_source_intensity: intensity,
            bounding_box: (0, 0, 1, 1),
            pixels: Vec::new(),
        }
    }

    #[test]
    fn size_filter_examples() {
        let comps = vec![comp(3, 0.1), comp(10, 0.1), comp(42, 0.1)];
        assert_eq!(filter_small_components(comps.clone(), 0).len(), 3);
        assert!(filter_small_components(comps.clone(), 43).is_empty());
        let kept: Vec<usize> = filter_small_components(comps, 10)
            .iter()
            .map(|c| c.pixel_count)
            .collect();
        assert_eq!(kept, vec![10, 42]);
    }

    #[test]
    fn cluster_filter_examples() {
        let comps: Vec<Component> = [0.1, 0.12, 0.8, 0.85].iter().map(|&v| comp(5, v)).collect();
        let kept = intensity_cluster_filter(comps);
        let v: Vec<f64> = kept.iter().map(|c| c.mean_source_intensity).collect();
        assert_eq!(v, vec![0.1, 0.12]);
        let same: Vec<Component> = (0..4).map(|_| comp(5, 0.4)).collect();
        assert_eq!(intensity_cluster_filter(same).len(), 4);
    }

    fn sse(s: &[f64]) -> f64 {
        let m = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    }

    #[test]
    fn two_means_is_a_lloyd_fixed_point() {
        for seed in 0..25 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
            let got = two_means_lower(&values);
            let low: Vec<f64> = values.iter().zip(&got).filter(|(_, &k)| k).map(|(&v, _)| v).collect();
            let high: Vec<f64> = values.iter().zip(&got).filter(|(_, &k)| !k).map(|(&v, _)| v).collect();
            assert!(!low.is_empty() && !high.is_empty(), "seed {seed}");
            let m0 = low.iter().sum::<f64>() / low.len() as f64;
            let m1 = high.iter().sum::<f64>() / high.len() as f64;
            assert!(m0 < m1);
            for (&v, &k) in values.iter().zip(&got) {
                assert_eq!(k, (v - m0).abs() <= (v - m1).abs(), "seed {seed} value {v}");
            }
        }
    }

    #[test]
    fn two_means_matches_exhaustive_partition() {
        for seed in 0..25 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..20)
                .map(|_| rng.random::<f64>())
                .collect();
            let got = two_means_lower(&values);
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let mut best = (f64::INFINITY, 0.0);
            for cut in 1..sorted.len() {
                let cost = sse(&sorted[..cut]) + sse(&sorted[cut..]);
                if cost < best.0 {
                    best = (cost, sorted[cut - 1]);
                }
            }
            let expect: Vec<bool> = values.iter().map(|&v| v <= best.1).collect();
            assert_eq!(got, expect, "seed {seed}");
        }
    }

    #[test]
    fn empty_score_gives_empty_mask() {
        let map = vol(vec![Image2D::filled(8, 8, 1.0); 2]);
        let seg = segment_volume(&map, &map, MapKind::Enhanced, &SegmentParams::default()).unwrap();
        assert_eq!(seg.mask.count(), 0);
    }

    #[test]
    fn saturated_probability_map_gives_exact_region() {
        let region = |r: usize, c: usize| (3..9).contains(&r) && (2..12).contains(&c);
        let prob = vol(vec![Image2D::from_fn(16, 16, |r, c| if region(r, c) { 1.0 } else { 0.0 })]);
        let src = vol(vec![Image2D::filled(16, 16, 0.5)]);
        let seg = segment_volume(&prob, &src, MapKind::Probability, &SegmentParams::default()).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                assert_eq!(seg.mask.get(0, r, c), region(r, c));
            }
        }
    }

    #[test]
    fn blob_survives_and_specks_are_removed() {
        // 200-pixel dark blob plus three 2-pixel specks on a bright slice.
        let blob = |r: usize, c: usize| (10..20).contains(&r) && (10..30).contains(&c);
        let specks = [(2usize, 2usize), (30, 5), (5, 40)];
        let speck = |r: usize, c: usize| specks.iter().any(|&(sr, sc)| r == sr && (c == sc || c == sc + 1));
        let img = Image2D::from_fn(40, 48, |r, c| if blob(r, c) || speck(r, c) { 0.1 } else { 0.9 });
        let v = vol(vec![img]);
        let seg = segment_volume(&v, &v, MapKind::Enhanced, &SegmentParams::default()).unwrap();
        let retained: Vec<&ComponentRecord> = seg
            .components
            .iter()
            .filter(|c| c.verdict == Verdict::Retained)
            .collect();
        assert_eq!(seg.components.len(), 4);
        assert_eq!(retained.len(), 1);
        assert_eq!(retained[0].component.pixel_count, 200);
        assert_eq!(seg.mask.count(), 200);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = vol(vec![Image2D::filled(4, 4, 0.5)]);
        let b = vol(vec![Image2D::filled(4, 5, 0.5)]);
        assert!(segment_volume(&a, &b, MapKind::Enhanced, &SegmentParams::default()).is_err());
    }

    #[test]
    fn mask_embedding_and_resampling() {
        let roi = RoiRecord {
            row_offset: 1,
            col_offset: 2,
            roi_height: 2,
            roi_width: 2,
            source_dims: (4, 5),
        };
        let m = SegmentationMask::new(2, 2, vec![vec![1, 0, 0, 1]], roi).unwrap();
        let full = m.embed_in_source();
        assert_eq!(full.dims(), (1, 4, 5));
        assert!(full.get(0, 1, 2) && full.get(0, 2, 3) && !full.get(0, 1, 3));
        assert_eq!(full.count(), 2);
        let same = full.resample_nearest(4, 5).unwrap();
        assert_eq!(same, full);
        let up = full.resample_nearest(7, 9).unwrap();
        assert_eq!(up.dims(), (1, 7, 9));
    }
}
