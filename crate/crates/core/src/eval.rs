//! Dice overlap, ROC AUC, and a per-group report shaped like a scanner-wise
//! results table.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::DetectionReport;
use crate::error::{GmpError, Result};
use crate::io::load_mask;
use crate::segment::SegmentationMask;

/// `2|A∩B| / (|A|+|B|)` over the whole volume; two empty masks score 1.
pub fn dice(a: &SegmentationMask, b: &SegmentationMask) -> Result<f64> {
    if a.dims() != b.dims() {
        let (_, ah, aw) = a.dims();
        let (_, bh, bw) = b.dims();
        return Err(GmpError::DimensionMismatch {
            expected: (ah, aw),
            found: (bh, bw),
        });
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (sa, sb) in a.slices().iter().zip(b.slices()) {
        for (&x, &y) in sa.iter().zip(sb) {
            inter += usize::from(x != 0 && y != 0);
            total += usize::from(x != 0) + usize::from(y != 0);
        }
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Area under the ROC curve via the rank-sum statistic, with tied scores
/// sharing their average rank (half credit per tied positive/negative pair).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(GmpError::InvalidParameter(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(GmpError::InvalidParameter("NaN detection score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(GmpError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group i..=j shares the mean rank.
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count();
        positive_rank_sum += avg_rank * tied_pos as f64;
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// One entry of a groups manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub group: String,
    /// Whether the volume contains fluid.
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub volumes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GmpError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| GmpError::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| GmpError::Serialization(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| GmpError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeResult {
    pub id: String,
    pub group: String,
    pub dice: f64,
    pub label: bool,
    pub score: f64,
    pub predicted_present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub group: String,
    pub volumes: usize,
    pub mean_dice: f64,
    /// Absent when the group lacks either positive or negative volumes.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallResult {
    pub mean_dice: f64,
    pub mean_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_volume: Vec<VolumeResult>,
    pub per_group: Vec<GroupResult>,
    pub overall: OverallResult,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates per-volume results into group rows (in order of first
/// appearance) and the overall row, which averages the group rows.
pub fn summarize(per_volume: Vec<VolumeResult>) -> Result<EvalReport> {
    let mut groups: Vec<String> = Vec::new();
    for v in &per_volume {
        if !groups.contains(&v.group) {
            groups.push(v.group.clone());
        }
    }
    let mut per_group = Vec::with_capacity(groups.len());
    for g in groups {
        let members: Vec<&VolumeResult> = per_volume.iter().filter(|v| v.group == g).collect();
        let scores: Vec<f64> = members.iter().map(|v| v.score).collect();
        let labels: Vec<bool> = members.iter().map(|v| v.label).collect();
        let auc = match roc_auc(&scores, &labels) {
            Ok(a) => Some(a),
            Err(GmpError::DegenerateLabels) => None,
            Err(e) => return Err(e),
        };
        per_group.push(GroupResult {
            volumes: members.len(),
            mean_dice: mean(members.iter().map(|v| v.dice)).unwrap_or(0.0),
            auc,
            group: g,
        });
    }
    let overall = OverallResult {
        mean_dice: mean(per_group.iter().map(|g| g.mean_dice)).unwrap_or(0.0),
        mean_auc: mean(per_group.iter().filter_map(|g| g.auc)),
    };
    Ok(EvalReport {
        per_volume,
        per_group,
        overall,
    })
}

/// Reads `<predictions>/<id>/mask/` and `<predictions>/<id>/report.json` for
/// every manifest entry and compares against `<ground_truth>/<id>/`.
pub fn evaluate(predictions: &Path, ground_truth: &Path, manifest: &Manifest) -> Result<EvalReport> {
    let per_volume = manifest
        .volumes
        .par_iter()
        .map(|entry| {
            let pred_dir = predictions.join(&entry.id);
            let truth_dir = ground_truth.join(&entry.id);
            if !pred_dir.is_dir() {
                return Err(GmpError::Eval(format!(
                    "no prediction for volume '{}' under {}",
                    entry.id,
                    predictions.display()
                )));
            }
            if !truth_dir.is_dir() {
                return Err(GmpError::Eval(format!(
                    "no ground truth for volume '{}' under {}",
                    entry.id,
                    ground_truth.display()
                )));
            }
            let pred = load_mask(&pred_dir.join("mask"))?;
            let truth = load_mask(&truth_dir)?;
            let report_path = pred_dir.join("report.json");
            let text = fs::read_to_string(&report_path).map_err(|e| GmpError::io(&report_path, e))?;
            let report: DetectionReport = serde_json::from_str(&text)
                .map_err(|e| GmpError::format(&report_path, e.to_string()))?;
            Ok(VolumeResult {
                id: entry.id.clone(),
                group: entry.group.clone(),
                dice: dice(&pred, &truth)?,
                label: entry.label,
                score: report.volume_score,
                predicted_present: report.volume_present,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(per_volume)
}

/// Plain-text table: one row per group plus a closing mean row.
pub fn render_table(report: &EvalReport) -> String {
    let fmt_auc = |a: Option<f64>| a.map_or_else(|| "   -  ".to_string(), |v| format!("{v:6.3}"));
    let width = report
        .per_group
        .iter()
        .map(|g| g.group.len())
        .max()
        .unwrap_or(0)
        .max(5);
    let mut out = format!("{:<width$} | {:>6} | {:>6} | {:>4}\n", "group", "AUC", "Dice", "n");
    out += &format!("{}\n", "-".repeat(width + 25));
    for g in &report.per_group {
        out += &format!(
            "{:<width$} | {} | {:6.3} | {:>4}\n",
            g.group,
            fmt_auc(g.auc),
            g.mean_dice,
            g.volumes
        );
    }
    out += &format!(
        "{:<width$} | {} | {:6.3} | {:>4}\n",
        "Mean",
        fmt_auc(report.overall.mean_auc),
        report.overall.mean_dice,
        report.per_volume.len()
    );
    out
}
