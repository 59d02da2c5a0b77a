//! Average precision over pooled per-image detections, and the posterior
//! threshold sweep used to tabulate detector quality.
//!
//! Matching is greedy in descending score order; each ground-truth box is
//! matched at most once at IoU >= the configured threshold. Precision uses
//! the all-points envelope (precision at recall r is the maximum precision at
//! any recall >= r), so the area under the curve never counts dips twice.

use std::io::Write;
use std::path::Path;

use super::{iou, postprocess, BBox, Detection, MatchConfig};
use crate::error::Result;

/// One point of a pooled precision-recall walk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Match one image's predictions to its ground truth. Returns `(score,
/// is_true_positive)` per prediction, in descending score order.
fn match_image(preds: &[Detection], gts: &[BBox], cfg: &MatchConfig) -> Vec<(f64, bool)> {
    let order = super::sorted_indices_by_score(preds);
    let mut gt_taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(preds.len());
    for &pi in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let v = iou(&preds[pi].bbox, gt);
            if v >= cfg.iou_threshold && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, _)) => {
                gt_taken[gi] = true;
                out.push((preds[pi].score, true));
            }
            None => out.push((preds[pi].score, false)),
        }
    }
    out
}

/// Area under the envelope-interpolated PR curve for one pooled match list.
fn ap_from_matches(mut matches: Vec<(f64, bool)>, total_gt: usize) -> f64 {
    if total_gt == 0 {
        return if matches.is_empty() { 1.0 } else { 0.0 };
    }
    if matches.is_empty() {
        return 0.0;
    }
    matches.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut precisions = Vec::with_capacity(matches.len());
    let mut recalls = Vec::with_capacity(matches.len());
    let mut tp = 0usize;
    for (i, &(_, is_tp)) in matches.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precisions.push(tp as f64 / (i + 1) as f64);
        recalls.push(tp as f64 / total_gt as f64);
    }
    // Envelope: precision at index i becomes max over j >= i.
    for i in (0..precisions.len() - 1).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precisions.iter().zip(&recalls) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// AP for a single image's predictions against its ground truth.
pub fn average_precision(preds: &[Detection], gts: &[BBox], cfg: &MatchConfig) -> f64 {
    ap_from_matches(match_image(preds, gts, cfg), gts.len())
}

/// AP pooled over many images: per-image greedy matching, one global PR
/// curve over all detections (single "nucleus" class).
pub fn pooled_average_precision(
    per_image: &[(Vec<Detection>, Vec<BBox>)],
    cfg: &MatchConfig,
) -> f64 {
    let mut matches = Vec::new();
    let mut total_gt = 0usize;
    for (preds, gts) in per_image {
        matches.extend(match_image(preds, gts, cfg));
        total_gt += gts.len();
    }
    ap_from_matches(matches, total_gt)
}

/// Pooled PR walk (score, precision, recall) in descending score order.
pub fn pr_curve(per_image: &[(Vec<Detection>, Vec<BBox>)], cfg: &MatchConfig) -> Vec<PrPoint> {
    let mut matches = Vec::new();
    let mut total_gt = 0usize;
    for (preds, gts) in per_image {
        matches.extend(match_image(preds, gts, cfg));
        total_gt += gts.len();
    }
    matches.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = Vec::with_capacity(matches.len());
    let mut tp = 0usize;
    for (i, &(score, is_tp)) in matches.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        out.push(PrPoint {
            score,
            precision: tp as f64 / (i + 1) as f64,
            recall: if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 },
        });
    }
    out
}

/// Write a PR walk as `score,precision,recall` CSV.
pub fn write_pr_csv(points: &[PrPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path.as_ref())?;
    writeln!(f, "score,precision,recall")?;
    for p in points {
        writeln!(f, "{},{},{}", p.score, p.precision, p.recall)?;
    }
    Ok(())
}

/// mAP across posterior score thresholds: each threshold post-processes every
/// image's detections (threshold, NMS, cap) and evaluates one pooled AP.
/// Thresholds must be sorted ascending.
pub fn map_over_thresholds(
    per_image: &[(Vec<Detection>, Vec<BBox>)],
    thresholds: &[f64],
    cfg: &MatchConfig,
    nms_iou: f64,
) -> Result<Vec<(f64, f64)>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(crate::error::CoreError::Config(
            "thresholds must be sorted ascending".into(),
        ));
    }
    let mut out = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let processed: Vec<(Vec<Detection>, Vec<BBox>)> = per_image
            .iter()
            .map(|(preds, gts)| (postprocess(preds, t, cfg, nms_iou), gts.clone()))
            .collect();
        out.push((t, pooled_average_precision(&processed, cfg)));
    }
    Ok(out)
}
