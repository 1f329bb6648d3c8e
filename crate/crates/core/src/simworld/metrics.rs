use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::boxes::{iou, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image: usize,
    pub category: usize,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image: usize,
    pub category: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    /// `None` for categories absent from the ground truth.
    pub per_category: Vec<Option<f64>>,
    pub map: f64,
}

/// Area under the all-points interpolated precision/recall curve for one
/// category's score-ordered TP/FP flags.
fn all_points_ap(flags: &[bool], n_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(flags.len());
    let mut recall = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (k, &hit) in flags.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r > prev {
            ap += (r - prev) * p;
            prev = *r;
        }
    }
    ap
}

/// Per-category AP at `iou_thresh` and their mean over categories that
/// have ground truth.
///
/// Predictions are visited in descending score order (ties keep input
/// order). Each one is matched to the highest-IoU ground truth of its image
/// and category; it is a true positive only if that IoU reaches the
/// threshold and the ground truth is not already taken.
pub fn evaluate_ap50(
    predictions: &[Detection],
    ground_truth: &[GroundTruth],
    n_categories: usize,
    iou_thresh: f64,
) -> Result<ApReport> {
    if predictions.iter().any(|p| !p.score.is_finite()) {
        return Err(Error::input("prediction scores must be finite"));
    }
    if let Some(bad) = predictions
        .iter()
        .map(|p| p.category)
        .chain(ground_truth.iter().map(|g| g.category))
        .find(|&c| c >= n_categories)
    {
        return Err(Error::input(format!("category {bad} out of range")));
    }
    let mut per_category = Vec::with_capacity(n_categories);
    for c in 0..n_categories {
        let gts: Vec<&GroundTruth> = ground_truth.iter().filter(|g| g.category == c).collect();
        if gts.is_empty() {
            per_category.push(None);
            continue;
        }
        let mut preds: Vec<&Detection> = predictions.iter().filter(|p| p.category == c).collect();
        preds.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut taken = vec![false; gts.len()];
        let mut flags = Vec::with_capacity(preds.len());
        for p in preds {
            let mut best: Option<(usize, f64)> = None;
            for (i, g) in gts.iter().enumerate() {
                if g.image != p.image {
                    continue;
                }
                let v = iou(&p.bbox, &g.bbox)?;
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            let hit = match best {
                Some((i, v)) if v >= iou_thresh && !taken[i] => {
                    taken[i] = true;
                    true
                }
                _ => false,
            };
            flags.push(hit);
        }
        per_category.push(Some(all_points_ap(&flags, gts.len())));
    }
    let present: Vec<f64> = per_category.iter().flatten().copied().collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(ApReport { per_category, map })
}

/// Mean absolute deviation around the mean.
pub fn mad(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::input("mad of an empty list"));
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - m).abs()).sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(image: usize, bbox: BBox) -> GroundTruth {
        GroundTruth {
            image,
            category: 0,
            bbox,
        }
    }

    fn det(image: usize, score: f64, bbox: BBox) -> Detection {
        Detection {
            image,
            category: 0,
            score,
            bbox,
        }
    }

    const A: BBox = [0.0, 0.0, 4.0, 4.0];
    const B: BBox = [10.0, 10.0, 14.0, 14.0];
    const FAR: BBox = [20.0, 20.0, 22.0, 22.0];

    #[test]
    fn trivial_cases() {
        let r = evaluate_ap50(&[det(0, 0.5, A)], &[gt(0, A)], 1, 0.5).unwrap();
        assert_eq!(r.map, 1.0);
        let r = evaluate_ap50(&[], &[gt(0, A)], 1, 0.5).unwrap();
        assert_eq!(r.map, 0.0);
        let r = evaluate_ap50(&[], &[gt(0, A)], 3, 0.5).unwrap();
        assert_eq!(r.per_category, vec![Some(0.0), None, None]);
    }

    #[test]
    fn tp_fp_tp() {
        // precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1 -> 1/2 * 1 + 1/2 * 2/3.
        let preds = [det(0, 0.9, A), det(0, 0.8, FAR), det(0, 0.7, B)];
        let r = evaluate_ap50(&preds, &[gt(0, A), gt(0, B)], 1, 0.5).unwrap();
        assert!((r.map - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn duplicate_is_false_positive() {
        let preds = [det(0, 0.9, A), det(0, 0.8, A)];
        let r = evaluate_ap50(&preds, &[gt(0, A)], 1, 0.5).unwrap();
        assert_eq!(r.map, 1.0);
        let preds = [det(0, 0.9, A), det(0, 0.8, A)];
        let r = evaluate_ap50(&preds, &[gt(0, A), gt(1, A)], 1, 0.5).unwrap();
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn mad_examples() {
        assert_eq!(mad(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!((mad(&[1.0, 2.0, 3.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(mad(&[5.0]).unwrap(), 0.0);
        assert!(matches!(mad(&[]), Err(Error::Input(_))));
    }
}
