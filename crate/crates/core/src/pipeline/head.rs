use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::numcore::{hash_into, Tensor};
use crate::simworld::{iou, validate_box, BBox};
use crate::stubclip::{ClipStub, POOLED_SIDE};

use super::pooling::roi_cells;

/// Length of the layout descriptor fed to box regression: row profile,
/// column profile, bias.
pub const DESCRIPTOR_LEN: usize = 2 * POOLED_SIDE + 1;

/// Stage-2 detector head. Classification has no weights of its own: scores
/// always come from prompt similarities. The head owns a trainable copy of
/// the visual projection and a linear box regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorHead {
    pub projection: Tensor,
    /// `4 x DESCRIPTOR_LEN`, mapping a layout descriptor to `(dx, dy, dw, dh)`.
    pub regression: Tensor,
}

impl DetectorHead {
    pub fn from_clip(clip: &ClipStub) -> Self {
        Self {
            projection: clip.visual_projection().clone(),
            regression: Tensor::zeros(vec![4, DESCRIPTOR_LEN]),
        }
    }

    pub fn from_parts(projection: Tensor, regression: Tensor) -> Result<Self> {
        if projection.shape().len() != 2 || regression.shape() != [4, DESCRIPTOR_LEN] {
            return Err(Error::shape(format!(
                "head parts {:?} / {:?}",
                projection.shape(),
                regression.shape()
            )));
        }
        Ok(Self { projection, regression })
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        hash_into(&mut h, self.projection.shape(), self.projection.values());
        hash_into(&mut h, self.regression.shape(), self.regression.values());
        hex::encode(h.finalize())
    }

    /// Unit ROI embedding from a pooled `[C]` vector.
    pub fn embed(&self, pooled: &[f64]) -> Result<Vec<f64>> {
        let s = self.projection.shape();
        if pooled.len() != s[1] {
            return Err(Error::shape(format!("pooled length {} vs projection {s:?}", pooled.len())));
        }
        let v = self.projection.values();
        let e: Vec<f64> = (0..s[0])
            .map(|r| v[r * s[1]..(r + 1) * s[1]].iter().zip(pooled).map(|(a, b)| a * b).sum())
            .collect();
        let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::domain("zero ROI embedding"));
        }
        Ok(e.into_iter().map(|x| x / n).collect())
    }

    pub fn predict_delta(&self, descriptor: &[f64]) -> [f64; 4] {
        let r = self.regression.values();
        let mut out = [0.0; 4];
        for (k, o) in out.iter_mut().enumerate() {
            *o = r[k * DESCRIPTOR_LEN..(k + 1) * DESCRIPTOR_LEN]
                .iter()
                .zip(descriptor)
                .map(|(a, b)| a * b)
                .sum();
        }
        out
    }
}

/// Where the ROI content sits inside the box: for each pooled cell the
/// cosine to the ROI's mean feature, averaged along rows and columns and
/// centered, followed by a constant 1.
pub fn layout_descriptor(fm: &FeatureMap, bbox: &BBox) -> Result<Vec<f64>> {
    let cells = roi_cells(fm, bbox)?;
    let c = fm.channels();
    let k = POOLED_SIDE * POOLED_SIDE;
    let mean: Vec<f64> = (0..c).map(|ch| cells[ch * k..(ch + 1) * k].iter().sum::<f64>() / k as f64).collect();
    let mn = mean.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let mut cos = vec![0.0; k];
    for (j, cj) in cos.iter_mut().enumerate() {
        let (mut dot, mut nn) = (0.0, 0.0);
        for (ch, m) in mean.iter().enumerate() {
            let v = cells[ch * k + j];
            dot += v * m;
            nn += v * v;
        }
        *cj = dot / (nn.sqrt().max(1e-12) * mn);
    }
    let side = POOLED_SIDE;
    let mut rows: Vec<f64> = (0..side).map(|y| cos[y * side..(y + 1) * side].iter().sum::<f64>() / side as f64).collect();
    let mut cols: Vec<f64> = (0..side).map(|x| (0..side).map(|y| cos[y * side + x]).sum::<f64>() / side as f64).collect();
    for p in [&mut rows, &mut cols] {
        let m = p.iter().sum::<f64>() / side as f64;
        p.iter_mut().for_each(|v| *v -= m);
    }
    let mut out = rows;
    out.extend(cols);
    out.push(1.0);
    Ok(out)
}

/// `(dx, dy, dw, dh)` taking `proposal` to `target`.
pub fn encode_delta(proposal: &BBox, target: &BBox) -> Result<[f64; 4]> {
    validate_box(proposal)?;
    validate_box(target)?;
    let (pw, ph) = (proposal[2] - proposal[0], proposal[3] - proposal[1]);
    let (tw, th) = (target[2] - target[0], target[3] - target[1]);
    let (pcx, pcy) = (proposal[0] + pw / 2.0, proposal[1] + ph / 2.0);
    let (tcx, tcy) = (target[0] + tw / 2.0, target[1] + th / 2.0);
    Ok([(tcx - pcx) / pw, (tcy - pcy) / ph, (tw / pw).ln(), (th / ph).ln()])
}

/// Inverse of [`encode_delta`], clipped to a `w x h` image. Size deltas are
/// clamped so a wild prediction cannot overflow.
pub fn decode_delta(proposal: &BBox, delta: &[f64; 4], w: f64, h: f64) -> BBox {
    let (pw, ph) = (proposal[2] - proposal[0], proposal[3] - proposal[1]);
    let cx = proposal[0] + pw / 2.0 + delta[0] * pw;
    let cy = proposal[1] + ph / 2.0 + delta[1] * ph;
    let nw = pw * delta[2].clamp(-2.0, 2.0).exp();
    let nh = ph * delta[3].clamp(-2.0, 2.0).exp();
    let x1 = (cx - nw / 2.0).clamp(0.0, w - 1.0);
    let y1 = (cy - nh / 2.0).clamp(0.0, h - 1.0);
    let x2 = (cx + nw / 2.0).clamp(x1 + 1.0, w);
    let y2 = (cy + nh / 2.0).clamp(y1 + 1.0, h);
    [x1, y1, x2, y2]
}

/// Greedy non-maximum suppression; returns kept indices in descending
/// score order (ties keep input order).
pub fn nms(boxes: &[BBox], scores: &[f64], threshold: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(Error::shape("nms needs one score per box"));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        let mut suppressed = false;
        for &k in &keep {
            if iou(&boxes[i], &boxes[k])? > threshold {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            keep.push(i);
        }
    }
    Ok(keep)
}
