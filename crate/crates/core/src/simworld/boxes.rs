use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::numcore::SpatialMap;
use crate::rng::DetRng;
use crate::stubclip::ROI_SIDE;

use super::Scene;

/// `(x1, y1, x2, y2)` in pixel-edge units.
pub type BBox = [f64; 4];

pub fn validate_box(b: &BBox) -> Result<()> {
    if b.iter().any(|v| !v.is_finite()) || b[2] <= b[0] || b[3] <= b[1] {
        return Err(Error::input(format!("degenerate box {b:?}")));
    }
    Ok(())
}

pub fn area(b: &BBox) -> f64 {
    (b[2] - b[0]) * (b[3] - b[1])
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    validate_box(a)?;
    validate_box(b)?;
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    Ok(inter / (area(a) + area(b) - inter))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BBox,
    pub max_iou: f64,
    pub polarity: Polarity,
    /// Category of the best-overlapping object when positive.
    pub matched_category: Option<usize>,
    /// Index of the best-overlapping object, whatever the polarity.
    pub matched_object: Option<usize>,
}

/// Labels `bbox` against the scene's objects.
pub fn label_proposal(scene: &Scene, bbox: BBox, threshold: f64) -> Result<Proposal> {
    validate_box(&bbox)?;
    let mut best = (0.0, None);
    for (i, o) in scene.objects.iter().enumerate() {
        let v = iou(&bbox, &o.bbox)?;
        if v > best.0 {
            best = (v, Some(i));
        }
    }
    let positive = best.0 >= threshold;
    Ok(Proposal {
        bbox,
        max_iou: best.0,
        polarity: if positive { Polarity::Positive } else { Polarity::Negative },
        matched_category: if positive { best.1.map(|i| scene.objects[i].category) } else { None },
        matched_object: best.1,
    })
}

fn clip_box(b: BBox, w: f64, h: f64) -> BBox {
    let x1 = b[0].clamp(0.0, w - 1.0);
    let y1 = b[1].clamp(0.0, h - 1.0);
    let x2 = b[2].clamp(x1 + 1.0, w);
    let y2 = b[3].clamp(y1 + 1.0, h);
    [x1, y1, x2, y2]
}

/// Relative jitter applied to ground-truth copies.
pub const JITTER: f64 = 0.15;

/// Proposal sampler standing in for a learned RPN: the first half are
/// jittered copies of ground-truth boxes, the rest uniform random boxes.
pub fn propose(scene: &Scene, rng: &mut DetRng, count: usize, threshold: f64) -> Result<Vec<Proposal>> {
    if count == 0 {
        return Err(Error::input("proposal count must be positive"));
    }
    let (h, w) = (scene.features.height() as f64, scene.features.width() as f64);
    let n_jitter = if scene.objects.is_empty() { 0 } else { count / 2 };
    let mut out = Vec::with_capacity(count);
    for i in 0..n_jitter {
        let o = &scene.objects[i % scene.objects.len()].bbox;
        let (bw, bh) = (o[2] - o[0], o[3] - o[1]);
        let cx = (o[0] + o[2]) / 2.0 + rng.normal(0.0, JITTER * bw);
        let cy = (o[1] + o[3]) / 2.0 + rng.normal(0.0, JITTER * bh);
        let nw = bw * rng.normal(0.0, JITTER).exp();
        let nh = bh * rng.normal(0.0, JITTER).exp();
        let b = clip_box([cx - nw / 2.0, cy - nh / 2.0, cx + nw / 2.0, cy + nh / 2.0], w, h);
        out.push(label_proposal(scene, b, threshold)?);
    }
    let (lo, hi) = (3.0, (w.min(h) / 2.0).max(4.0));
    while out.len() < count {
        let bw = rng.range(lo, hi);
        let bh = rng.range(lo, hi);
        let x1 = rng.range(0.0, w - bw);
        let y1 = rng.range(0.0, h - bh);
        let b = clip_box([x1, y1, x1 + bw, y1 + bh], w, h);
        out.push(label_proposal(scene, b, threshold)?);
    }
    Ok(out)
}

/// ROI-Align sampling map from an `h x w` grid to a `14 x 14` block.
pub fn roi_map(h: usize, w: usize, bbox: &BBox) -> Result<SpatialMap> {
    SpatialMap::roi_align(h, w, *bbox, ROI_SIDE)
}

pub fn roi_features(scene: &Scene, bbox: &BBox) -> Result<FeatureMap> {
    let f = &scene.features;
    let map = roi_map(f.height(), f.width(), bbox)?;
    FeatureMap::new(f.channels(), ROI_SIDE, ROI_SIDE, map.apply(f.data(), f.channels())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::Object;

    #[test]
    fn iou_examples() {
        let a = [0.0, 0.0, 2.0, 2.0];
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &[5.0, 5.0, 6.0, 6.0]).unwrap(), 0.0);
        assert!((iou(&a, &[1.0, 1.0, 3.0, 3.0]).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        assert!(matches!(iou(&a, &[1.0, 1.0, 1.0, 3.0]), Err(Error::Input(_))));
    }

    fn scene() -> Scene {
        let mut rng = DetRng::new(0);
        Scene {
            features: FeatureMap::new(2, 14, 14, rng.gaussian_vec(2 * 196, 1.0)).unwrap(),
            objects: vec![Object {
                bbox: [2.0, 2.0, 6.0, 6.0],
                category: 1,
            }],
            domain: "d".into(),
        }
    }

    #[test]
    fn labelling() {
        let s = scene();
        let p = label_proposal(&s, [2.0, 2.0, 6.0, 6.0], 0.5).unwrap();
        assert_eq!((p.polarity, p.max_iou, p.matched_category), (Polarity::Positive, 1.0, Some(1)));
        let p = label_proposal(&s, [8.0, 8.0, 12.0, 12.0], 0.5).unwrap();
        assert_eq!((p.polarity, p.max_iou), (Polarity::Negative, 0.0));
    }

    #[test]
    fn threshold_sweep_is_monotone() {
        let s = scene();
        let mut rng = DetRng::new(3);
        let props = propose(&s, &mut rng, 64, 0.5).unwrap();
        assert_eq!(props.len(), 64);
        for p in &props {
            let strict = label_proposal(&s, p.bbox, 0.7).unwrap();
            if p.polarity == Polarity::Negative {
                assert_eq!(strict.polarity, Polarity::Negative);
            }
            assert_eq!(p.polarity == Polarity::Positive, p.max_iou >= 0.5);
            let b = p.bbox;
            assert!(b[0] >= 0.0 && b[1] >= 0.0 && b[2] <= 14.0 && b[3] <= 14.0);
            assert!(b[2] > b[0] && b[3] > b[1]);
        }
        assert!(props.iter().any(|p| p.polarity == Polarity::Positive));
    }

    #[test]
    fn roi_contracts() {
        let s = scene();
        let full = roi_features(&s, &[0.0, 0.0, 14.0, 14.0]).unwrap();
        assert_eq!(full.data(), s.features.data());
        let mut c = s.clone();
        c.features = FeatureMap::filled(2, 14, 14, 0.7);
        let b = roi_features(&c, &[1.3, 2.2, 9.9, 7.1]).unwrap();
        assert!(b.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
        assert_eq!(
            roi_features(&s, &[1.0, 1.0, 5.5, 9.0]).unwrap(),
            roi_features(&s, &[1.0, 1.0, 5.5, 9.0]).unwrap()
        );
        assert!(matches!(roi_features(&s, &[0.0, 0.0, 15.0, 3.0]), Err(Error::Input(_))));
    }
}
