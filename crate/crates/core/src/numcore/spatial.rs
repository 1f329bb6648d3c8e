//! Fixed linear resampling maps over the spatial plane of a `C x H x W` map.
//!
//! Every stage of the image pipeline that moves pixels around (bilinear
//! resize, average pooling, ROI-Align, global mean) is linear and identical
//! for each channel, so it is stored once as a sparse `out x in` matrix over
//! spatial positions and applied channel by channel.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMap {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    /// `(out_pos, in_pos, weight)`, sorted by `out_pos`.
    entries: Vec<(u32, u32, f64)>,
}

impl SpatialMap {
    fn from_entries(
        in_hw: (usize, usize),
        out_hw: (usize, usize),
        mut entries: Vec<(u32, u32, f64)>,
    ) -> Self {
        entries.retain(|e| e.2 != 0.0);
        entries.sort_by_key(|e| (e.0, e.1));
        Self {
            in_h: in_hw.0,
            in_w: in_hw.1,
            out_h: out_hw.0,
            out_w: out_hw.1,
            entries,
        }
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.in_h, self.in_w)
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    pub fn in_len(&self) -> usize {
        self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    /// Bilinear resize with half-pixel centers; same-size resize is the identity.
    pub fn resize_bilinear(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        let mut entries = Vec::new();
        for oy in 0..out_h {
            let sy = (oy as f64 + 0.5) * in_h as f64 / out_h as f64 - 0.5;
            for ox in 0..out_w {
                let sx = (ox as f64 + 0.5) * in_w as f64 / out_w as f64 - 0.5;
                let o = (oy * out_w + ox) as u32;
                for (i, w) in bilinear_taps(sy, sx, in_h, in_w) {
                    entries.push((o, i as u32, w));
                }
            }
        }
        Self::from_entries((in_h, in_w), (out_h, out_w), entries)
    }

    /// Non-overlapping `k x k` average pooling with stride `k`.
    pub fn avg_pool(in_h: usize, in_w: usize, k: usize) -> Result<Self> {
        if k == 0 || in_h % k != 0 || in_w % k != 0 {
            return Err(Error::shape(format!(
                "{in_h}x{in_w} is not divisible into {k}x{k} pooling windows"
            )));
        }
        let (out_h, out_w) = (in_h / k, in_w / k);
        let w = 1.0 / (k * k) as f64;
        let mut entries = Vec::with_capacity(in_h * in_w);
        for y in 0..in_h {
            for x in 0..in_w {
                let o = ((y / k) * out_w + x / k) as u32;
                entries.push((o, (y * in_w + x) as u32, w));
            }
        }
        Ok(Self::from_entries((in_h, in_w), (out_h, out_w), entries))
    }

    /// Collapses the plane to a single position holding the mean.
    pub fn global_mean(in_h: usize, in_w: usize) -> Self {
        let w = 1.0 / (in_h * in_w) as f64;
        let entries = (0..in_h * in_w).map(|i| (0, i as u32, w)).collect();
        Self::from_entries((in_h, in_w), (1, 1), entries)
    }

    /// ROI-Align with one bilinear sample at the center of each output bin.
    ///
    /// Box coordinates are in pixel-edge units: pixel `k` spans `[k, k + 1)`.
    pub fn roi_align(in_h: usize, in_w: usize, bbox: [f64; 4], out: usize) -> Result<Self> {
        let [x1, y1, x2, y2] = bbox;
        let inside = x1 >= 0.0 && y1 >= 0.0 && x2 <= in_w as f64 && y2 <= in_h as f64;
        if !inside || x2 <= x1 || y2 <= y1 || bbox.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "box {bbox:?} is degenerate or outside the {in_w}x{in_h} extent"
            )));
        }
        let bw = (x2 - x1) / out as f64;
        let bh = (y2 - y1) / out as f64;
        let mut entries = Vec::with_capacity(out * out * 4);
        for oy in 0..out {
            let sy = y1 + (oy as f64 + 0.5) * bh - 0.5;
            for ox in 0..out {
                let sx = x1 + (ox as f64 + 0.5) * bw - 0.5;
                let o = (oy * out + ox) as u32;
                for (i, w) in bilinear_taps(sy, sx, in_h, in_w) {
                    entries.push((o, i as u32, w));
                }
            }
        }
        Ok(Self::from_entries((in_h, in_w), (out, out), entries))
    }

    /// Every weight multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let entries = self.entries.iter().map(|&(o, i, w)| (o, i, w * k)).collect();
        Self::from_entries(self.in_dims(), self.out_dims(), entries)
    }

    /// `next ∘ self`: apply `self` first, then `next`.
    pub fn then(&self, next: &SpatialMap) -> Result<SpatialMap> {
        if next.in_dims() != self.out_dims() {
            return Err(Error::shape(format!(
                "cannot chain {:?} output into {:?} input",
                self.out_dims(),
                next.in_dims()
            )));
        }
        // Rows of self grouped by output position.
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); self.out_len()];
        for &(o, i, w) in &self.entries {
            rows[o as usize].push((i, w));
        }
        let mut acc = std::collections::BTreeMap::new();
        for &(o2, mid, w2) in &next.entries {
            for &(i, w1) in &rows[mid as usize] {
                *acc.entry((o2, i)).or_insert(0.0) += w2 * w1;
            }
        }
        let entries = acc.into_iter().map(|((o, i), w)| (o, i, w)).collect();
        Ok(Self::from_entries(self.in_dims(), next.out_dims(), entries))
    }

    /// Applies the map to every channel of a `channels x in_h x in_w` buffer.
    pub fn apply(&self, input: &[f64], channels: usize) -> Result<Vec<f64>> {
        let (il, ol) = (self.in_len(), self.out_len());
        if input.len() != channels * il {
            return Err(Error::shape(format!(
                "spatial map expects {channels}x{il} values, got {}",
                input.len()
            )));
        }
        let mut out = vec![0.0; channels * ol];
        for c in 0..channels {
            let src = &input[c * il..(c + 1) * il];
            let dst = &mut out[c * ol..(c + 1) * ol];
            for &(o, i, w) in &self.entries {
                dst[o as usize] += w * src[i as usize];
            }
        }
        Ok(out)
    }

    /// Transpose application used by the backward pass.
    pub(crate) fn apply_transpose(&self, grad_out: &[f64], channels: usize, grad_in: &mut [f64]) {
        let (il, ol) = (self.in_len(), self.out_len());
        for c in 0..channels {
            let g = &grad_out[c * ol..(c + 1) * ol];
            let dst = &mut grad_in[c * il..(c + 1) * il];
            for &(o, i, w) in &self.entries {
                dst[i as usize] += w * g[o as usize];
            }
        }
    }
}

/// Bilinear taps at continuous index coordinate `(y, x)`, clamped to the grid.
fn bilinear_taps(y: f64, x: f64, h: usize, w: usize) -> Vec<(usize, f64)> {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let mut taps = vec![
        (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
        (y0 * w + x1, (1.0 - fy) * fx),
        (y1 * w + x0, fy * (1.0 - fx)),
        (y1 * w + x1, fy * fx),
    ];
    taps.retain(|t| t.1 != 0.0);
    taps
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 * 0.37 - 3.0).collect()
    }

    #[test]
    fn same_size_resize_is_identity() {
        let m = SpatialMap::resize_bilinear(21, 21, 21, 21);
        let x = ramp(2 * 21 * 21);
        assert_eq!(m.apply(&x, 2).unwrap(), x);
    }

    #[test]
    fn resize_preserves_constants() {
        let m = SpatialMap::resize_bilinear(28, 30, 21, 21);
        let out = m.apply(&vec![2.5; 28 * 30], 1).unwrap();
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn pooling_requires_divisibility() {
        assert!(SpatialMap::avg_pool(21, 21, 3).is_ok());
        assert!(SpatialMap::avg_pool(20, 21, 3).is_err());
    }

    #[test]
    fn avg_pool_averages_windows() {
        let m = SpatialMap::avg_pool(2, 4, 2).unwrap();
        let out = m.apply(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], 1).unwrap();
        assert_eq!(out, vec![3.5, 5.5]);
    }

    #[test]
    fn full_image_roi_on_14_is_identity() {
        let m = SpatialMap::roi_align(14, 14, [0.0, 0.0, 14.0, 14.0], 14).unwrap();
        let x = ramp(3 * 196);
        assert_eq!(m.apply(&x, 3).unwrap(), x);
    }

    #[test]
    fn roi_outside_extent_rejected() {
        assert!(SpatialMap::roi_align(10, 10, [0.0, 0.0, 11.0, 5.0], 14).is_err());
        assert!(SpatialMap::roi_align(10, 10, [3.0, 0.0, 3.0, 5.0], 14).is_err());
    }

    #[test]
    fn chaining_matches_sequential_application() {
        let a = SpatialMap::resize_bilinear(28, 28, 21, 21);
        let b = SpatialMap::avg_pool(21, 21, 3).unwrap();
        let ab = a.then(&b).unwrap();
        let x = ramp(2 * 28 * 28);
        let seq = b.apply(&a.apply(&x, 2).unwrap(), 2).unwrap();
        let fused = ab.apply(&x, 2).unwrap();
        for (s, f) in seq.iter().zip(&fused) {
            assert!((s - f).abs() < 1e-12);
        }
    }
}
