//! Pooled encoder inputs expressed directly over pixels.
//!
//! Both the image path and the ROI path reduce a map to one vector per
//! channel through a fixed linear map, and enhancement is affine per patch.
//! Pooling an enhanced map therefore only needs per-patch partial sums of
//! the raw map, which is far cheaper than enhancing every pixel in-graph.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::numcore::{Graph, SpatialMap, Var};
use crate::simworld::{roi_map, BBox};
use crate::stubclip::{ClipStub, POOLED_SIDE, ROI_SIDE};
use crate::ure::{count_invocation, patch_assignment, EnhanceParams};

/// A linear map to a single output position, as `(pixel, weight)` taps.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolWeights {
    height: usize,
    width: usize,
    taps: Vec<(u32, f64)>,
}

impl PoolWeights {
    pub fn from_map(map: &SpatialMap) -> Result<Self> {
        if map.out_len() != 1 {
            return Err(Error::shape(format!(
                "pool weights need a 1x1 output, got {:?}",
                map.out_dims()
            )));
        }
        let (height, width) = map.in_dims();
        Ok(Self {
            height,
            width,
            taps: map.entries().iter().map(|&(_, i, w)| (i, w)).collect(),
        })
    }

    /// Full image path of the encoder stub.
    pub fn image(h: usize, w: usize) -> Result<Self> {
        Self::from_map(&ClipStub::image_map(h, w)?)
    }

    /// ROI-Align followed by the ROI head pooling.
    pub fn roi(h: usize, w: usize, bbox: &BBox) -> Result<Self> {
        Self::from_map(&roi_map(h, w, bbox)?.then(&ClipStub::roi_map())?)
    }

    pub fn taps(&self) -> &[(u32, f64)] {
        &self.taps
    }

    fn check(&self, fm: &FeatureMap) -> Result<()> {
        if (fm.height(), fm.width()) != (self.height, self.width) {
            return Err(Error::shape(format!(
                "pool weights for {}x{} applied to {}x{}",
                self.height,
                self.width,
                fm.height(),
                fm.width()
            )));
        }
        Ok(())
    }

    pub fn pool(&self, fm: &FeatureMap) -> Result<Vec<f64>> {
        self.check(fm)?;
        let hw = self.height * self.width;
        Ok((0..fm.channels())
            .map(|c| {
                let src = &fm.data()[c * hw..(c + 1) * hw];
                self.taps.iter().map(|&(i, w)| w * src[i as usize]).sum()
            })
            .collect())
    }

    pub fn moments(&self, fm: &FeatureMap, grid: (usize, usize)) -> Result<PatchMoments> {
        self.check(fm)?;
        let (c, h, w) = fm.dims();
        let patch_of = patch_assignment(h, w, grid);
        let patches = grid.0 * grid.1;
        let mut a = vec![0.0; c * patches];
        let mut b = vec![0.0; patches];
        for &(i, wt) in &self.taps {
            b[patch_of[i as usize] as usize] += wt;
        }
        for ch in 0..c {
            let src = &fm.data()[ch * h * w..(ch + 1) * h * w];
            for &(i, wt) in &self.taps {
                a[ch * patches + patch_of[i as usize] as usize] += wt * src[i as usize];
            }
        }
        Ok(PatchMoments { channels: c, grid, a, b })
    }
}

/// `pooled(enhance(x))[c] = sum_j sigma[c, j] a[c, j] + mu[c, j] b[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMoments {
    channels: usize,
    grid: (usize, usize),
    a: Vec<f64>,
    /// Tap mass per patch, shared by every channel.
    b: Vec<f64>,
}

impl PatchMoments {
    /// Pooled raw features (identity enhancement).
    pub fn raw(&self) -> Vec<f64> {
        let p = self.grid.0 * self.grid.1;
        self.a.chunks(p).map(|row| row.iter().sum()).collect()
    }

    /// Pooled enhanced features; counts as one enhancement application.
    pub fn pooled(&self, params: &EnhanceParams) -> Result<Vec<f64>> {
        self.check(params.channels(), params.grid())?;
        count_invocation();
        let p = self.grid.0 * self.grid.1;
        let (s, m) = (params.e_sigma().values(), params.e_mu().values());
        Ok((0..self.channels)
            .map(|c| {
                (c * p..(c + 1) * p)
                    .map(|k| s[k] * self.a[k] + m[k] * self.b[k % p])
                    .sum()
            })
            .collect())
    }

    /// In-graph [`PatchMoments::pooled`] with `[C, M, N]` nodes for sigma and mu.
    pub fn pooled_var(&self, g: &mut Graph, sigma: Var, mu: Var, sum_map: &Arc<SpatialMap>) -> Result<Var> {
        let (m, n) = self.grid;
        let shape = vec![self.channels, m, n];
        if g.shape(sigma) != shape.as_slice() || g.shape(mu) != shape.as_slice() {
            return Err(Error::shape(format!(
                "moments over {shape:?} combined with sigma {:?} and mu {:?}",
                g.shape(sigma),
                g.shape(mu)
            )));
        }
        count_invocation();
        let a = g.constant_vec(shape.clone(), self.a.clone())?;
        let b = g.constant_vec(shape, self.b.repeat(self.channels))?;
        let sa = g.mul(sigma, a)?;
        let mb = g.mul(mu, b)?;
        let t = g.add(sa, mb)?;
        g.spatial(t, sum_map)
    }

    fn check(&self, channels: usize, grid: (usize, usize)) -> Result<()> {
        if channels != self.channels || grid != self.grid {
            return Err(Error::shape(format!(
                "moments for {} channels on {:?} vs enhancement with {channels} on {grid:?}",
                self.channels, self.grid
            )));
        }
        Ok(())
    }
}

/// Sums an `m x n` plane down to `1 x 1`.
pub fn patch_sum_map(grid: (usize, usize)) -> Arc<SpatialMap> {
    let (m, n) = grid;
    Arc::new(SpatialMap::global_mean(m, n).scaled((m * n) as f64))
}

/// Per-cell ROI features on the pooled `7 x 7` grid, `[C, 49]`.
pub fn roi_cells(fm: &FeatureMap, bbox: &BBox) -> Result<Vec<f64>> {
    let cells = SpatialMap::avg_pool(ROI_SIDE, ROI_SIDE, ROI_SIDE / POOLED_SIDE)?;
    let map = roi_map(fm.height(), fm.width(), bbox)?.then(&cells)?;
    map.apply(fm.data(), fm.channels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;
    use crate::rng::DetRng;
    use crate::stubclip::ClipConfig;
    use crate::ure::{enhance, EnhanceMode};

    fn random_params(c: usize, grid: (usize, usize), rng: &mut DetRng) -> EnhanceParams {
        let n = c * grid.0 * grid.1;
        let shape = vec![c, grid.0, grid.1];
        let sigma = rng.gaussian_vec(n, 0.3).into_iter().map(|v| 1.0 + v).collect();
        EnhanceParams::from_parts(
            EnhanceMode::MuAndSigma,
            Tensor::new(shape.clone(), rng.gaussian_vec(n, 0.5)).unwrap(),
            Tensor::new(shape, sigma).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn moments_match_enhance_then_pool() {
        let mut rng = DetRng::new(5);
        let fm = FeatureMap::new(3, 28, 28, rng.gaussian_vec(3 * 784, 1.0)).unwrap();
        for grid in [(7, 7), (1, 1), (3, 5)] {
            let p = random_params(3, grid, &mut rng);
            let enhanced = enhance(&fm, &p).unwrap();
            for w in [
                PoolWeights::image(28, 28).unwrap(),
                PoolWeights::roi(28, 28, &[3.5, 2.0, 17.25, 11.0]).unwrap(),
            ] {
                let direct = w.pool(&enhanced).unwrap();
                let mom = w.moments(&fm, grid).unwrap();
                let via = mom.pooled(&p).unwrap();
                for (a, b) in direct.iter().zip(&via) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
                let raw = w.pool(&fm).unwrap();
                for (a, b) in raw.iter().zip(&mom.raw()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn image_weights_reproduce_encoder() {
        let clip = ClipStub::new(ClipConfig {
            channels: 8,
            d_emb: 8,
            ..Default::default()
        })
        .unwrap();
        let mut rng = DetRng::new(1);
        let fm = FeatureMap::new(8, 28, 28, rng.gaussian_vec(8 * 784, 1.0)).unwrap();
        let pooled = PoolWeights::image(28, 28).unwrap().pool(&fm).unwrap();
        let mut g = Graph::new();
        let x = g.constant_vec(vec![8], pooled).unwrap();
        let v = g.constant(clip.visual_projection());
        let e = clip.project_var(&mut g, x, v).unwrap();
        let want = clip.image_encode(&fm).unwrap();
        for (a, b) in g.value(e).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pooled_var_matches_plain() {
        let mut rng = DetRng::new(9);
        let fm = FeatureMap::new(2, 14, 14, rng.gaussian_vec(2 * 196, 1.0)).unwrap();
        let p = random_params(2, (7, 7), &mut rng);
        let mom = PoolWeights::roi(14, 14, &[1.0, 1.0, 9.0, 12.0]).unwrap().moments(&fm, (7, 7)).unwrap();
        let mut g = Graph::new();
        let s = g.constant(p.e_sigma());
        let m = g.constant(p.e_mu());
        let out = mom.pooled_var(&mut g, s, m, &patch_sum_map((7, 7))).unwrap();
        for (a, b) in g.value(out).iter().zip(&mom.pooled(&p).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
