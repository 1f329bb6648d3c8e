use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::numcore::{hash_into, Graph, SpatialMap, Tensor, Var};
use crate::rng::{stream, DetRng};

use super::vocab::Vocabulary;

/// Side of the resized map fed to the image pooling stage.
pub const IMAGE_SIDE: usize = 21;
/// Side of the pooled grid (both pipelines end on it).
pub const POOLED_SIDE: usize = 7;
/// Side of an ROI block.
pub const ROI_SIDE: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipConfig {
    pub seed: u64,
    pub d_tok: usize,
    pub d_emb: usize,
    /// Channel count of the feature maps the image side consumes.
    pub channels: usize,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d_tok: 32,
            d_emb: 64,
            channels: 64,
        }
    }
}

/// Frozen text and image encoders.
///
/// Text: `normalize(T · mean(rows))`. Image: the fixed resize/pool/mean
/// stages followed by `normalize(V · pooled)`. `V` has orthonormal rows, so
/// `V Vᵀ = I` and a channel vector `Vᵀ t` encodes back to `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipStub {
    config: ClipConfig,
    vocab: Vocabulary,
    /// `(d_emb x d_tok)`
    text_projection: Tensor,
    /// `(d_emb x channels)`
    visual_projection: Tensor,
}

fn orthonormal_rows(rows: usize, cols: usize, rng: &mut DetRng) -> Vec<f64> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while out.len() < rows {
        let mut v = rng.gaussian_vec(cols, 1.0);
        for u in &out {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    out.concat()
}

impl ClipStub {
    pub fn new(config: ClipConfig) -> Result<Self> {
        if config.d_tok == 0 || config.d_emb == 0 || config.channels == 0 {
            return Err(Error::config("encoder widths must be positive"));
        }
        if config.d_emb > config.channels {
            return Err(Error::config(format!(
                "d_emb {} exceeds channel count {}",
                config.d_emb, config.channels
            )));
        }
        let vocab = Vocabulary::builtin(config.seed, config.d_tok);
        let mut rng = DetRng::derive(config.seed, stream::TEXT_PROJ);
        // Norm-preserving on token space (orthonormal columns) so no token
        // direction is amplified over another.
        let (e, k) = (config.d_emb, config.d_tok);
        let t = if k <= e {
            let q = orthonormal_rows(k, e, &mut rng);
            (0..e * k).map(|i| q[(i % k) * e + i / k]).collect()
        } else {
            orthonormal_rows(e, k, &mut rng)
        };
        let mut rng = DetRng::derive(config.seed, stream::VISUAL_PROJ);
        let v = orthonormal_rows(config.d_emb, config.channels, &mut rng);
        Ok(Self {
            config,
            vocab,
            text_projection: Tensor::new(vec![config.d_emb, config.d_tok], t)?,
            visual_projection: Tensor::new(vec![config.d_emb, config.channels], v)?,
        })
    }

    pub fn config(&self) -> &ClipConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn d_emb(&self) -> usize {
        self.config.d_emb
    }

    pub fn d_tok(&self) -> usize {
        self.config.d_tok
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    pub fn text_projection(&self) -> &Tensor {
        &self.text_projection
    }

    pub fn visual_projection(&self) -> &Tensor {
        &self.visual_projection
    }

    /// SHA-256 over every frozen parameter.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in [
            self.vocab.table(),
            &self.text_projection,
            &self.visual_projection,
        ] {
            hash_into(&mut h, t.shape(), t.values());
        }
        hex::encode(h.finalize())
    }

    /// Word-embedding rows of `text` (unknown words use the UNK row).
    pub fn embed_text(&self, text: &str) -> Result<Tensor> {
        self.vocab.embed(&self.vocab.tokenize(text)?)
    }

    pub fn text_encode(&self, rows: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let r = g.constant(rows);
        let out = self.text_encode_var(&mut g, r)?;
        Ok(g.value(out).to_vec())
    }

    /// In-graph text encoder; `rows` is `(len x d_tok)`.
    pub fn text_encode_var(&self, g: &mut Graph, rows: Var) -> Result<Var> {
        let s = g.shape(rows);
        if s.len() != 2 || s[1] != self.config.d_tok {
            return Err(Error::shape(format!(
                "text rows must be (len x {}), got {s:?}",
                self.config.d_tok
            )));
        }
        if s[0] == 0 {
            return Err(Error::input("cannot encode a zero-length sequence"));
        }
        let pooled = g.mean_rows(rows)?;
        let t = g.constant(&self.text_projection);
        let e = g.matvec(t, pooled)?;
        g.normalize(e)
    }

    /// Stages of the image pipeline for an `h x w` map, in order.
    pub fn image_stages(h: usize, w: usize) -> Result<Vec<SpatialMap>> {
        if h < 3 || w < 3 {
            return Err(Error::shape(format!(
                "image maps must be at least 3x3, got {h}x{w}"
            )));
        }
        Ok(vec![
            SpatialMap::resize_bilinear(h, w, IMAGE_SIDE, IMAGE_SIDE),
            SpatialMap::avg_pool(IMAGE_SIDE, IMAGE_SIDE, IMAGE_SIDE / POOLED_SIDE)?,
            SpatialMap::global_mean(POOLED_SIDE, POOLED_SIDE),
        ])
    }

    /// Every image stage composed into one map down to `1 x 1`.
    pub fn image_map(h: usize, w: usize) -> Result<SpatialMap> {
        compose(Self::image_stages(h, w)?)
    }

    /// ROI head stages from a `14 x 14` block down to `1 x 1`.
    pub fn roi_stages() -> Vec<SpatialMap> {
        vec![
            SpatialMap::avg_pool(ROI_SIDE, ROI_SIDE, ROI_SIDE / POOLED_SIDE).expect("14 / 2"),
            SpatialMap::global_mean(POOLED_SIDE, POOLED_SIDE),
        ]
    }

    pub fn roi_map() -> SpatialMap {
        compose(Self::roi_stages()).expect("roi stages chain")
    }

    pub fn image_encode(&self, fm: &FeatureMap) -> Result<Vec<f64>> {
        self.check_channels(fm.channels())?;
        let map = Self::image_map(fm.height(), fm.width())?;
        let pooled = map.apply(fm.data(), fm.channels())?;
        project(&self.visual_projection, &pooled)
    }

    /// In-graph image encoder over a `[C, H, W]` node.
    pub fn image_encode_var(&self, g: &mut Graph, fm: Var, map: &Arc<SpatialMap>) -> Result<Var> {
        self.check_channels(g.shape(fm)[0])?;
        let pooled = g.spatial(fm, map)?;
        let v = g.constant(&self.visual_projection);
        let e = g.matvec(v, pooled)?;
        g.normalize(e)
    }

    pub fn roi_project(&self, block: &FeatureMap) -> Result<Vec<f64>> {
        self.roi_project_with(block, &self.visual_projection)
    }

    /// [`ClipStub::roi_project`] with a replacement projection, used by a
    /// detector head that fine-tunes its own copy.
    pub fn roi_project_with(&self, block: &FeatureMap, projection: &Tensor) -> Result<Vec<f64>> {
        self.check_channels(block.channels())?;
        if (block.height(), block.width()) != (ROI_SIDE, ROI_SIDE) {
            return Err(Error::shape(format!(
                "roi blocks must be {ROI_SIDE}x{ROI_SIDE}, got {}x{}",
                block.height(),
                block.width()
            )));
        }
        let pooled = Self::roi_map().apply(block.data(), block.channels())?;
        project(projection, &pooled)
    }

    /// Projects a pooled `[C]` (or `[C, 1, 1]`) node through `projection` and normalizes.
    pub fn project_var(&self, g: &mut Graph, pooled: Var, projection: Var) -> Result<Var> {
        let e = g.matvec(projection, pooled)?;
        g.normalize(e)
    }

    fn check_channels(&self, c: usize) -> Result<()> {
        if c != self.config.channels {
            return Err(Error::shape(format!(
                "encoder expects {} channels, got {c}",
                self.config.channels
            )));
        }
        Ok(())
    }
}

fn compose(stages: Vec<SpatialMap>) -> Result<SpatialMap> {
    let mut it = stages.into_iter();
    let mut acc = it.next().ok_or_else(|| Error::shape("empty stage list"))?;
    for s in it {
        acc = acc.then(&s)?;
    }
    Ok(acc)
}

fn project(m: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let mv = g.constant(m);
    let xv = g.constant_vec(vec![x.len()], x.to_vec())?;
    let e = g.matvec(mv, xv)?;
    let n = g.normalize(e)?;
    Ok(g.value(n).to_vec())
}
