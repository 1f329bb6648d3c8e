use crate::error::Result;
use crate::rng::DetRng;
use crate::simworld::{propose, Polarity, Proposal};
use crate::simworld::{DomainWorld, Scene};

use super::head::{encode_delta, layout_descriptor};
use super::pooling::{PatchMoments, PoolWeights};

/// One proposal with everything training needs precomputed.
#[derive(Debug, Clone)]
pub struct RoiSample {
    pub proposal: Proposal,
    pub moments: PatchMoments,
    pub raw_pooled: Vec<f64>,
    pub descriptor: Vec<f64>,
    /// Box delta to the matched object, positives only.
    pub target_delta: Option<[f64; 4]>,
}

impl RoiSample {
    /// Training label: the matched category, or `n_categories` for background.
    pub fn label(&self, n_categories: usize) -> usize {
        match self.proposal.polarity {
            Polarity::Positive => self.proposal.matched_category.unwrap_or(n_categories),
            Polarity::Negative => n_categories,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.proposal.polarity == Polarity::Positive
    }
}

#[derive(Debug, Clone)]
pub struct CachedScene {
    pub scene: Scene,
    pub image: PatchMoments,
    pub rois: Vec<RoiSample>,
}

impl CachedScene {
    /// Scene `index` of `(seed, stream)` followed by `proposals` proposals
    /// drawn from the same generator.
    pub fn build(
        world: &DomainWorld,
        domain: &str,
        seed: u64,
        stream: u64,
        index: u64,
        proposals: usize,
        grid: (usize, usize),
    ) -> Result<Self> {
        let mut rng = DetRng::indexed(seed, stream, index);
        let scene = world.sample_scene(domain, &mut rng)?;
        let props = propose(&scene, &mut rng, proposals, world.config.iou_pos_threshold)?;
        let (h, w) = (scene.features.height(), scene.features.width());
        let image = PoolWeights::image(h, w)?.moments(&scene.features, grid)?;
        let rois = props
            .into_iter()
            .map(|p| {
                let weights = PoolWeights::roi(h, w, &p.bbox)?;
                let moments = weights.moments(&scene.features, grid)?;
                let target_delta = match (p.polarity, p.matched_object) {
                    (Polarity::Positive, Some(i)) => Some(encode_delta(&p.bbox, &scene.objects[i].bbox)?),
                    _ => None,
                };
                Ok(RoiSample {
                    raw_pooled: moments.raw(),
                    descriptor: layout_descriptor(&scene.features, &p.bbox)?,
                    proposal: p,
                    moments,
                    target_delta,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scene, image, rois })
    }
}

/// Builds scenes `0..count` of one stream.
pub fn build_pool(
    world: &DomainWorld,
    domain: &str,
    seed: u64,
    stream: u64,
    count: usize,
    proposals: usize,
    grid: (usize, usize),
) -> Result<Vec<CachedScene>> {
    (0..count as u64)
        .map(|i| CachedScene::build(world, domain, seed, stream, i, proposals, grid))
        .collect()
}
