//! Synthetic detection worlds with a controllable domain shift.
//!
//! Worlds are generated against a [`ClipStub`] so the frozen encoders are
//! "pretrained" for them: a category prototype is the channel-space
//! preimage of the category word's text embedding, and each domain's style
//! shift points along the preimage of its description ("A photo taken in
//! a ..."). A text prompt that
//! names the target domain therefore carries real information about how
//! target features differ from source features.

mod boxes;
mod metrics;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::numcore::{hash_into, Tensor};
use crate::rng::{stream, DetRng};
use crate::stubclip::{ClipStub, TemplateBank};

pub use boxes::{
    area, iou, label_proposal, propose, roi_features, roi_map, validate_box, BBox, Polarity,
    Proposal, JITTER,
};
pub use metrics::{evaluate_ap50, mad, ApReport, Detection, GroundTruth};

pub const DEFAULT_CATEGORIES: [&str; 7] = ["bus", "bike", "car", "motor", "person", "rider", "truck"];
pub const DEFAULT_DOMAINS: [&str; 5] = [
    "daytime clear",
    "daytime foggy",
    "night clear",
    "night rainy",
    "dusk rainy",
];

fn default_categories() -> Vec<String> {
    DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect()
}

fn default_domains() -> Vec<String> {
    DEFAULT_DOMAINS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub categories: Vec<String>,
    /// The first entry is the source domain.
    pub domains: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_box: usize,
    pub max_box: usize,
    pub noise_std: f64,
    pub object_amplitude: f64,
    pub background_amplitude: f64,
    /// Norm of the per-pixel style shift at the grid's mid row.
    pub style_strength: f64,
    /// Spread of the multiplicative style field around 1.
    pub scale_jitter: f64,
    /// Per-entry noise added to the style shift.
    pub shift_jitter: f64,
    pub style_grid: (usize, usize),
    pub prototype_jitter: f64,
    /// Pairwise prototype cosine must stay below this.
    pub separability: f64,
    pub iou_pos_threshold: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            categories: default_categories(),
            domains: default_domains(),
            height: 28,
            width: 28,
            min_objects: 1,
            max_objects: 5,
            min_box: 6,
            max_box: 14,
            noise_std: 0.1,
            object_amplitude: 1.0,
            background_amplitude: 0.3,
            style_strength: 5.0,
            scale_jitter: 0.15,
            shift_jitter: 0.05,
            style_grid: (7, 7),
            prototype_jitter: 0.5,
            separability: 0.9,
            iou_pos_threshold: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories.len() < 2 {
            return Err(Error::config("a world needs at least two categories"));
        }
        if self.domains.len() < 2 {
            return Err(Error::config("a world needs at least two domains"));
        }
        let mut names = self.domains.clone();
        names.sort();
        names.dedup();
        if names.len() != self.domains.len() {
            return Err(Error::config("domain names must be distinct"));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::config("object count range must satisfy 1 <= min <= max"));
        }
        if self.min_box < 2 || self.min_box > self.max_box || self.max_box > self.height.min(self.width) {
            return Err(Error::config("box size range must satisfy 2 <= min <= max <= map side"));
        }
        if !(self.iou_pos_threshold > 0.0 && self.iou_pos_threshold <= 1.0) {
            return Err(Error::config("iou threshold must lie in (0, 1]"));
        }
        if !(self.separability > 0.0 && self.separability <= 1.0) {
            return Err(Error::config("separability floor must lie in (0, 1]"));
        }
        if self.style_grid.0 == 0 || self.style_grid.1 == 0 {
            return Err(Error::config("style grid must be positive"));
        }
        Ok(())
    }

    pub fn source(&self) -> &str {
        &self.domains[0]
    }
}

/// Affine style field of one domain, one `(scale, shift)` pair per channel and patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub name: String,
    pub scale: Tensor,
    pub shift: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainWorld {
    pub config: WorldConfig,
    pub seed: u64,
    pub channels: usize,
    /// Unit vectors in channel space, one per category.
    pub prototypes: Vec<Vec<f64>>,
    pub background: Vec<f64>,
    pub styles: Vec<DomainStyle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub bbox: BBox,
    pub category: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub features: FeatureMap,
    pub objects: Vec<Object>,
    pub domain: String,
}

fn unit(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::domain("zero vector"));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Vᵀ t`: channel-space preimage of an embedding.
fn preimage(clip: &ClipStub, t: &[f64]) -> Vec<f64> {
    let v = clip.visual_projection().values();
    let c = clip.channels();
    let mut out = vec![0.0; c];
    for (r, &tr) in t.iter().enumerate() {
        for (o, &x) in out.iter_mut().zip(&v[r * c..(r + 1) * c]) {
            *o += tr * x;
        }
    }
    out
}

fn word_direction(clip: &ClipStub, text: &str) -> Result<Vec<f64>> {
    let t = clip.text_encode(&clip.embed_text(text)?)?;
    unit(preimage(clip, &t))
}

/// Pushes prototypes apart until every pairwise cosine is below `floor`.
fn repel(protos: &mut [Vec<f64>], floor: f64) -> Result<()> {
    for _ in 0..1000 {
        let mut worst: Option<(usize, usize, f64)> = None;
        for i in 0..protos.len() {
            for j in i + 1..protos.len() {
                let c = dot(&protos[i], &protos[j]);
                if c >= floor && worst.is_none_or(|w| c > w.2) {
                    worst = Some((i, j, c));
                }
            }
        }
        let Some((i, j, c)) = worst else {
            return Ok(());
        };
        // Gram-Schmidt step: remove part of the shared component from both.
        let (a, b) = (protos[i].clone(), protos[j].clone());
        for k in 0..a.len() {
            protos[i][k] -= 0.5 * c * b[k];
            protos[j][k] -= 0.5 * c * a[k];
        }
        protos[i] = unit(std::mem::take(&mut protos[i]))?;
        protos[j] = unit(std::mem::take(&mut protos[j]))?;
    }
    Err(Error::config(format!(
        "cannot separate {} prototypes below cosine {floor} in {} dimensions",
        protos.len(),
        protos.first().map_or(0, Vec::len)
    )))
}

pub fn generate_world(config: &WorldConfig, clip: &ClipStub, seed: u64) -> Result<DomainWorld> {
    config.validate()?;
    let c = clip.channels();
    let mut rng = DetRng::derive(seed, stream::WORLD);
    let mut prototypes = config
        .categories
        .iter()
        .map(|name| {
            let d = word_direction(clip, name)?;
            let j = rng.gaussian_vec(c, config.prototype_jitter / (c as f64).sqrt());
            unit(d.iter().zip(&j).map(|(a, b)| a + b).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    repel(&mut prototypes, config.separability)?;
    let background = unit(rng.gaussian_vec(c, 1.0))?;

    let (m, n) = config.style_grid;
    let styles = config
        .domains
        .iter()
        .map(|name| {
            let dir = word_direction(clip, &TemplateBank::builtin().fill(0, name)?)?;
            // Shift grows from the top rows to the bottom rows, with a per-domain tilt.
            let tilt = rng.range(0.3, 0.7);
            let mut scale = Vec::with_capacity(c * m * n);
            let mut shift = Vec::with_capacity(c * m * n);
            for &d in &dir {
                for py in 0..m {
                    let row = if m > 1 { py as f64 / (m - 1) as f64 - 0.5 } else { 0.0 };
                    let profile = 1.0 + 2.0 * tilt * row;
                    for _ in 0..n {
                        let s = (config.scale_jitter * rng.gaussian()).exp();
                        scale.push(s);
                        shift.push(
                            config.style_strength * d * profile
                                + config.shift_jitter * rng.gaussian() / (c as f64).sqrt(),
                        );
                    }
                }
            }
            Ok(DomainStyle {
                name: name.clone(),
                scale: Tensor::new(vec![c, m, n], scale)?,
                shift: Tensor::new(vec![c, m, n], shift)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DomainWorld {
        config: config.clone(),
        seed,
        channels: c,
        prototypes,
        background,
        styles,
    })
}

impl DomainWorld {
    pub fn categories(&self) -> &[String] {
        &self.config.categories
    }

    pub fn domains(&self) -> &[String] {
        &self.config.domains
    }

    pub fn source(&self) -> &str {
        self.config.source()
    }

    pub fn style(&self, domain: &str) -> Result<&DomainStyle> {
        self.styles
            .iter()
            .find(|s| s.name == domain)
            .ok_or_else(|| Error::input(format!("unknown domain {domain:?}")))
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        h.update(self.seed.to_le_bytes());
        for p in &self.prototypes {
            hash_into(&mut h, &[p.len()], p);
        }
        hash_into(&mut h, &[self.background.len()], &self.background);
        for s in &self.styles {
            h.update(s.name.as_bytes());
            hash_into(&mut h, s.scale.shape(), s.scale.values());
            hash_into(&mut h, s.shift.shape(), s.shift.values());
        }
        hex::encode(h.finalize())
    }

    /// Draws one scene. Layout is drawn first and noise second, so two
    /// domains sampled from equal rng states share geometry and noise.
    pub fn sample_scene(&self, domain: &str, rng: &mut DetRng) -> Result<Scene> {
        let style = self.style(domain)?;
        let cfg = &self.config;
        let (c, h, w) = (self.channels, cfg.height, cfg.width);

        let count = rng.int_inclusive(cfg.min_objects, cfg.max_objects);
        let mut objects: Vec<Object> = Vec::with_capacity(count);
        for _ in 0..count {
            let mut placed = None;
            for _ in 0..20 {
                let bw = rng.int_inclusive(cfg.min_box, cfg.max_box);
                let bh = rng.int_inclusive(cfg.min_box, cfg.max_box);
                let x = rng.int_inclusive(0, w - bw) as f64;
                let y = rng.int_inclusive(0, h - bh) as f64;
                let b = [x, y, x + bw as f64, y + bh as f64];
                let overlaps = objects
                    .iter()
                    .any(|o| iou(&o.bbox, &b).map(|v| v > 0.2).unwrap_or(true));
                if !overlaps {
                    placed = Some(b);
                    break;
                }
            }
            let category = rng.below(cfg.categories.len());
            if let Some(bbox) = placed {
                objects.push(Object { bbox, category });
            }
        }

        let mut data = rng.gaussian_vec(c * h * w, cfg.noise_std);
        let base: Vec<f64> = self.background.iter().map(|b| cfg.background_amplitude * b).collect();
        let mut owner = vec![usize::MAX; h * w];
        for (i, o) in objects.iter().enumerate() {
            let [x1, y1, x2, y2] = o.bbox.map(|v| v as usize);
            for y in y1..y2 {
                for x in x1..x2 {
                    owner[y * w + x] = i;
                }
            }
        }
        for ch in 0..c {
            for p in 0..h * w {
                let v = match owner[p] {
                    usize::MAX => base[ch],
                    i => cfg.object_amplitude * self.prototypes[objects[i].category][ch],
                };
                data[ch * h * w + p] += v;
            }
        }

        let (m, n) = cfg.style_grid;
        let patch_of = crate::ure::patch_assignment(h, w, (m, n));
        let (sc, sh) = (style.scale.values(), style.shift.values());
        for ch in 0..c {
            for (p, &j) in patch_of.iter().enumerate() {
                let k = ch * m * n + j as usize;
                let i = ch * h * w + p;
                data[i] = sc[k] * data[i] + sh[k];
            }
        }
        Ok(Scene {
            features: FeatureMap::new(c, h, w, data)?,
            objects,
            domain: domain.to_string(),
        })
    }

    /// Scene `index` of `(seed, stream)`; independent of any other scene.
    pub fn scene_at(&self, domain: &str, seed: u64, stream: u64, index: u64) -> Result<Scene> {
        self.sample_scene(domain, &mut DetRng::indexed(seed, stream, index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stubclip::ClipConfig;

    fn clip() -> ClipStub {
        ClipStub::new(ClipConfig::default()).unwrap()
    }

    #[test]
    fn world_is_deterministic_and_separable() {
        let c = clip();
        let a = generate_world(&WorldConfig::default(), &c, 11).unwrap();
        let b = generate_world(&WorldConfig::default(), &c, 11).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), generate_world(&WorldConfig::default(), &c, 12).unwrap().content_hash());
        assert_eq!(a.prototypes.len(), 7);
        for i in 0..7 {
            for j in i + 1..7 {
                assert!(dot(&a.prototypes[i], &a.prototypes[j]) < 0.9);
            }
        }
        let s = a.style("daytime clear").unwrap();
        let t = a.style("night rainy").unwrap();
        let l1: f64 = s.shift.values().iter().zip(t.shift.values()).map(|(x, y)| (x - y).abs()).sum();
        assert!(l1 > 0.0);
    }

    #[test]
    fn two_categories_always_separable() {
        let c = clip();
        let cfg = WorldConfig {
            categories: vec!["car".into(), "bus".into()],
            ..WorldConfig::default()
        };
        for seed in 0..20 {
            let w = generate_world(&cfg, &c, seed).unwrap();
            assert!(dot(&w.prototypes[0], &w.prototypes[1]) < 0.9);
        }
    }

    #[test]
    fn crowded_world_is_config_error() {
        let c = ClipStub::new(ClipConfig {
            seed: 0,
            d_tok: 8,
            d_emb: 2,
            channels: 2,
        })
        .unwrap();
        let cfg = WorldConfig {
            // Seven directions in the plane cannot all be 60 degrees apart.
            separability: 0.5,
            ..WorldConfig::default()
        };
        let r = generate_world(&cfg, &c, 0);
        assert!(matches!(r, Err(Error::Config(_))), "{r:?}");
    }

    #[test]
    fn scenes_shift_style_only() {
        let c = clip();
        let w = generate_world(&WorldConfig::default(), &c, 2).unwrap();
        for i in 0..10 {
            let s = w.scene_at("daytime clear", 5, stream::TRAIN, i).unwrap();
            let t = w.scene_at("night rainy", 5, stream::TRAIN, i).unwrap();
            assert!((1..=5).contains(&s.objects.len()));
            assert_eq!(s.objects, t.objects);
            let l1: f64 = s.features.data().iter().zip(t.features.data()).map(|(a, b)| (a - b).abs()).sum();
            assert!(l1 > 0.0);
            assert_eq!(s, w.scene_at("daytime clear", 5, stream::TRAIN, i).unwrap());
            for o in &s.objects {
                assert!(o.bbox[0] >= 0.0 && o.bbox[2] <= 28.0 && o.bbox[1] >= 0.0 && o.bbox[3] <= 28.0);
                assert!(area(&o.bbox) > 0.0);
                assert!(o.category < 7);
            }
        }
        assert!(matches!(
            w.sample_scene("mars", &mut DetRng::new(0)),
            Err(Error::Input(_))
        ));
    }
}
