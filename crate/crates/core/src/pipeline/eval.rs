use crate::error::{Error, Result};
use crate::rng::{stream, DetRng};
use crate::simworld::{evaluate_ap50, propose, Detection, GroundTruth, Scene};
use crate::strategies::detect_prob;
use crate::ure::invocation_count;

use super::head::{decode_delta, layout_descriptor, nms, DetectorHead};
use super::pooling::PoolWeights;
use super::report::DomainMetrics;
use super::{Context, FrozenParams, TrainConfig};

/// Detections for one scene: every proposal is classified through the
/// prompt table, refined by the regressor, then suppressed per category.
pub fn eval_scene(
    scene: &Scene,
    proposals: &[crate::simworld::Proposal],
    head: &DetectorHead,
    table: &[Vec<f64>],
    temperature: f64,
    nms_iou: f64,
    image: usize,
) -> Result<Vec<Detection>> {
    let k = table.len() - 1;
    let (h, w) = (scene.features.height(), scene.features.width());
    let mut per_cat: Vec<(Vec<[f64; 4]>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); k];
    for p in proposals {
        let pooled = PoolWeights::roi(h, w, &p.bbox)?.pool(&scene.features)?;
        let e = head.embed(&pooled)?;
        let probs = detect_prob(&e, table, temperature)?;
        let (c, score) = probs[..k]
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        let delta = head.predict_delta(&layout_descriptor(&scene.features, &p.bbox)?);
        per_cat[c].0.push(decode_delta(&p.bbox, &delta, w as f64, h as f64));
        per_cat[c].1.push(score);
    }
    let mut out = Vec::new();
    for (c, (boxes, scores)) in per_cat.into_iter().enumerate() {
        for i in nms(&boxes, &scores, nms_iou)? {
            out.push(Detection {
                image,
                category: c,
                score: scores[i],
                bbox: boxes[i],
            });
        }
    }
    Ok(out)
}

/// Zero-shot evaluation on `domain` with enhancement disabled.
pub fn zero_shot_eval(
    ctx: &Context,
    train: &TrainConfig,
    head: &DetectorHead,
    frozen: &FrozenParams,
    domain: &str,
) -> Result<DomainMetrics> {
    ctx.world.style(domain)?;
    let before = invocation_count();
    let table = ctx.builder(train)?.table(&frozen.prompts, domain)?;
    let ev = &train.eval;
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for i in 0..ev.scenes {
        let mut rng = DetRng::indexed(train.seed, stream::EVAL, i as u64);
        let scene = ctx.world.sample_scene(domain, &mut rng)?;
        let props = propose(&scene, &mut rng, ev.proposals_per_scene, ctx.world.config.iou_pos_threshold)?;
        preds.extend(eval_scene(&scene, &props, head, &table, train.softmax_temperature, ev.nms_iou, i)?);
        gts.extend(scene.objects.iter().map(|o| GroundTruth {
            image: i,
            category: o.category,
            bbox: o.bbox,
        }));
    }
    let ap = evaluate_ap50(&preds, &gts, ctx.world.categories().len(), ev.ap_iou)?;
    let enhance_invocations = invocation_count() - before;
    if enhance_invocations != 0 {
        return Err(Error::State("enhancement ran during zero-shot evaluation".into()));
    }
    Ok(DomainMetrics {
        domain: domain.to_string(),
        categories: ctx.world.categories().to_vec(),
        per_category_ap: ap.per_category,
        map: ap.map,
        scenes: ev.scenes,
        detections: preds.len(),
        enhance_invocations,
    })
}
