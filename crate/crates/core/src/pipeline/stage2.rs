use std::time::Instant;

use crate::error::{Error, Result};
use crate::mdp::PromptParams;
use crate::numcore::{Graph, OptimState};
use crate::rng::{stream, DetRng};
use crate::strategies::{loss_nll_var, prob_var};
use crate::ure::{enhance_gate, EnhanceParams};

use super::data::{build_pool, CachedScene};
use super::head::{layout_descriptor, DetectorHead};
use super::report::{Counters, LossRecord, Phase, RunReport};
use super::{apply_step, lr_at, Context, FrozenParams, TrainConfig};

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub head: DetectorHead,
    pub report: RunReport,
}

struct HeadRun<'a> {
    phase: Phase,
    iters: usize,
    lr: f64,
    lr_drop_iter: usize,
    lr_drop_factor: f64,
    /// Frozen prompt table, categories then background.
    table: Vec<Vec<f64>>,
    /// Enhancement and its per-iteration probability.
    enhance: Option<(&'a EnhanceParams, f64)>,
    rng_stream: u64,
}

/// Trains the head's projection copy and box regressor on source scenes.
fn train_head(
    ctx: &Context,
    train: &TrainConfig,
    run: HeadRun<'_>,
    mut head: DetectorHead,
    report: &mut RunReport,
) -> Result<DetectorHead> {
    let s2 = &train.stage2;
    let source = ctx.world.source().to_string();
    let grid = run.enhance.map_or(train.enhance_grid, |(e, _)| e.grid());
    let pool = build_pool(&ctx.world, &source, train.seed, stream::TRAIN, train.source_scenes, s2.proposals_per_scene, grid)?;
    // Descriptors of enhanced scenes, filled on first use.
    let mut enhanced_desc: Vec<Option<Vec<Vec<f64>>>> = vec![None; pool.len()];
    let k = ctx.world.categories().len();
    let opt = &train.optimizer;
    let mut proj_state = OptimState::new(&head.projection, run.lr, opt.momentum, opt.weight_decay)?;
    let mut reg_state = OptimState::new(&head.regression, run.lr, opt.momentum, opt.weight_decay)?;
    let mut rng = DetRng::derive(train.seed, run.rng_stream);
    let mut counters = Counters::default();

    for t in 0..run.iters {
        let idx: Vec<usize> = (0..train.batch_size).map(|_| rng.below(pool.len())).collect();
        let enhanced = match run.enhance {
            Some((_, p)) => enhance_gate(p, &mut rng)?,
            None => false,
        };
        if run.phase == Phase::Stage2 {
            counters.stage2_iterations += 1;
            counters.stage2_enhanced_iterations += enhanced as u64;
        }

        let mut g = Graph::new();
        let proj = if s2.finetunable {
            g.param(&head.projection)
        } else {
            g.constant(&head.projection)
        };
        let reg = g.param(&head.regression);
        let table = run
            .table
            .iter()
            .map(|v| g.constant_vec(vec![v.len()], v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut cls_items = Vec::new();
        let mut reg_terms = Vec::new();
        for &i in &idx {
            let sc: &CachedScene = &pool[i];
            if enhanced && enhanced_desc[i].is_none() {
                let (params, _) = run.enhance.expect("enhanced implies params");
                enhanced_desc[i] = Some(descriptors(sc, params)?);
            }
            for (r, roi) in sc.rois.iter().enumerate() {
                let (pooled, desc) = if enhanced {
                    let (params, _) = run.enhance.expect("enhanced implies params");
                    counters.enhance_invocations += 1;
                    (roi.moments.pooled(params)?, enhanced_desc[i].as_ref().expect("filled")[r].clone())
                } else {
                    (roi.raw_pooled.clone(), roi.descriptor.clone())
                };
                let x = g.constant_vec(vec![pooled.len()], pooled)?;
                let e = ctx.clip.project_var(&mut g, x, proj)?;
                let p = prob_var(&mut g, e, &table, train.softmax_temperature)?;
                cls_items.push((p, roi.label(k)));
                if let Some(d) = roi.target_delta {
                    let dv = g.constant_vec(vec![desc.len()], desc)?;
                    let pred = g.matvec(reg, dv)?;
                    let tgt = g.constant_vec(vec![4], d.to_vec())?;
                    reg_terms.push(g.smooth_l1(pred, tgt)?);
                }
            }
        }
        let cls = loss_nll_var(&mut g, &cls_items)?;
        let mut parts = vec![g.scale(cls, s2.cls_weight)];
        let reg_loss = if reg_terms.is_empty() {
            None
        } else {
            let all = g.concat(&reg_terms)?;
            let m = g.mean(all);
            parts.push(g.scale(m, s2.reg_weight));
            Some(m)
        };
        let all = g.concat(&parts)?;
        let total = g.sum(all);

        let mut rec = LossRecord::new(run.phase, t, g.scalar(total));
        rec.classification = Some(g.scalar(cls));
        rec.regression = reg_loss.map(|v| g.scalar(v));
        report.loss_history.push(rec);

        let grads = g.backward(total)?;
        let lr = lr_at(run.lr, run.lr_drop_iter, run.lr_drop_factor, t);
        if s2.finetunable {
            let n = head.projection.len();
            apply_step(&mut head.projection, &grads.get_or_zeros(proj, n), &mut proj_state, lr)?;
        }
        let n = head.regression.len();
        apply_step(&mut head.regression, &grads.get_or_zeros(reg, n), &mut reg_state, lr)?;
    }
    report.counters.absorb(&counters);
    Ok(head)
}

fn descriptors(sc: &CachedScene, params: &EnhanceParams) -> Result<Vec<Vec<f64>>> {
    let fm = crate::ure::enhance(&sc.scene.features, params)?;
    sc.rois.iter().map(|r| layout_descriptor(&fm, &r.proposal.bbox)).collect()
}

/// Head-only training on source scenes with source-domain prompts and no
/// enhancement. Returns the head unchanged when `warmup_iters` is 0.
pub fn warmup_head(
    ctx: &Context,
    train: &TrainConfig,
    prompts: &PromptParams,
    head: DetectorHead,
) -> Result<(DetectorHead, RunReport)> {
    let mut report = ctx.report(train);
    let s1 = &train.stage1;
    if s1.warmup_iters == 0 {
        return Ok((head, report));
    }
    let table = ctx.builder(train)?.table(prompts, ctx.world.source())?;
    let run = HeadRun {
        phase: Phase::Warmup,
        iters: s1.warmup_iters,
        lr: train.stage2.lr,
        lr_drop_iter: s1.warmup_iters,
        lr_drop_factor: 1.0,
        table,
        enhance: None,
        rng_stream: stream::WARMUP,
    };
    let head = train_head(ctx, train, run, head, &mut report)?;
    Ok((head, report))
}

/// Fine-tunes the head against frozen target-domain prompts, enhancing
/// source features with probability `enhance_prob` per iteration when
/// enhancement is on.
pub fn stage2_finetune(
    ctx: &Context,
    train: &TrainConfig,
    frozen: Option<&FrozenParams>,
    head: DetectorHead,
) -> Result<Stage2Output> {
    let start = Instant::now();
    let frozen = frozen.ok_or_else(|| Error::State("stage 2 needs the stage-1 prompt and enhancement parameters".into()))?;
    ctx.experiment(train).validate()?;
    let mut report = ctx.report(train);
    let before = ctx.hashes(&frozen.prompts, &frozen.enhance, None);
    let table = ctx.builder(train)?.table(&frozen.prompts, &train.target_domain)?;
    let s2 = &train.stage2;
    let run = HeadRun {
        phase: Phase::Stage2,
        iters: s2.iters,
        lr: s2.lr,
        lr_drop_iter: s2.lr_drop_iter,
        lr_drop_factor: s2.lr_drop_factor,
        table,
        enhance: train.toggles.enhance_on.then_some((&frozen.enhance, s2.enhance_prob)),
        rng_stream: stream::STAGE2,
    };
    let head = train_head(ctx, train, run, head, &mut report)?;
    let mut after = ctx.hashes(&frozen.prompts, &frozen.enhance, Some(&head));
    let frozen_after = ParamCheck::from(&after);
    if frozen_after != ParamCheck::from(&before) {
        return Err(Error::State("frozen parameters changed during stage 2".into()));
    }
    after.head = Some(head.content_hash());
    report.frozen_before = Some(before);
    report.hashes = Some(after);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(Stage2Output { head, report })
}

#[derive(PartialEq)]
struct ParamCheck<'a>(&'a str, &'a str, &'a str);

impl<'a> From<&'a super::report::ParamHashes> for ParamCheck<'a> {
    fn from(h: &'a super::report::ParamHashes) -> Self {
        Self(&h.prompts, &h.enhance, &h.text_stub)
    }
}
