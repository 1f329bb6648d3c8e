use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::mdp::{PromptBuilder, PromptParams, PromptVars};
use crate::numcore::{Graph, OptimState, SpatialMap, Var};
use crate::rng::{stream, DetRng};
use crate::strategies::{
    loss_background_var, loss_nll_var, loss_positive_var, prob_var, rdd_total_var, uniform_bg_label,
    PnsMode, RddVars,
};
use crate::ure::EnhanceParams;

use super::data::{build_pool, CachedScene};
use super::head::DetectorHead;
use super::pooling::patch_sum_map;
use super::report::{validation_mad, Counters, LossRecord, Phase, RunReport};
use super::{apply_step, lr_at, Context, FrozenParams, TrainConfig};

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub frozen: FrozenParams,
    pub report: RunReport,
}

/// Prompt and enhancement parameters before any training.
pub fn initial_params(ctx: &Context, train: &TrainConfig) -> Result<FrozenParams> {
    Ok(FrozenParams {
        prompts: PromptParams::init(
            train.effective_prompt_mode(),
            train.context_len,
            ctx.clip.d_tok(),
            train.seed,
        )?,
        enhance: EnhanceParams::identity(ctx.clip.channels(), train.enhance_grid, train.enhance_mode)?,
    })
}

/// Graph handles of the stage-1 parameters for one forward pass.
struct ParamVars {
    prompts: PromptVars,
    /// `(sigma, mu)` when enhancement is on.
    enhance: Option<(Var, Var)>,
}

struct LossVars {
    total: Var,
    align: Option<Var>,
    semantic: Option<Var>,
    relative: Option<Var>,
    positive: Option<Var>,
    background: Option<Var>,
    ce: Option<Var>,
}

impl LossVars {
    fn record(&self, g: &Graph, phase: Phase, iter: usize) -> LossRecord {
        let v = |x: Option<Var>| x.map(|x| g.scalar(x));
        let mut r = LossRecord::new(phase, iter, g.scalar(self.total));
        r.align = v(self.align);
        r.semantic = v(self.semantic);
        r.relative = v(self.relative);
        r.positive = v(self.positive);
        r.background = v(self.background);
        r.ce = v(self.ce);
        r
    }
}

struct Env<'a> {
    ctx: &'a Context,
    train: &'a TrainConfig,
    builder: PromptBuilder<'a>,
    params: &'a FrozenParams,
    projection: &'a DetectorHead,
    sum_map: Arc<SpatialMap>,
}

impl Env<'_> {
    fn losses(&self, g: &mut Graph, vars: &ParamVars, scenes: &[&CachedScene], counters: &mut Counters) -> Result<LossVars> {
        let t = self.train;
        let clip = &self.ctx.clip;
        let (source, target) = (self.ctx.world.source(), t.target_domain.as_str());
        let visual = g.constant(clip.visual_projection());
        let mut parts = Vec::new();
        let mut out = LossVars {
            total: visual,
            align: None,
            semantic: None,
            relative: None,
            positive: None,
            background: None,
            ce: None,
        };

        let pooled = |g: &mut Graph, m: &super::pooling::PatchMoments, counters: &mut Counters| -> Result<Var> {
            match vars.enhance {
                Some((s, mu)) => {
                    counters.enhance_invocations += 1;
                    m.pooled_var(g, s, mu, &self.sum_map)
                }
                None => {
                    let raw = m.raw();
                    g.constant_vec(vec![raw.len()], raw)
                }
            }
        };

        if t.toggles.img_level_on {
            let mut e_s = Vec::with_capacity(scenes.len());
            let mut e_st = Vec::with_capacity(scenes.len());
            for sc in scenes {
                let raw = sc.image.raw();
                let raw = g.constant_vec(vec![raw.len()], raw)?;
                e_s.push(clip.project_var(g, raw, visual)?);
                let p = pooled(g, &sc.image, counters)?;
                e_st.push(clip.project_var(g, p, visual)?);
            }
            // The image-level text pair is a fixed target here. Left trainable,
            // the shared context drives t_s and t_t together, which satisfies
            // the relative term without moving the enhancement at all.
            let t_s = self.builder.image_var(g, &self.params.prompts, &vars.prompts, source)?;
            let t_t = self.builder.image_var(g, &self.params.prompts, &vars.prompts, target)?;
            let t_s = g.detach(t_s);
            let t_t = g.detach(t_t);
            counters.image_prompt_encodings += 2;
            let rv = RddVars {
                e_i_s: e_s,
                e_i_st: e_st,
                t_i_s: t_s,
                t_i_t: t_t,
            };
            let terms = rdd_total_var(g, &rv, &t.rdd_weights, &t.rdd_mask)?;
            out.align = terms.align;
            out.semantic = terms.semantic;
            out.relative = terms.relative;
            parts.push(terms.total);
        }

        if t.toggles.ins_level_on {
            let k = self.ctx.world.categories().len();
            let table = self.builder.table_var(g, &self.params.prompts, &vars.prompts, target)?;
            counters.instance_prompt_encodings += k as u64 + 1;
            let mut full = table.positives.clone();
            full.push(table.negative);
            let proj = g.constant(&self.projection.projection);
            let temp = t.softmax_temperature;
            let (mut pos, mut neg, mut all) = (Vec::new(), Vec::new(), Vec::new());
            for sc in scenes {
                for roi in &sc.rois {
                    let p = pooled(g, &roi.moments, counters)?;
                    let e = clip.project_var(g, p, proj)?;
                    match t.pns_mode {
                        PnsMode::Ce => {
                            let pr = prob_var(g, e, &full, temp)?;
                            all.push((pr, roi.label(k)));
                        }
                        mode => {
                            if roi.is_positive() && mode.uses_positive() {
                                let pr = prob_var(g, e, &table.positives, temp)?;
                                pos.push((pr, roi.label(k)));
                            } else if !roi.is_positive() && mode.uses_background() {
                                neg.push(prob_var(g, e, &full, temp)?);
                            }
                        }
                    }
                }
            }
            if !all.is_empty() {
                let l = loss_nll_var(g, &all)?;
                out.ce = Some(l);
                parts.push(l);
            }
            if !pos.is_empty() {
                let l = loss_positive_var(g, &pos)?;
                out.positive = Some(l);
                parts.push(l);
            }
            if !neg.is_empty() {
                let l = loss_background_var(g, &neg, uniform_bg_label(k), t.bg_variant)?;
                out.background = Some(l);
                parts.push(l);
            }
        }

        if parts.is_empty() {
            return Err(Error::State("stage-1 batch produced no active loss".into()));
        }
        let all = g.concat(&parts)?;
        out.total = g.sum(all);
        Ok(out)
    }
}

/// Learns prompt contexts and the enhancement on source scenes.
///
/// `head` supplies the projection used for instance-level embeddings; it is
/// not modified.
pub fn stage1_train(ctx: &Context, train: &TrainConfig, head: &DetectorHead) -> Result<Stage1Output> {
    let start = Instant::now();
    ctx.experiment(train).validate()?;
    if !train.toggles.any_loss() {
        return Err(Error::config("stage 1 needs img_level_on or ins_level_on"));
    }
    let s1 = &train.stage1;
    let mut params = initial_params(ctx, train)?;
    let prompt_on = train.toggles.prompt_on && params.prompts.mode().is_learnable();
    let enhance_on = train.toggles.enhance_on;
    let grid = train.enhance_grid;
    let source = ctx.world.source().to_string();
    let pool = build_pool(&ctx.world, &source, train.seed, stream::TRAIN, train.source_scenes, s1.proposals_per_scene, grid)?;
    let val = build_pool(&ctx.world, &source, train.seed, stream::VALIDATION, s1.val_scenes, s1.proposals_per_scene, grid)?;
    let val_refs: Vec<&CachedScene> = val.iter().collect();

    let opt = &train.optimizer;
    let mut prompt_states = params
        .prompts
        .blocks()
        .iter()
        .map(|b| OptimState::new(b, s1.lr, opt.momentum, opt.weight_decay))
        .collect::<Result<Vec<_>>>()?;
    let mut sigma_state = OptimState::new(params.enhance.e_sigma(), s1.lr, opt.momentum, opt.weight_decay)?;
    let mut mu_state = OptimState::new(params.enhance.e_mu(), s1.lr, opt.momentum, opt.weight_decay)?;

    let mut report = ctx.report(train);
    let mut counters = Counters::default();
    let mut rng = DetRng::derive(train.seed, stream::TRAIN);
    let sum_map = patch_sum_map(grid);

    for t in 0..=s1.iters {
        let snapshot = params.clone();
        let env = Env {
            ctx,
            train,
            builder: ctx.builder(train)?,
            params: &snapshot,
            projection: head,
            sum_map: sum_map.clone(),
        };
        if t % s1.val_every == 0 || t == s1.iters {
            let mut g = Graph::new();
            let vars = param_vars(&mut g, &snapshot, false, false, enhance_on);
            let mut scratch = Counters::default();
            let l = env.losses(&mut g, &vars, &val_refs, &mut scratch)?;
            report.validation_history.push(l.record(&g, Phase::Stage1, t));
        }
        if t == s1.iters {
            break;
        }

        let (p_phase, e_phase) = train.schedule_mode.active(t);
        let (p_train, e_train) = (prompt_on && p_phase, enhance_on && e_phase);
        let batch: Vec<&CachedScene> = (0..train.batch_size).map(|_| &pool[rng.below(pool.len())]).collect();
        let mut g = Graph::new();
        let vars = param_vars(&mut g, &snapshot, p_train, e_train, enhance_on);
        let l = env.losses(&mut g, &vars, &batch, &mut counters)?;
        report.loss_history.push(l.record(&g, Phase::Stage1, t));
        let lr = lr_at(s1.lr, s1.lr_drop_iter, s1.lr_drop_factor, t);
        if !(p_train || e_train) {
            continue;
        }
        let grads = g.backward(l.total)?;
        if p_train {
            let blocks = params.prompts.blocks_mut();
            for ((b, st), v) in blocks.iter_mut().zip(&mut prompt_states).zip(&vars.prompts.blocks) {
                apply_step(b, &grads.get_or_zeros(*v, b.len()), st, lr)?;
            }
        }
        if let (true, Some((s, m))) = (e_train, vars.enhance) {
            let n = params.enhance.e_sigma().len();
            let lr = lr * s1.enhance_lr_scale;
            apply_step(params.enhance.e_sigma_mut(), &grads.get_or_zeros(s, n), &mut sigma_state, lr)?;
            if params.enhance.mu_trainable() {
                apply_step(params.enhance.e_mu_mut(), &grads.get_or_zeros(m, n), &mut mu_state, lr)?;
            }
        }
    }

    report.mad_of_validation_loss = validation_mad(&report.validation_history);
    report.counters = counters;
    report.hashes = Some(ctx.hashes(&params.prompts, &params.enhance, None));
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(Stage1Output { frozen: params, report })
}

fn param_vars(g: &mut Graph, p: &FrozenParams, prompt_train: bool, enhance_train: bool, enhance_on: bool) -> ParamVars {
    let prompts = PromptVars::new(g, &p.prompts, prompt_train);
    let enhance = enhance_on.then(|| {
        let (s, m) = (p.enhance.e_sigma(), p.enhance.e_mu());
        if enhance_train {
            let mu = if p.enhance.mu_trainable() { g.param(m) } else { g.constant(m) };
            (g.param(s), mu)
        } else {
            (g.constant(s), g.constant(m))
        }
    });
    ParamVars { prompts, enhance }
}
