//! Two-stage training, zero-shot evaluation and the ablation runner.
//!
//! Stage 1 learns prompt contexts and the enhancement on source scenes
//! only, using the target domain's name. Stage 2 freezes both and
//! fine-tunes a detector head. Evaluation runs on target scenes with
//! enhancement disabled.

mod ablation;
mod checkpoint;
mod config;
mod data;
mod eval;
mod gradsuite;
mod head;
mod pooling;
mod report;
mod stage1;
mod stage2;

use std::time::Instant;

use crate::error::Result;
use crate::mdp::{PromptBuilder, PromptParams};
use crate::numcore::{sgd_momentum_step, OptimState, Tensor};
use crate::simworld::{generate_world, DomainWorld};
use crate::stubclip::{ClipConfig, ClipStub};
use crate::ure::EnhanceParams;

pub use ablation::{run_ablation, AblationPreset, AblationRow, AblationRun, AblationSpec, AblationTable};
pub use checkpoint::{BlobKind, Checkpoint, CHECKPOINT_MAGIC};
pub use config::{
    EvalConfig, ExperimentConfig, OptimizerConfig, ScheduleMode, Stage1Config, Stage2Config,
    Toggles, TrainConfig,
};
pub use data::{build_pool, CachedScene, RoiSample};
pub use eval::{eval_scene, zero_shot_eval};
pub use gradsuite::{run_gradient_suite, GradSuiteEntry, GradSuiteReport};
pub use head::{decode_delta, encode_delta, layout_descriptor, nms, DetectorHead, DESCRIPTOR_LEN};
pub use pooling::{patch_sum_map, PatchMoments, PoolWeights};
pub use report::{
    preamble, sig, validation_mad, Counters, DomainMetrics, LossRecord, ParamHashes, Phase, RunReport,
    FORMAT_VERSION,
};
pub use stage1::{initial_params, stage1_train, Stage1Output};
pub use stage2::{stage2_finetune, warmup_head, Stage2Output};

/// The frozen encoder stub and the world every run of an experiment shares.
#[derive(Debug, Clone)]
pub struct Context {
    pub clip: ClipStub,
    pub world: DomainWorld,
}

impl Context {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Self::from_parts(config.clip, &config.world, config.world_seed)
    }

    pub fn from_parts(clip: ClipConfig, world: &crate::simworld::WorldConfig, world_seed: u64) -> Result<Self> {
        let clip = ClipStub::new(clip)?;
        let world = generate_world(world, &clip, world_seed)?;
        Ok(Self { clip, world })
    }

    pub fn builder(&self, train: &TrainConfig) -> Result<PromptBuilder<'_>> {
        let b = PromptBuilder::new(&self.clip, self.world.categories());
        let bank = crate::stubclip::TemplateBank::builtin();
        b.with_templates(bank, train.template_index)
    }

    /// The experiment description a run under `train` corresponds to.
    pub fn experiment(&self, train: &TrainConfig) -> ExperimentConfig {
        ExperimentConfig {
            clip: *self.clip.config(),
            world: self.world.config.clone(),
            world_seed: self.world.seed,
            train: train.clone(),
        }
    }

    /// Empty report stamped with the run's config hash, seed and world hash.
    pub fn report(&self, train: &TrainConfig) -> RunReport {
        RunReport::new(self.experiment(train).hash(), train.seed, self.world.content_hash())
    }

    pub fn hashes(&self, prompts: &PromptParams, enhance: &EnhanceParams, head: Option<&DetectorHead>) -> ParamHashes {
        ParamHashes {
            prompts: prompts.content_hash(),
            enhance: enhance.content_hash(),
            text_stub: self.clip.param_hash(),
            head: head.map(DetectorHead::content_hash),
        }
    }
}

/// Prompt and enhancement parameters handed from stage 1 to stage 2.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenParams {
    pub prompts: PromptParams,
    pub enhance: EnhanceParams,
}

/// Everything one full run produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub frozen: FrozenParams,
    pub head: DetectorHead,
    pub report: RunReport,
}

/// Warm-up, stage 1 (skipped when both loss levels are off), stage 2 and
/// evaluation on every configured domain.
pub fn run_experiment(ctx: &Context, train: &TrainConfig) -> Result<ExperimentOutput> {
    let start = Instant::now();
    ctx.experiment(train).validate()?;
    let mut report = ctx.report(train);
    let init = initial_params(ctx, train)?;
    let (head, warm) = warmup_head(ctx, train, &init.prompts, DetectorHead::from_clip(&ctx.clip))?;
    report.absorb(warm);
    let frozen = if train.toggles.any_loss() {
        let s1 = stage1_train(ctx, train, &head)?;
        report.absorb(s1.report);
        s1.frozen
    } else {
        init
    };
    let s2 = stage2_finetune(ctx, train, Some(&frozen), head)?;
    report.absorb(s2.report);
    for d in ctx.experiment(train).eval_domains() {
        report.eval.push(zero_shot_eval(ctx, train, &s2.head, &frozen, &d)?);
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(ExperimentOutput {
        frozen,
        head: s2.head,
        report,
    })
}

/// Learning rate at iteration `t` under a single step drop.
pub(crate) fn lr_at(base: f64, drop_iter: usize, factor: f64, t: usize) -> f64 {
    if t >= drop_iter {
        base * factor
    } else {
        base
    }
}

/// One SGD step of `param` along `grad` at learning rate `lr`.
pub(crate) fn apply_step(param: &mut Tensor, grad: &[f64], state: &mut OptimState, lr: f64) -> Result<()> {
    param.accumulate_grad(grad)?;
    state.learning_rate = lr;
    sgd_momentum_step(param, state)
}
