use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{PromptMode, DEFAULT_CONTEXT_LEN};
use crate::simworld::WorldConfig;
use crate::strategies::{BgVariant, PnsMode, RddMask, RddWeights};
use crate::stubclip::ClipConfig;
use crate::ure::{EnhanceMode, DEFAULT_GRID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    /// Head-only training on source scenes before prompt learning.
    pub warmup_iters: usize,
    pub iters: usize,
    pub lr: f64,
    /// Enhancement parameters step at `lr * enhance_lr_scale`.
    pub enhance_lr_scale: f64,
    pub lr_drop_iter: usize,
    pub lr_drop_factor: f64,
    pub proposals_per_scene: usize,
    /// Validation losses are recorded every `val_every` iterations.
    pub val_every: usize,
    pub val_scenes: usize,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            warmup_iters: 0,
            iters: 500,
            lr: 0.02,
            enhance_lr_scale: 25.0,
            lr_drop_iter: 450,
            lr_drop_factor: 0.1,
            proposals_per_scene: 8,
            val_every: 25,
            val_scenes: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    pub iters: usize,
    pub lr: f64,
    pub lr_drop_iter: usize,
    pub lr_drop_factor: f64,
    pub enhance_prob: f64,
    pub proposals_per_scene: usize,
    /// Whether the head's copy of the visual projection is trained.
    pub finetunable: bool,
    pub cls_weight: f64,
    pub reg_weight: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            iters: 2000,
            lr: 0.05,
            lr_drop_iter: 800,
            lr_drop_factor: 0.1,
            enhance_prob: 0.5,
            proposals_per_scene: 8,
            finetunable: true,
            cls_weight: 1.0,
            reg_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    pub prompt_on: bool,
    pub enhance_on: bool,
    /// Image-level relative-distance losses.
    pub img_level_on: bool,
    /// Instance-level positive/negative separation losses.
    pub ins_level_on: bool,
}

impl Toggles {
    pub const ALL_ON: Self = Self {
        prompt_on: true,
        enhance_on: true,
        img_level_on: true,
        ins_level_on: true,
    };
    pub const ALL_OFF: Self = Self {
        prompt_on: false,
        enhance_on: false,
        img_level_on: false,
        ins_level_on: false,
    };

    pub fn any_loss(&self) -> bool {
        self.img_level_on || self.ins_level_on
    }
}

impl Default for Toggles {
    fn default() -> Self {
        Self::ALL_ON
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleMode {
    #[default]
    Joint,
    /// Prompts train for `run_steps` iterations with enhancement frozen,
    /// then the roles swap.
    Alternating { run_steps: usize },
}

impl ScheduleMode {
    /// `(prompts train, enhancement trains)` at iteration `t`.
    pub fn active(self, t: usize) -> (bool, bool) {
        match self {
            Self::Joint => (true, true),
            Self::Alternating { run_steps } => {
                let prompt_phase = (t / run_steps) % 2 == 0;
                (prompt_phase, !prompt_phase)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub scenes: usize,
    pub proposals_per_scene: usize,
    pub nms_iou: f64,
    pub ap_iou: f64,
    /// Domains evaluated after stage 2; empty means the target domain only.
    pub domains: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scenes: 40,
            proposals_per_scene: 16,
            nms_iou: 0.5,
            ap_iou: 0.5,
            domains: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub seed: u64,
    /// Number of labelled source scenes available for training.
    pub source_scenes: usize,
    /// Domain named in target prompts; never sampled during training.
    pub target_domain: String,
    pub toggles: Toggles,
    pub prompt_mode: PromptMode,
    pub context_len: usize,
    pub template_index: usize,
    pub enhance_mode: EnhanceMode,
    pub enhance_grid: (usize, usize),
    pub bg_variant: BgVariant,
    pub pns_mode: PnsMode,
    pub rdd_mask: RddMask,
    pub rdd_weights: RddWeights,
    pub schedule_mode: ScheduleMode,
    pub softmax_temperature: f64,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 4,
            seed: 0,
            source_scenes: 128,
            target_domain: "night rainy".into(),
            toggles: Toggles::default(),
            prompt_mode: PromptMode::default(),
            context_len: DEFAULT_CONTEXT_LEN,
            template_index: 0,
            enhance_mode: EnhanceMode::default(),
            enhance_grid: DEFAULT_GRID,
            bg_variant: BgVariant::default(),
            pns_mode: PnsMode::default(),
            rdd_mask: RddMask::default(),
            rdd_weights: RddWeights::default(),
            schedule_mode: ScheduleMode::default(),
            softmax_temperature: 0.05,
            eval: EvalConfig::default(),
        }
    }
}

fn check_stage(name: &str, iters: usize, lr: f64, drop_iter: usize, factor: f64) -> Result<()> {
    if iters > 0 && drop_iter >= iters {
        return Err(Error::config(format!(
            "{name}: lr_drop_iter {drop_iter} must be below iters {iters}"
        )));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::config(format!("{name}: learning rate must be positive")));
    }
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::config(format!("{name}: lr_drop_factor must lie in (0, 1]")));
    }
    Ok(())
}

impl TrainConfig {
    /// Iteration counts small enough for a laptop run.
    pub fn desk() -> Self {
        Self::default()
    }

    /// The published iteration counts and learning-rate schedule.
    pub fn paper_schedule() -> Self {
        let mut c = Self::default();
        c.stage1.warmup_iters = 1300;
        c.stage1.iters = 5000;
        c.stage1.lr = 0.001;
        c.stage1.enhance_lr_scale = 1.0;
        c.stage1.lr_drop_iter = 4500;
        c.stage1.val_every = 250;
        c.stage2.iters = 100_000;
        c.stage2.lr = 0.001;
        c.stage2.lr_drop_iter = 40_000;
        c
    }

    /// The comparison baseline: static prompts, no enhancement, no stage 1.
    pub fn baseline() -> Self {
        Self {
            toggles: Toggles::ALL_OFF,
            ..Self::default()
        }
    }

    /// Prompt mode actually used: static when prompts are toggled off.
    pub fn effective_prompt_mode(&self) -> PromptMode {
        if self.toggles.prompt_on {
            self.prompt_mode
        } else {
            PromptMode::StaticComplete
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s1 = &self.stage1;
        check_stage("stage1", s1.iters, s1.lr, s1.lr_drop_iter, s1.lr_drop_factor)?;
        if !(s1.enhance_lr_scale > 0.0 && s1.enhance_lr_scale.is_finite()) {
            return Err(Error::config("stage1: enhance_lr_scale must be positive"));
        }
        let s2 = &self.stage2;
        check_stage("stage2", s2.iters, s2.lr, s2.lr_drop_iter, s2.lr_drop_factor)?;
        if !(0.0..=1.0).contains(&s2.enhance_prob) {
            return Err(Error::config(format!(
                "enhance_prob {} outside [0, 1]",
                s2.enhance_prob
            )));
        }
        if !(0.0..1.0).contains(&self.optimizer.momentum) || !(self.optimizer.weight_decay >= 0.0) {
            return Err(Error::config("momentum must lie in [0, 1) and weight decay be non-negative"));
        }
        if self.batch_size == 0 || self.source_scenes == 0 {
            return Err(Error::config("batch_size and source_scenes must be positive"));
        }
        if s1.proposals_per_scene == 0 || s2.proposals_per_scene == 0 || self.eval.proposals_per_scene == 0 {
            return Err(Error::config("proposal counts must be positive"));
        }
        if s1.val_every == 0 || s1.val_scenes == 0 || self.eval.scenes == 0 {
            return Err(Error::config("validation and evaluation sizes must be positive"));
        }
        if self.toggles.img_level_on && self.rdd_mask.is_empty() {
            return Err(Error::config("img_level_on needs a non-empty rdd_mask"));
        }
        if let ScheduleMode::Alternating { run_steps: 0 } = self.schedule_mode {
            return Err(Error::config("alternating schedule needs run_steps >= 1"));
        }
        if !(self.softmax_temperature > 0.0 && self.softmax_temperature.is_finite()) {
            return Err(Error::config("softmax_temperature must be positive"));
        }
        if self.context_len == 0 {
            return Err(Error::config("context_len must be positive"));
        }
        if !(self.eval.nms_iou > 0.0 && self.eval.nms_iou <= 1.0 && self.eval.ap_iou > 0.0 && self.eval.ap_iou <= 1.0) {
            return Err(Error::config("IoU thresholds must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Everything that determines a run: encoder stub, world and training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub clip: ClipConfig,
    pub world: WorldConfig,
    pub world_seed: u64,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            clip: ClipConfig::default(),
            world: WorldConfig::default(),
            world_seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        let t = &self.train.target_domain;
        if !self.world.domains.iter().any(|d| d == t) {
            return Err(Error::config(format!("target domain {t:?} is not in the world")));
        }
        if t == self.world.source() {
            return Err(Error::config("target domain must differ from the source domain"));
        }
        for d in &self.train.eval.domains {
            if !self.world.domains.iter().any(|k| k == d) {
                return Err(Error::config(format!("eval domain {d:?} is not in the world")));
            }
        }
        Ok(())
    }

    /// Domains evaluated after training.
    pub fn eval_domains(&self) -> Vec<String> {
        if self.train.eval.domains.is_empty() {
            vec![self.train.target_domain.clone()]
        } else {
            self.train.eval.domains.clone()
        }
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
        let p = ExperimentConfig {
            train: TrainConfig::paper_schedule(),
            ..Default::default()
        };
        p.validate().unwrap();
        assert_eq!(p.train.stage1.iters, 5000);
        assert_eq!(p.train.stage2.lr_drop_iter, 40_000);
        assert_eq!(p.train.batch_size, 4);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut c = TrainConfig::default();
        c.stage1.lr_drop_iter = c.stage1.iters;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = TrainConfig::default();
        c.stage2.enhance_prob = 1.5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = TrainConfig::default();
        c.rdd_mask = RddMask {
            align: false,
            semantic: false,
            relative: false,
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut e = ExperimentConfig::default();
        e.train.target_domain = "daytime clear".into();
        assert!(matches!(e.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn strict_json() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"train": {"seed": 3}}"#).unwrap();
        assert_eq!(c.train.seed, 3);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"train": {"stage1": {"iter": 1}}}"#).is_err());
        let s: ScheduleMode = serde_json::from_str(r#"{"alternating": {"run_steps": 100}}"#).unwrap();
        assert_eq!(s, ScheduleMode::Alternating { run_steps: 100 });
    }

    #[test]
    fn alternating_phases() {
        let s = ScheduleMode::Alternating { run_steps: 2 };
        let phases: Vec<_> = (0..6).map(|t| s.active(t)).collect();
        assert_eq!(phases[0], (true, false));
        assert_eq!(phases[2], (false, true));
        assert_eq!(phases[4], (true, false));
        assert_eq!(ScheduleMode::Joint.active(7), (true, true));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
