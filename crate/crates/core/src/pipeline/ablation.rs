use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::PromptMode;
use crate::simworld::mad;
use crate::strategies::{BgVariant, PnsMode, RddMask};
use crate::ure::EnhanceMode;

use super::config::{ExperimentConfig, ScheduleMode, Toggles, TrainConfig};
use super::report::{preamble, sig, RunReport};
use super::{run_experiment, Context};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationPreset {
    /// Image-level loss combinations.
    Rdd,
    /// Instance-level loss variants.
    Pns,
    /// On/off grid over prompts, enhancement and the two loss levels.
    Modules,
    /// Static vs learnable, keyword vs complete, shared context.
    Prompt,
    /// Enhancement granularity and whether the mean is learned.
    Enhance,
    /// Labels for negative proposals.
    Neglabel,
    /// Joint vs alternating prompt/enhancement updates.
    Schedule,
}

impl AblationPreset {
    pub const ALL: [Self; 7] = [
        Self::Rdd,
        Self::Pns,
        Self::Modules,
        Self::Prompt,
        Self::Enhance,
        Self::Neglabel,
        Self::Schedule,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rdd => "rdd",
            Self::Pns => "pns",
            Self::Modules => "modules",
            Self::Prompt => "prompt",
            Self::Enhance => "enhance",
            Self::Neglabel => "neglabel",
            Self::Schedule => "schedule",
        }
    }

    /// Rows of the preset, each a modification of `base`.
    pub fn rows(self, base: &TrainConfig) -> Vec<AblationRow> {
        let row = |id: &str, f: &dyn Fn(&mut TrainConfig)| {
            let mut t = base.clone();
            f(&mut t);
            AblationRow { id: id.to_string(), train: t }
        };
        let mask = |a, s, r| RddMask {
            align: a,
            semantic: s,
            relative: r,
        };
        match self {
            Self::Rdd => [
                ("La", mask(true, false, false)),
                ("La+Ls", mask(true, true, false)),
                ("Lr", mask(false, false, true)),
                ("La+Ls+Lr", mask(true, true, true)),
            ]
            .into_iter()
            .map(|(id, m)| row(id, &|t| t.rdd_mask = m))
            .collect(),
            Self::Pns => [PnsMode::Ce, PnsMode::BgOnly, PnsMode::COnly, PnsMode::BgPlusC]
                .into_iter()
                .map(|m| row(m.as_str(), &|t| t.pns_mode = m))
                .collect(),
            Self::Modules => {
                const GRID: [[bool; 4]; 11] = [
                    [false, true, true, true],
                    [true, false, true, true],
                    [true, true, false, true],
                    [true, true, true, false],
                    [true, true, false, false],
                    [false, true, true, false],
                    [false, true, false, true],
                    [true, false, false, true],
                    [true, false, true, false],
                    [true, false, false, false],
                    [true, true, true, true],
                ];
                GRID.iter()
                    .enumerate()
                    .map(|(i, g)| {
                        row(&format!("row{}", i + 1), &|t| {
                            t.toggles = Toggles {
                                prompt_on: g[0],
                                enhance_on: g[1],
                                img_level_on: g[2],
                                ins_level_on: g[3],
                            }
                        })
                    })
                    .collect()
            }
            Self::Prompt => [
                ("static_keyword", PromptMode::StaticKeyword),
                ("static_complete", PromptMode::StaticComplete),
                ("learnable_keyword", PromptMode::LearnableKeyword),
                ("learnable_shared", PromptMode::LearnableShared),
                ("learnable_complete", PromptMode::LearnableComplete),
            ]
            .into_iter()
            .map(|(id, m)| row(id, &|t| t.prompt_mode = m))
            .collect(),
            Self::Enhance => [
                ("1x1_sigma", (1, 1), EnhanceMode::SigmaOnly),
                ("1x1_mu_sigma", (1, 1), EnhanceMode::MuAndSigma),
                ("7x7_sigma", (7, 7), EnhanceMode::SigmaOnly),
                ("7x7_mu_sigma", (7, 7), EnhanceMode::MuAndSigma),
            ]
            .into_iter()
            .map(|(id, g, m)| {
                row(id, &|t| {
                    t.enhance_grid = g;
                    t.enhance_mode = m;
                })
            })
            .collect(),
            Self::Neglabel => [
                BgVariant::DetproBinary,
                BgVariant::DetproUniformFg,
                BgVariant::UniformCe,
                BgVariant::HingePositiveDiff,
            ]
            .into_iter()
            .map(|v| row(v.as_str(), &|t| t.bg_variant = v))
            .collect(),
            Self::Schedule => {
                let mut rows = vec![row("joint", &|t| t.schedule_mode = ScheduleMode::Joint)];
                for n in [100, 500, 1000] {
                    rows.push(row(&format!("alternating_{n}"), &|t| {
                        t.schedule_mode = ScheduleMode::Alternating { run_steps: n }
                    }));
                }
                rows
            }
        }
    }
}

impl FromStr for AblationPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation preset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub id: String,
    pub train: TrainConfig,
}

/// Configurations sharing one world, each run once per seed. Either
/// `preset` or explicit `rows` (or both) may be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    #[serde(default)]
    pub base: ExperimentConfig,
    #[serde(default)]
    pub preset: Option<AblationPreset>,
    #[serde(default)]
    pub rows: Vec<AblationRow>,
    pub seeds: Vec<u64>,
}

impl AblationSpec {
    pub fn from_preset(base: ExperimentConfig, preset: AblationPreset, seeds: Vec<u64>) -> Self {
        Self {
            base,
            preset: Some(preset),
            rows: Vec::new(),
            seeds,
        }
    }

    /// Preset rows followed by explicit rows.
    pub fn resolved_rows(&self) -> Vec<AblationRow> {
        let mut rows = self.preset.map(|p| p.rows(&self.base.train)).unwrap_or_default();
        rows.extend(self.rows.iter().cloned());
        rows
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("spec serializes")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRun {
    pub config_id: String,
    pub seed: u64,
    pub report: RunReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub spec_hash: String,
    pub domains: Vec<String>,
    pub row_ids: Vec<String>,
    pub runs: Vec<AblationRun>,
}

/// Runs every `(row, seed)` pair, in parallel over at most `threads`
/// workers (all cores when `None`). Results are ordered by row, then seed.
pub fn run_ablation(spec: &AblationSpec, threads: Option<usize>) -> Result<AblationTable> {
    let rows = spec.resolved_rows();
    if rows.is_empty() || spec.seeds.is_empty() {
        return Err(Error::config("ablation spec has no rows or no seeds"));
    }
    let mut ids: Vec<&str> = rows.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != rows.len() {
        return Err(Error::config("ablation row ids must be unique"));
    }
    let ctx = Context::new(&spec.base)?;
    let mut jobs = Vec::new();
    for r in &rows {
        for &seed in &spec.seeds {
            let mut t = r.train.clone();
            t.seed = seed;
            ctx.experiment(&t).validate()?;
            jobs.push((r.id.clone(), t));
        }
    }
    let domains = spec.base.eval_domains();
    if rows.iter().any(|r| ExperimentConfig { train: r.train.clone(), ..spec.base.clone() }.eval_domains() != domains) {
        return Err(Error::config("every ablation row must evaluate the same domains"));
    }
    let run_all = || {
        jobs.par_iter()
            .map(|(id, t)| {
                run_experiment(&ctx, t).map(|out| AblationRun {
                    config_id: id.clone(),
                    seed: t.seed,
                    report: out.report,
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    let runs = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
            .install(run_all)?,
        None => run_all()?,
    };
    Ok(AblationTable {
        spec_hash: spec.hash(),
        domains,
        row_ids: rows.into_iter().map(|r| r.id).collect(),
        runs,
    })
}

impl AblationTable {
    pub fn runs_for<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a AblationRun> {
        self.runs.iter().filter(move |r| r.config_id == id)
    }

    /// One row per run, then `mean` and `mad` rows per configuration.
    /// Columns: `config_id, seed, map_<domain>..., mad`, where `mad` is the
    /// run's validation-loss MAD (empty when stage 1 was skipped).
    pub fn to_csv(&self) -> String {
        let seeds: Vec<String> = {
            let mut s: Vec<u64> = self.runs.iter().map(|r| r.seed).collect();
            s.dedup();
            s.iter().map(u64::to_string).collect()
        };
        let mut out = preamble(&self.spec_hash, seeds.join(" "));
        out.push_str("config_id,seed");
        for d in &self.domains {
            let _ = write!(out, ",map_{}", d.replace(' ', "_"));
        }
        out.push_str(",mad\n");
        let opt = |v: Option<f64>| v.map(sig).unwrap_or_default();
        for r in &self.runs {
            let _ = write!(out, "{},{}", r.config_id, r.seed);
            for d in &self.domains {
                let _ = write!(out, ",{}", opt(r.report.map_for(d)));
            }
            let _ = writeln!(out, ",{}", opt(r.report.mad_of_validation_loss));
        }
        for id in &self.row_ids {
            let runs: Vec<&AblationRun> = self.runs_for(id).collect();
            for (label, agg) in [("mean", mean as fn(&[f64]) -> Option<f64>), ("mad", |v: &[f64]| mad(v).ok())] {
                let _ = write!(out, "{id},{label}");
                for d in &self.domains {
                    let v: Vec<f64> = runs.iter().filter_map(|r| r.report.map_for(d)).collect();
                    let _ = write!(out, ",{}", opt(agg(&v)));
                }
                let v: Vec<f64> = runs.iter().filter_map(|r| r.report.mad_of_validation_loss).collect();
                let _ = writeln!(out, ",{}", opt(agg(&v)));
            }
        }
        out
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_shapes() {
        let base = TrainConfig::default();
        let count = |p: AblationPreset| p.rows(&base).len();
        assert_eq!(count(AblationPreset::Rdd), 4);
        assert_eq!(count(AblationPreset::Pns), 4);
        assert_eq!(count(AblationPreset::Modules), 11);
        assert_eq!(count(AblationPreset::Prompt), 5);
        assert_eq!(count(AblationPreset::Enhance), 4);
        assert_eq!(count(AblationPreset::Neglabel), 4);
        assert_eq!(count(AblationPreset::Schedule), 4);
        let ids: Vec<String> = AblationPreset::Pns.rows(&base).into_iter().map(|r| r.id).collect();
        assert_eq!(ids, ["ce", "bg_only", "c_only", "bg_plus_c"]);
        let last = AblationPreset::Modules.rows(&base).pop().unwrap();
        assert_eq!(last.train.toggles, Toggles::ALL_ON);
        for p in AblationPreset::ALL {
            assert_eq!(p.as_str().parse::<AblationPreset>().unwrap(), p);
        }
    }

    #[test]
    fn empty_spec_is_config_error() {
        let spec = AblationSpec {
            base: ExperimentConfig::default(),
            preset: None,
            rows: Vec::new(),
            seeds: vec![0],
        };
        assert!(matches!(run_ablation(&spec, Some(1)), Err(Error::Config(_))));
        let spec = AblationSpec::from_preset(ExperimentConfig::default(), AblationPreset::Rdd, vec![]);
        assert!(matches!(run_ablation(&spec, Some(1)), Err(Error::Config(_))));
    }
}
