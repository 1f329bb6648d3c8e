use std::path::{Path, PathBuf};

use anyhow::Context as _;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use zsda_core::pipeline::{AblationSpec, ExperimentConfig, TrainConfig};

use crate::exit::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Preset {
    /// Short schedule that finishes in minutes.
    Desk,
    /// The published iteration counts.
    PaperSchedule,
}

impl Preset {
    /// Overwrites the schedule (both stages) and leaves everything else alone.
    pub fn apply(self, train: &mut TrainConfig) {
        let src = match self {
            Self::Desk => TrainConfig::desk(),
            Self::PaperSchedule => TrainConfig::paper_schedule(),
        };
        train.stage1 = src.stage1;
        train.stage2 = src.stage2;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<ReportFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("zsda-out"),
            formats: vec![ReportFormat::Json, ReportFormat::Csv],
        }
    }
}

/// Contents of a `--config` file for the training subcommands.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path)
        .map_err(anyhow::Error::from)
        .with_context(|| format!("reading {}", path.display()))
}

/// Strict JSON; the parser's message carries line, column and the
/// offending key.
fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> anyhow::Result<T> {
    serde_json::from_str(text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> anyhow::Result<CliConfig> {
    let cfg: CliConfig = parse(path, &read(path)?)?;
    Ok(cfg)
}

pub fn load_ablation(path: &Path) -> anyhow::Result<AblationSpec> {
    parse(path, &read(path)?)
}

/// Applies `--preset`, `--seed` and `--out` on top of a loaded config.
pub fn resolve(
    mut cfg: CliConfig,
    preset: Option<Preset>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> anyhow::Result<CliConfig> {
    if let Some(p) = preset {
        p.apply(&mut cfg.experiment.train);
    }
    if let Some(s) = seed {
        cfg.experiment.train.seed = s;
    }
    if let Some(o) = out {
        cfg.output.dir = o;
    }
    cfg.experiment.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_touches_only_the_schedule() {
        let mut t = TrainConfig::default();
        t.batch_size = 2;
        Preset::PaperSchedule.apply(&mut t);
        assert_eq!(t.stage1.iters, 5000);
        assert_eq!(t.batch_size, 2);
        Preset::Desk.apply(&mut t);
        assert_eq!(t.stage1, TrainConfig::default().stage1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse::<CliConfig>(Path::new("c.json"), r#"{"output": {"dri": "x"}}"#).unwrap_err();
        let f = err.downcast_ref::<Failure>().unwrap();
        assert_eq!(f.code, crate::exit::CONFIG);
        assert!(f.message.contains("dri"), "{}", f.message);
        assert!(f.message.contains("line 1"), "{}", f.message);
    }
}
