use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::simworld::mad;

/// Version stamped into every report and blob this crate writes.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Stage1,
    Stage2,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Warmup => "warmup",
            Self::Stage1 => "stage1",
            Self::Stage2 => "stage2",
        }
    }
}

/// Loss values at one iteration; `None` for terms that are not active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub phase: Phase,
    pub iter: usize,
    pub total: f64,
    pub align: Option<f64>,
    pub semantic: Option<f64>,
    pub relative: Option<f64>,
    pub positive: Option<f64>,
    pub background: Option<f64>,
    pub ce: Option<f64>,
    pub classification: Option<f64>,
    pub regression: Option<f64>,
}

impl LossRecord {
    pub fn new(phase: Phase, iter: usize, total: f64) -> Self {
        Self {
            phase,
            iter,
            total,
            align: None,
            semantic: None,
            relative: None,
            positive: None,
            background: None,
            ce: None,
            classification: None,
            regression: None,
        }
    }

    /// Active components in a fixed order.
    pub fn components(&self) -> Vec<f64> {
        [
            self.align,
            self.semantic,
            self.relative,
            self.positive,
            self.background,
            self.ce,
            self.classification,
            self.regression,
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub domain: String,
    pub categories: Vec<String>,
    /// `None` for categories without ground truth in the sampled scenes.
    pub per_category_ap: Vec<Option<f64>>,
    pub map: f64,
    pub scenes: usize,
    pub detections: usize,
    /// Enhancement applications during evaluation; always 0.
    pub enhance_invocations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub enhance_invocations: u64,
    pub image_prompt_encodings: u64,
    pub instance_prompt_encodings: u64,
    pub stage2_iterations: u64,
    pub stage2_enhanced_iterations: u64,
}

impl Counters {
    pub fn absorb(&mut self, o: &Counters) {
        self.enhance_invocations += o.enhance_invocations;
        self.image_prompt_encodings += o.image_prompt_encodings;
        self.instance_prompt_encodings += o.instance_prompt_encodings;
        self.stage2_iterations += o.stage2_iterations;
        self.stage2_enhanced_iterations += o.stage2_enhanced_iterations;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamHashes {
    pub prompts: String,
    pub enhance: String,
    pub text_stub: String,
    pub head: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub world_hash: String,
    pub loss_history: Vec<LossRecord>,
    pub validation_history: Vec<LossRecord>,
    pub mad_of_validation_loss: Option<f64>,
    pub eval: Vec<DomainMetrics>,
    /// Frozen-parameter hashes on entry to stage 2.
    pub frozen_before: Option<ParamHashes>,
    pub hashes: Option<ParamHashes>,
    pub counters: Counters,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn new(config_hash: String, seed: u64, world_hash: String) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config_hash,
            seed,
            world_hash,
            loss_history: Vec::new(),
            validation_history: Vec::new(),
            mad_of_validation_loss: None,
            eval: Vec::new(),
            frozen_before: None,
            hashes: None,
            counters: Counters::default(),
            wall_clock_secs: 0.0,
        }
    }

    /// Appends a later phase's report onto this one.
    pub fn absorb(&mut self, later: RunReport) {
        self.loss_history.extend(later.loss_history);
        self.validation_history.extend(later.validation_history);
        if later.mad_of_validation_loss.is_some() {
            self.mad_of_validation_loss = later.mad_of_validation_loss;
        }
        self.eval.extend(later.eval);
        if later.frozen_before.is_some() {
            self.frozen_before = later.frozen_before;
        }
        if later.hashes.is_some() {
            self.hashes = later.hashes;
        }
        self.counters.absorb(&later.counters);
        self.wall_clock_secs += later.wall_clock_secs;
    }

    pub fn phase_history(&self, phase: Phase) -> impl Iterator<Item = &LossRecord> {
        self.loss_history.iter().filter(move |r| r.phase == phase)
    }

    pub fn map_for(&self, domain: &str) -> Option<f64> {
        self.eval.iter().find(|m| m.domain == domain).map(|m| m.map)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Loss history as CSV with a `#` preamble carrying hash and seed.
    pub fn loss_csv(&self) -> String {
        let mut s = preamble(&self.config_hash, self.seed);
        s.push_str("phase,iter,total,align,semantic,relative,positive,background,ce,classification,regression\n");
        for r in &self.loss_history {
            let _ = write!(s, "{},{},{}", r.phase.as_str(), r.iter, sig(r.total));
            for v in [
                r.align,
                r.semantic,
                r.relative,
                r.positive,
                r.background,
                r.ce,
                r.classification,
                r.regression,
            ] {
                s.push(',');
                if let Some(v) = v {
                    s.push_str(&sig(v));
                }
            }
            s.push('\n');
        }
        s
    }
}

pub fn preamble(config_hash: &str, seed: impl std::fmt::Display) -> String {
    format!("# config_hash={config_hash}\n# seed={seed}\n")
}

/// Nine significant digits, `.` decimal separator, no grouping.
pub fn sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v:.8e}")
}

/// Mean absolute deviation of the validation totals, `None` if empty.
pub fn validation_mad(history: &[LossRecord]) -> Option<f64> {
    let totals: Vec<f64> = history.iter().map(|r| r.total).collect();
    mad(&totals).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_digits() {
        assert_eq!(sig(0.0), "0");
        assert_eq!(sig(1.0), "1.00000000e0");
        assert_eq!(sig(-0.000123456789012), "-1.23456789e-4");
        assert_eq!(sig(2.0f64.sqrt()).len(), "1.41421356e0".len());
    }

    #[test]
    fn wall_clock_is_not_serialized() {
        let mut r = RunReport::new("h".into(), 1, "w".into());
        let a = r.to_json().unwrap();
        r.wall_clock_secs = 12.5;
        assert_eq!(a, r.to_json().unwrap());
        let back: RunReport = serde_json::from_str(&a).unwrap();
        assert_eq!(back.seed, 1);
    }

    #[test]
    fn csv_layout() {
        let mut r = RunReport::new("abc".into(), 7, "w".into());
        let mut rec = LossRecord::new(Phase::Stage1, 0, 1.5);
        rec.align = Some(1.5);
        r.loss_history.push(rec);
        let csv = r.loss_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# config_hash=abc");
        assert_eq!(lines[1], "# seed=7");
        assert_eq!(lines[3], "stage1,0,1.50000000e0,1.50000000e0,,,,,,,");
    }
}
