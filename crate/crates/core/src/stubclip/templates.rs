use std::path::Path;

use crate::error::{Error, Result};

pub const SLOT: &str = "[domain]";

/// Number of entries in a valid bank.
pub const BANK_SIZE: usize = 90;

const BUILTIN: &str = include_str!("templates.txt");

/// Domain-description templates, each holding exactly one `[domain]` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateBank {
    templates: Vec<String>,
}

impl TemplateBank {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("built-in template bank is valid")
    }

    /// One template per non-empty line.
    pub fn parse(text: &str) -> Result<Self> {
        let templates: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        if templates.len() != BANK_SIZE {
            return Err(Error::input(format!(
                "template bank must hold {BANK_SIZE} entries, found {}",
                templates.len()
            )));
        }
        for (i, t) in templates.iter().enumerate() {
            if t.matches(SLOT).count() != 1 {
                return Err(Error::input(format!(
                    "template {} must contain {SLOT} exactly once: {t:?}",
                    i + 1
                )));
            }
        }
        Ok(Self { templates })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn fill(&self, index: usize, domain: &str) -> Result<String> {
        let t = self
            .templates
            .get(index)
            .ok_or_else(|| Error::input(format!("template index {index} out of range")))?;
        Ok(t.replace(SLOT, domain))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_bank_shape() {
        let b = TemplateBank::builtin();
        assert_eq!(b.len(), 90);
        assert!(b.templates().iter().all(|t| t.matches(SLOT).count() == 1));
        assert_eq!(b.fill(0, "fog").unwrap(), "A photo taken in a fog.");
    }

    #[test]
    fn parse_rejects_bad_banks() {
        assert!(TemplateBank::parse("a photo taken in a [domain].").is_err());
        let mut lines = vec!["a [domain] photo".to_string(); 89];
        lines.push("no slot here".into());
        assert!(TemplateBank::parse(&lines.join("\n")).is_err());
        let mut lines = vec!["a [domain] photo".to_string(); 89];
        lines.push("[domain] and [domain]".into());
        assert!(TemplateBank::parse(&lines.join("\n")).is_err());
        let lines = vec!["a [domain] photo".to_string(); 90];
        assert!(TemplateBank::parse(&lines.join("\n")).is_ok());
    }
}
