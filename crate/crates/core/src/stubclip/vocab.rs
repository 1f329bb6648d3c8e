use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng::{stream, DetRng};

use super::templates::TemplateBank;

/// Id reserved for tokens outside the lexicon.
pub const UNK: usize = 0;

/// Standard deviation of word-embedding entries.
pub const WORD_STD: f64 = 0.02;

/// Words always present in the lexicon besides the template bank's.
const BASE_WORDS: &[&str] = &[
    "a", "an", "the", "photo", "of", "taken", "in", "on", "at", "unknown", "class",
    // categories
    "bus", "bike", "car", "motor", "person", "rider", "truck", "bicycle", "motorcycle",
    "pedestrian", "train", "van", "sign", "light",
    // domain words
    "daytime", "nighttime", "night", "dusk", "dawn", "clear", "foggy", "fog", "rainy", "rain",
    "snowy", "snow", "sunny", "cloudy", "overcast", "stormy", "misty", "day", "evening",
    "morning", "virtual", "real", "world", "synthetic", "city", "cityscape", "cityscapes",
    "germany", "america", "usa", "kitti", "bdd100k", "sim10k", "gta", "game",
];

/// Lowercases, splits on whitespace and strips every non-alphanumeric
/// character from each piece. Pieces that end up empty are dropped.
pub fn normalize_tokens(text: &str) -> Result<Vec<String>> {
    let toks: Vec<String> = text
        .split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect();
    if toks.is_empty() {
        return Err(Error::input(format!("no tokens in {text:?}")));
    }
    Ok(toks)
}

/// Fixed word list plus a seeded embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, usize>,
    /// `(vocab_size x d_tok)`; row 0 is the UNK embedding.
    embedding_table: Tensor,
}

impl Vocabulary {
    /// Built-in lexicon: [`BASE_WORDS`] plus every token of the built-in template bank.
    pub fn builtin(seed: u64, d_tok: usize) -> Self {
        let mut words: BTreeSet<String> = BASE_WORDS.iter().map(|w| w.to_string()).collect();
        for t in TemplateBank::builtin().templates() {
            let filled = t.replace(super::templates::SLOT, " ");
            if let Ok(toks) = normalize_tokens(&filled) {
                words.extend(toks);
            }
        }
        let token_to_id: BTreeMap<String, usize> = words
            .into_iter()
            .enumerate()
            .map(|(i, w)| (w, i + 1))
            .collect();
        let n = token_to_id.len() + 1;
        let mut rng = DetRng::derive(seed, stream::VOCAB);
        let table = rng.gaussian_vec(n * d_tok, WORD_STD);
        Self {
            token_to_id,
            embedding_table: Tensor::new(vec![n, d_tok], table).expect("vocab table"),
        }
    }

    pub fn len(&self) -> usize {
        self.token_to_id.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.embedding_table.shape()[1]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn table(&self) -> &Tensor {
        &self.embedding_table
    }

    /// Token ids for `text`; tokens outside the lexicon map to [`UNK`].
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        Ok(normalize_tokens(text)?
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect())
    }

    /// Like [`Vocabulary::tokenize`] but rejects unknown tokens.
    pub fn tokenize_strict(&self, text: &str) -> Result<Vec<usize>> {
        let toks = normalize_tokens(text)?;
        toks.iter()
            .map(|t| {
                self.id(t)
                    .ok_or_else(|| Error::input(format!("token {t:?} is not in the vocabulary")))
            })
            .collect()
    }

    /// `(ids.len() x d_tok)` matrix of word embeddings.
    pub fn embed(&self, ids: &[usize]) -> Result<Tensor> {
        if ids.is_empty() {
            return Err(Error::input("cannot embed an empty token sequence"));
        }
        let d = self.dim();
        let table = self.embedding_table.values();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= self.len() {
                return Err(Error::input(format!("token id {id} out of range")));
            }
            out.extend_from_slice(&table[id * d..(id + 1) * d]);
        }
        Tensor::new(vec![ids.len(), d], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_contract() {
        let v = Vocabulary::builtin(1, 8);
        let ids = v.tokenize("A photo taken in a fog.").unwrap();
        let expect: Vec<usize> = ["a", "photo", "taken", "in", "a", "fog"]
            .iter()
            .map(|w| v.id(w).unwrap())
            .collect();
        assert_eq!(ids, expect);
        assert_eq!(
            v.tokenize("NIGHT Rainy").unwrap(),
            v.tokenize("night rainy").unwrap()
        );
        assert_eq!(v.tokenize("zyzzyva").unwrap(), vec![UNK]);
        assert!(matches!(v.tokenize("   "), Err(Error::Input(_))));
        assert!(matches!(v.tokenize(" ... "), Err(Error::Input(_))));
        assert!(v.tokenize_strict("zyzzyva car").is_err());
    }

    #[test]
    fn table_is_deterministic() {
        let a = Vocabulary::builtin(5, 16);
        let b = Vocabulary::builtin(5, 16);
        assert_eq!(a, b);
        assert_ne!(a, Vocabulary::builtin(6, 16));
    }

    #[test]
    fn default_names_are_covered() {
        let v = Vocabulary::builtin(0, 4);
        for w in ["bus", "bike", "car", "motor", "person", "rider", "truck", "unknown", "class"] {
            assert!(v.contains(w), "{w}");
        }
        for w in ["daytime", "clear", "foggy", "night", "rainy", "dusk"] {
            assert!(v.contains(w), "{w}");
        }
    }
}
