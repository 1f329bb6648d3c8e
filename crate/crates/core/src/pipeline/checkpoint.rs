//! Binary parameter blobs.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` descriptor length,
//! JSON descriptor, every array as little-endian `f64`, then a SHA-256 of
//! all preceding bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{PromptMode, PromptParams};
use crate::numcore::Tensor;
use crate::ure::{EnhanceMode, EnhanceParams};

use super::config::ExperimentConfig;
use super::head::DetectorHead;
use super::report::{ParamHashes, FORMAT_VERSION};
use super::FrozenParams;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ZSDACKPT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobKind {
    /// Output of stage 1 (and warm-up).
    Stage1,
    /// Output of stage 2: everything evaluation needs.
    Model,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    kind: BlobKind,
    experiment: ExperimentConfig,
    config_hash: String,
    seed: u64,
    prompt_mode: PromptMode,
    context_len: usize,
    d_tok: usize,
    enhance_mode: EnhanceMode,
    hashes: ParamHashes,
    arrays: Vec<ArrayMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: BlobKind,
    pub experiment: ExperimentConfig,
    pub frozen: FrozenParams,
    pub head: DetectorHead,
    pub hashes: ParamHashes,
}

const HEADER: usize = 8 + 4 + 8;
const DIGEST: usize = 32;

impl Checkpoint {
    pub fn config_hash(&self) -> String {
        self.experiment.hash()
    }

    fn arrays(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .frozen
            .prompts
            .blocks()
            .iter()
            .enumerate()
            .map(|(i, b)| (format!("prompt_block_{i}"), b))
            .collect();
        out.push(("e_mu".into(), self.frozen.enhance.e_mu()));
        out.push(("e_sigma".into(), self.frozen.enhance.e_sigma()));
        out.push(("head_projection".into(), &self.head.projection));
        out.push(("head_regression".into(), &self.head.regression));
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arrays = self.arrays();
        let p = &self.frozen.prompts;
        let desc = Descriptor {
            kind: self.kind,
            experiment: self.experiment.clone(),
            config_hash: self.config_hash(),
            seed: self.experiment.train.seed,
            prompt_mode: p.mode(),
            context_len: p.context_len(),
            d_tok: p.d_tok(),
            enhance_mode: self.frozen.enhance.mode(),
            hashes: self.hashes.clone(),
            arrays: arrays
                .iter()
                .map(|(n, t)| ArrayMeta {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&desc)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in arrays {
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |why: &str| Error::Format(format!("corrupt checkpoint: {why}"));
        if bytes.len() < HEADER + DIGEST || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic or truncated"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let n = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let json = body.get(HEADER..HEADER + n).ok_or_else(|| corrupt("descriptor overruns file"))?;
        let desc: Descriptor = serde_json::from_slice(json).map_err(|e| corrupt(&e.to_string()))?;
        let mut data = &body[HEADER + n..];
        let mut take = |meta: &ArrayMeta| -> Result<Tensor> {
            let len: usize = meta.shape.iter().product();
            if data.len() < len * 8 {
                return Err(corrupt("array data truncated"));
            }
            let (head, rest) = data.split_at(len * 8);
            data = rest;
            let values = head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Tensor::new(meta.shape.clone(), values)
        };
        let find = |name: &str| {
            desc.arrays
                .iter()
                .position(|a| a.name == name)
                .ok_or_else(|| corrupt(&format!("missing array {name}")))
        };
        let tensors = desc.arrays.iter().map(&mut take).collect::<Result<Vec<_>>>()?;
        if !data.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        let blocks: Vec<Tensor> = desc
            .arrays
            .iter()
            .zip(&tensors)
            .filter(|(m, _)| m.name.starts_with("prompt_block_"))
            .map(|(_, t)| t.clone())
            .collect();
        let prompts = PromptParams::from_parts(desc.prompt_mode, desc.context_len, desc.d_tok, blocks)
            .map_err(|e| corrupt(&e.to_string()))?;
        let enhance = EnhanceParams::from_parts(
            desc.enhance_mode,
            tensors[find("e_mu")?].clone(),
            tensors[find("e_sigma")?].clone(),
        )
        .map_err(|e| corrupt(&e.to_string()))?;
        let head = DetectorHead::from_parts(
            tensors[find("head_projection")?].clone(),
            tensors[find("head_regression")?].clone(),
        )
        .map_err(|e| corrupt(&e.to_string()))?;
        let ck = Self {
            kind: desc.kind,
            experiment: desc.experiment,
            frozen: FrozenParams { prompts, enhance },
            head,
            hashes: desc.hashes,
        };
        if ck.config_hash() != desc.config_hash {
            return Err(corrupt("config hash mismatch"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
