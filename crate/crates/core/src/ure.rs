//! Patch-wise affine enhancement turning source features into pseudo-target
//! features: `sigma[j] * f[j] + mu[j]` for every patch `j` of an `M x N` grid.

use std::cell::Cell;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::numcore::{hash_into, Graph, Tensor, Var};
use crate::rng::DetRng;

pub const DEFAULT_GRID: (usize, usize) = (7, 7);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnhanceMode {
    #[default]
    MuAndSigma,
    /// `mu` stays frozen at 0.
    SigmaOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceParams {
    mode: EnhanceMode,
    grid: (usize, usize),
    e_mu: Tensor,
    e_sigma: Tensor,
}

impl EnhanceParams {
    /// Identity transform (`sigma = 1`, `mu = 0`).
    pub fn identity(channels: usize, grid: (usize, usize), mode: EnhanceMode) -> Result<Self> {
        if channels == 0 || grid.0 == 0 || grid.1 == 0 {
            return Err(Error::config(format!(
                "enhancement needs positive channels and grid, got {channels} and {grid:?}"
            )));
        }
        let shape = vec![channels, grid.0, grid.1];
        Ok(Self {
            mode,
            grid,
            e_mu: Tensor::zeros(shape.clone()),
            e_sigma: Tensor::filled(shape, 1.0),
        })
    }

    pub fn from_parts(mode: EnhanceMode, e_mu: Tensor, e_sigma: Tensor) -> Result<Self> {
        let s = e_mu.shape().to_vec();
        if s.len() != 3 || e_sigma.shape() != s.as_slice() {
            return Err(Error::shape(format!(
                "e_mu {:?} and e_sigma {:?} must share a [C, M, N] shape",
                e_mu.shape(),
                e_sigma.shape()
            )));
        }
        Ok(Self {
            mode,
            grid: (s[1], s[2]),
            e_mu,
            e_sigma,
        })
    }

    pub fn mode(&self) -> EnhanceMode {
        self.mode
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.e_mu.shape()[0]
    }

    pub fn e_mu(&self) -> &Tensor {
        &self.e_mu
    }

    pub fn e_sigma(&self) -> &Tensor {
        &self.e_sigma
    }

    pub fn e_mu_mut(&mut self) -> &mut Tensor {
        &mut self.e_mu
    }

    pub fn e_sigma_mut(&mut self) -> &mut Tensor {
        &mut self.e_sigma
    }

    pub fn mu_trainable(&self) -> bool {
        self.mode == EnhanceMode::MuAndSigma
    }

    pub fn is_identity(&self) -> bool {
        self.e_mu.values().iter().all(|&v| v == 0.0) && self.e_sigma.values().iter().all(|&v| v == 1.0)
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.mode));
        hash_into(&mut h, self.e_mu.shape(), self.e_mu.values());
        hash_into(&mut h, self.e_sigma.shape(), self.e_sigma.values());
        hex::encode(h.finalize())
    }
}

thread_local! {
    static INVOCATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of enhancement applications made on this thread so far.
pub fn invocation_count() -> u64 {
    INVOCATIONS.with(Cell::get)
}

pub(crate) fn count_invocation() {
    INVOCATIONS.with(|c| c.set(c.get() + 1));
}

/// Patch index of every pixel of an `h x w` map under an `m x n` grid.
///
/// Patches are `ceil(h/m) x ceil(w/n)`; a map that does not divide evenly
/// behaves as if edge-padded to fit and cropped back afterwards.
pub fn patch_assignment(h: usize, w: usize, grid: (usize, usize)) -> Arc<Vec<u32>> {
    let (m, n) = grid;
    let ph = h.div_ceil(m);
    let pw = w.div_ceil(n);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(((y / ph) * n + x / pw) as u32);
        }
    }
    Arc::new(out)
}

fn check(fm: &FeatureMap, params: &EnhanceParams) -> Result<()> {
    if fm.channels() != params.channels() {
        return Err(Error::shape(format!(
            "feature map has {} channels, enhancement expects {}",
            fm.channels(),
            params.channels()
        )));
    }
    Ok(())
}

pub fn enhance(fm: &FeatureMap, params: &EnhanceParams) -> Result<FeatureMap> {
    check(fm, params)?;
    count_invocation();
    let (c, h, w) = fm.dims();
    let patch_of = patch_assignment(h, w, params.grid);
    let patches = params.grid.0 * params.grid.1;
    let (s, m) = (params.e_sigma.values(), params.e_mu.values());
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let src = &fm.data()[ch * h * w..(ch + 1) * h * w];
        for (p, &j) in patch_of.iter().enumerate() {
            let k = ch * patches + j as usize;
            out.push(s[k] * src[p] + m[k]);
        }
    }
    FeatureMap::new(c, h, w, out)
}

/// In-graph [`enhance`]; `x` is a `[C, H, W]` node.
pub fn enhance_var(g: &mut Graph, x: Var, sigma: Var, mu: Var, grid: (usize, usize)) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 {
        return Err(Error::shape(format!("enhance expects [C, H, W], got {s:?}")));
    }
    let patch_of = patch_assignment(s[1], s[2], grid);
    count_invocation();
    g.patch_affine(x, sigma, mu, &patch_of)
}

/// The coin flip behind [`maybe_enhance`], for callers that enhance
/// several maps on one decision.
pub fn enhance_gate(p: f64, rng: &mut DetRng) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("enhance probability {p} outside [0, 1]")));
    }
    Ok(rng.bernoulli(p))
}

/// Applies [`enhance`] with probability `p`. Always consumes exactly one
/// uniform draw from `rng`.
pub fn maybe_enhance(
    fm: &FeatureMap,
    params: &EnhanceParams,
    p: f64,
    rng: &mut DetRng,
) -> Result<(FeatureMap, bool)> {
    if enhance_gate(p, rng)? {
        Ok((enhance(fm, params)?, true))
    } else {
        Ok((fm.clone(), false))
    }
}

/// One affine pair per channel over the whole map.
pub fn global_variant(fm: &FeatureMap, params: &EnhanceParams) -> Result<FeatureMap> {
    if params.grid != (1, 1) {
        return Err(Error::config(format!(
            "global variant needs a 1x1 grid, got {:?}",
            params.grid
        )));
    }
    enhance(fm, params)
}
