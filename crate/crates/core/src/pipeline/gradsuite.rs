//! Finite-difference checks over every differentiable piece the trainers use.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::feature::FeatureMap;
use crate::mdp::{PromptBuilder, PromptMode, PromptParams, PromptVars};
use crate::numcore::{grad_check, GradCheckConfig, GradCheckReport, Graph, SpatialMap, Tensor, Var};
use crate::rng::DetRng;
use crate::strategies::{
    loss_align_var, loss_background_var, loss_nll_var, loss_positive_var, loss_relative_var,
    loss_semantic_var, prob_var, rdd_total_var, BgVariant, RddMask, RddVars, RddWeights,
};
use crate::stubclip::{ClipConfig, ClipStub};
use crate::ure::{enhance_var, EnhanceMode, EnhanceParams};

use super::pooling::{patch_sum_map, PoolWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteEntry {
    pub name: String,
    pub seeds: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteReport {
    pub entries: Vec<GradSuiteEntry>,
    pub passed: bool,
}

type Check = fn(&mut DetRng, GradCheckConfig) -> Result<GradCheckReport>;

fn vecs(rng: &mut DetRng, n: usize, len: usize) -> Vec<Tensor> {
    (0..n).map(|_| Tensor::vector(rng.gaussian_vec(len, 1.0))).collect()
}

fn weighted_sum(g: &mut Graph, x: Var, w: Vec<f64>) -> Result<Var> {
    let wv = g.constant_vec(g.shape(x).to_vec(), w)?;
    let p = g.mul(x, wv)?;
    Ok(g.sum(p))
}

fn check_cosine(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    grad_check(|g, v| g.cosine(v[0], v[1]), &vecs(rng, 2, 6), cfg)
}

fn check_softmax_log(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let w = rng.gaussian_vec(5, 1.0);
    grad_check(
        |g, v| {
            let p = g.softmax(v[0])?;
            let l = g.log(p)?;
            weighted_sum(g, l, w.clone())
        },
        &vecs(rng, 1, 5),
        cfg,
    )
}

fn check_l1(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    grad_check(|g, v| g.l1(v[0], v[1]), &vecs(rng, 2, 6), cfg)
}

fn check_smooth_l1(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let mut xs = vecs(rng, 2, 6);
    xs[0].values_mut().iter_mut().for_each(|x| *x *= 2.0);
    grad_check(|g, v| g.smooth_l1(v[0], v[1]), &xs, cfg)
}

fn check_projection(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let m = Tensor::new(vec![4, 6], rng.gaussian_vec(24, 1.0))?;
    let x = Tensor::vector(rng.gaussian_vec(6, 1.0));
    let w = rng.gaussian_vec(4, 1.0);
    grad_check(
        |g, v| {
            let y = g.matvec(v[0], v[1])?;
            let r = g.relu(y);
            let n = g.normalize(y)?;
            let s = g.add(r, n)?;
            weighted_sum(g, s, w.clone())
        },
        &[m, x],
        cfg,
    )
}

fn check_roi_spatial(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let x0 = rng.range(0.0, 3.0);
    let y0 = rng.range(0.0, 3.0);
    let map = Arc::new(SpatialMap::roi_align(8, 8, [x0, y0, x0 + 4.5, y0 + 3.5], 4)?);
    let fm = Tensor::new(vec![2, 8, 8], rng.gaussian_vec(128, 1.0))?;
    let w = rng.gaussian_vec(32, 1.0);
    grad_check(
        |g, v| {
            let y = g.spatial(v[0], &map)?;
            weighted_sum(g, y, w.clone())
        },
        &[fm],
        cfg,
    )
}

fn check_enhance(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let fm = Tensor::new(vec![2, 6, 6], rng.gaussian_vec(72, 1.0))?;
    let s = Tensor::new(vec![2, 3, 3], rng.gaussian_vec(18, 0.5))?;
    let m = Tensor::new(vec![2, 3, 3], rng.gaussian_vec(18, 0.5))?;
    let w = rng.gaussian_vec(72, 1.0);
    grad_check(
        |g, v| {
            let y = enhance_var(g, v[0], v[1], v[2], (3, 3))?;
            weighted_sum(g, y, w.clone())
        },
        &[fm, s, m],
        cfg,
    )
}

/// Pooled enhanced ROI features through a projection and a cosine.
fn check_pooled_enhance(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let (c, grid) = (3, (2, 2));
    let fm = FeatureMap::new(c, 10, 10, rng.gaussian_vec(300, 1.0))?;
    let x0 = rng.range(0.0, 4.0);
    let moments = PoolWeights::roi(10, 10, &[x0, 1.0, x0 + 5.0, 8.0])?.moments(&fm, grid)?;
    let params = EnhanceParams::identity(c, grid, EnhanceMode::MuAndSigma)?;
    let sigma = Tensor::new(vec![c, 2, 2], params.e_sigma().values().iter().map(|v| v + 0.2 * rng.gaussian()).collect())?;
    let mu = Tensor::new(vec![c, 2, 2], rng.gaussian_vec(12, 0.2))?;
    let proj = Tensor::new(vec![4, c], rng.gaussian_vec(4 * c, 1.0))?;
    let target = rng.gaussian_vec(4, 1.0);
    let sum_map = patch_sum_map(grid);
    grad_check(
        |g, v| {
            let p = moments.pooled_var(g, v[0], v[1], &sum_map)?;
            let p = g.concat(&[p])?;
            let e = g.matvec(v[2], p)?;
            let e = g.normalize(e)?;
            let t = g.constant_vec(vec![4], target.clone())?;
            g.cosine(e, t)
        },
        &[sigma, mu, proj],
        cfg,
    )
}

fn rdd_inputs(rng: &mut DetRng) -> Vec<Tensor> {
    vecs(rng, 6, 6)
}

fn rdd_vars(g: &mut Graph, v: &[Var]) -> Result<RddVars> {
    let n: Vec<Var> = v.iter().map(|&x| g.normalize(x)).collect::<Result<_>>()?;
    Ok(RddVars {
        e_i_s: vec![n[0], n[1]],
        e_i_st: vec![n[2], n[3]],
        t_i_s: n[4],
        t_i_t: n[5],
    })
}

fn check_align(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    grad_check(|g, v| {
        let b = rdd_vars(g, v)?;
        loss_align_var(g, &b)
    }, &rdd_inputs(rng), cfg)
}

fn check_semantic(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    grad_check(|g, v| {
        let b = rdd_vars(g, v)?;
        loss_semantic_var(g, &b)
    }, &rdd_inputs(rng), cfg)
}

fn check_relative(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    grad_check(|g, v| {
        let b = rdd_vars(g, v)?;
        loss_relative_var(g, &b)
    }, &rdd_inputs(rng), cfg)
}

fn check_rdd_total(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    grad_check(
        |g, v| {
            let b = rdd_vars(g, v)?;
            Ok(rdd_total_var(g, &b, &RddWeights::default(), &RddMask::ALL)?.total)
        },
        &rdd_inputs(rng),
        cfg,
    )
}

fn categories() -> Vec<String> {
    ["bus", "car", "person"].iter().map(|s| s.to_string()).collect()
}

/// Positive-proposal loss through the encoded prompt table, with respect
/// to the learnable context.
fn check_prompt_positive(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let clip = ClipStub::new(ClipConfig {
        seed: 3,
        d_tok: 6,
        d_emb: 8,
        channels: 8,
    })?;
    let cats = categories();
    let builder = PromptBuilder::new(&clip, &cats);
    let params = PromptParams::init(PromptMode::LearnableComplete, 2, 6, rng.below(1000) as u64)?;
    let e = rng.gaussian_vec(8, 1.0);
    let label = rng.below(cats.len());
    let inputs = params.blocks().to_vec();
    grad_check(
        |g, v| {
            let mut vars = PromptVars::new(g, &params, false);
            vars.blocks = v.to_vec();
            let table = builder.table_var(g, &params, &vars, "rainy")?;
            let ev = g.constant_vec(vec![8], e.clone())?;
            let p = prob_var(g, ev, &table.positives, 0.5)?;
            loss_positive_var(g, &[(p, label)])
        },
        &inputs,
        cfg,
    )
}

fn check_detect_nll(rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let label = rng.below(4);
    grad_check(
        |g, v| {
            let p = prob_var(g, v[0], &v[1..], 1.0)?;
            loss_nll_var(g, &[(p, label)])
        },
        &vecs(rng, 5, 6),
        cfg,
    )
}

fn check_background(variant: BgVariant, rng: &mut DetRng, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    grad_check(
        |g, v| {
            let p1 = prob_var(g, v[0], &v[2..], 1.0)?;
            let p2 = prob_var(g, v[1], &v[2..], 1.0)?;
            loss_background_var(g, &[p1, p2], 1.0 / 3.0, variant)
        },
        &vecs(rng, 6, 5),
        cfg,
    )
}

fn entries() -> Vec<(&'static str, Check)> {
    vec![
        ("cosine", check_cosine),
        ("softmax_log", check_softmax_log),
        ("l1", check_l1),
        ("smooth_l1", check_smooth_l1),
        ("projection_relu_normalize", check_projection),
        ("roi_align", check_roi_spatial),
        ("enhance", check_enhance),
        ("pooled_enhance", check_pooled_enhance),
        ("loss_align", check_align),
        ("loss_semantic", check_semantic),
        ("loss_relative", check_relative),
        ("rdd_total", check_rdd_total),
        ("loss_positive_prompt", check_prompt_positive),
        ("detect_nll", check_detect_nll),
        ("bg_uniform_ce", |r, c| check_background(BgVariant::UniformCe, r, c)),
        ("bg_hinge_positive_diff", |r, c| check_background(BgVariant::HingePositiveDiff, r, c)),
        ("bg_detpro_binary", |r, c| check_background(BgVariant::DetproBinary, r, c)),
        ("bg_detpro_uniform_fg", |r, c| check_background(BgVariant::DetproUniformFg, r, c)),
    ]
}

/// Runs every check on seeds `0..seeds`. A nonzero `analytic_bias` shifts
/// each analytic gradient entry and should make the suite fail.
pub fn run_gradient_suite(seeds: usize, analytic_bias: f64) -> Result<GradSuiteReport> {
    let cfg = GradCheckConfig {
        analytic_bias,
        ..GradCheckConfig::default()
    };
    let mut out = Vec::new();
    for (name, check) in entries() {
        let mut worst = 0.0_f64;
        let mut passed = true;
        for seed in 0..seeds as u64 {
            let mut rng = DetRng::new(seed.wrapping_mul(0x9e37_79b9).wrapping_add(17));
            let r = check(&mut rng, cfg)?;
            worst = worst.max(r.max_rel_error);
            passed &= r.passed;
        }
        out.push(GradSuiteEntry {
            name: name.to_string(),
            seeds,
            max_rel_error: worst,
            passed,
        });
    }
    let passed = out.iter().all(|e| e.passed);
    Ok(GradSuiteReport { entries: out, passed })
}
