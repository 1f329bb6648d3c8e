//! Probability heads and training losses.
//!
//! Each loss has an in-graph form (`*_var`) used by training and a plain
//! form over `f64` slices for checks and reporting. Batch expectations are
//! arithmetic means.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BgVariant {
    /// `-sum_c y_bg log P_c` over every class including background.
    #[default]
    UniformCe,
    /// `sum_c max(0, P_c - y_bg)`.
    HingePositiveDiff,
    /// `-log P_bg - sum_{c in fg} log(1 - P_c)`.
    DetproBinary,
    /// Uniform cross-entropy over the renormalized foreground with label `1/|C|`.
    DetproUniformFg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PnsMode {
    /// One cross-entropy over foreground plus background; negatives are labelled background.
    Ce,
    BgOnly,
    COnly,
    #[default]
    BgPlusC,
}

macro_rules! snake_enum_str {
    ($t:ty { $($v:ident => $s:literal),* $(,)? }) => {
        impl $t {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$v => $s),* }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$v),)*
                    _ => Err(Error::config(format!("unknown {} {s:?}", stringify!($t)))),
                }
            }
        }
    };
}

snake_enum_str!(BgVariant {
    UniformCe => "uniform_ce",
    HingePositiveDiff => "hinge_positive_diff",
    DetproBinary => "detpro_binary",
    DetproUniformFg => "detpro_uniform_fg",
});

snake_enum_str!(PnsMode {
    Ce => "ce",
    BgOnly => "bg_only",
    COnly => "c_only",
    BgPlusC => "bg_plus_c",
});

impl PnsMode {
    pub fn uses_positive(self) -> bool {
        matches!(self, Self::COnly | Self::BgPlusC)
    }

    pub fn uses_background(self) -> bool {
        matches!(self, Self::BgOnly | Self::BgPlusC)
    }
}

/// Which of `L_a`, `L_s`, `L_r` enter the image-level loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RddMask {
    pub align: bool,
    pub semantic: bool,
    pub relative: bool,
}

impl RddMask {
    pub const ALL: Self = Self {
        align: true,
        semantic: true,
        relative: true,
    };

    pub fn is_empty(&self) -> bool {
        !(self.align || self.semantic || self.relative)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.align {
            parts.push("La");
        }
        if self.semantic {
            parts.push("Ls");
        }
        if self.relative {
            parts.push("Lr");
        }
        parts.join("+")
    }
}

impl Default for RddMask {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RddWeights {
    pub align: f64,
    pub semantic: f64,
    pub relative: f64,
}

impl Default for RddWeights {
    fn default() -> Self {
        Self {
            align: 1.0,
            semantic: 1.0,
            relative: 1.0,
        }
    }
}

/// `1 / (|C| + 1)`.
pub fn uniform_bg_label(n_categories: usize) -> f64 {
    1.0 / (n_categories as f64 + 1.0)
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::config(format!("softmax temperature must be positive, got {t}")));
    }
    Ok(())
}

/// Softmax over `cos(e, table[k]) / temperature`.
pub fn prob_var(g: &mut Graph, e: Var, table: &[Var], temperature: f64) -> Result<Var> {
    if table.is_empty() {
        return Err(Error::input("empty prompt table"));
    }
    check_temperature(temperature)?;
    let sims = table
        .iter()
        .map(|&t| g.cosine(e, t))
        .collect::<Result<Vec<_>>>()?;
    let logits = g.concat(&sims)?;
    let logits = if temperature == 1.0 {
        logits
    } else {
        g.scale(logits, 1.0 / temperature)
    };
    g.softmax(logits)
}

fn prob_plain(e: &[f64], table: &[Vec<f64>], temperature: f64) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let ev = g.constant_vec(vec![e.len()], e.to_vec())?;
    let tv = table
        .iter()
        .map(|t| g.constant_vec(vec![t.len()], t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let p = prob_var(&mut g, ev, &tv, temperature)?;
    Ok(g.value(p).to_vec())
}

/// Classifier over categories plus background.
pub fn detect_prob(e: &[f64], table: &[Vec<f64>], temperature: f64) -> Result<Vec<f64>> {
    prob_plain(e, table, temperature)
}

/// Foreground-only classifier; `fg_table` excludes the background entry.
pub fn positive_prob(e: &[f64], fg_table: &[Vec<f64>], temperature: f64) -> Result<Vec<f64>> {
    prob_plain(e, fg_table, temperature)
}

/// Same head as [`detect_prob`], applied to negative proposals.
pub fn negative_prob(e: &[f64], full_table: &[Vec<f64>], temperature: f64) -> Result<Vec<f64>> {
    if full_table.len() < 2 {
        return Err(Error::input("negative table needs categories plus background"));
    }
    prob_plain(e, full_table, temperature)
}

fn batch_mean(g: &mut Graph, items: &[Var]) -> Result<Var> {
    if items.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let all = g.concat(items)?;
    Ok(g.mean(all))
}

/// Mean of `-log probs[label]` over `(probs, label)` pairs.
pub fn loss_nll_var(g: &mut Graph, items: &[(Var, usize)]) -> Result<Var> {
    let terms = items
        .iter()
        .map(|&(p, y)| {
            if y >= g.value(p).len() {
                return Err(Error::input(format!("label {y} outside {} classes", g.value(p).len())));
            }
            let py = g.pick(p, y)?;
            let l = g.log(py)?;
            Ok(g.scale(l, -1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    batch_mean(g, &terms)
}

/// `L_c` over foreground-only probability vectors.
pub fn loss_positive_var(g: &mut Graph, items: &[(Var, usize)]) -> Result<Var> {
    loss_nll_var(g, items)
}

pub fn loss_positive(batch: &[(Vec<f64>, usize)]) -> Result<f64> {
    let mut g = Graph::new();
    let items = batch
        .iter()
        .map(|(p, y)| Ok((g.constant_vec(vec![p.len()], p.clone())?, *y)))
        .collect::<Result<Vec<_>>>()?;
    let l = loss_positive_var(&mut g, &items)?;
    Ok(g.scalar(l))
}

fn background_term(g: &mut Graph, p: Var, y_bg: f64, variant: BgVariant) -> Result<Var> {
    let k = g.value(p).len();
    if k < 2 {
        return Err(Error::input("background loss needs at least one category plus background"));
    }
    Ok(match variant {
        BgVariant::UniformCe => {
            let lp = g.log(p)?;
            let s = g.sum(lp);
            g.scale(s, -y_bg)
        }
        BgVariant::HingePositiveDiff => {
            let d = g.offset(p, -y_bg);
            let r = g.relu(d);
            g.sum(r)
        }
        BgVariant::DetproBinary => {
            let bg = g.pick(p, k - 1)?;
            let lbg = g.log(bg)?;
            let fg = g.slice(p, 0, k - 1)?;
            let neg = g.scale(fg, -1.0);
            let comp = g.offset(neg, 1.0);
            let lc = g.log(comp)?;
            let s = g.sum(lc);
            let t = g.add(lbg, s)?;
            g.scale(t, -1.0)
        }
        BgVariant::DetproUniformFg => {
            // -(1/|C|) sum_c log(P_c / S) with S the foreground mass.
            let fg = g.slice(p, 0, k - 1)?;
            let lfg = g.log(fg)?;
            let m = g.mean(lfg);
            let s = g.sum(fg);
            let ls = g.log(s)?;
            g.sub(ls, m)?
        }
    })
}

/// `L_bg` averaged over negative proposals; each `probs` entry is a
/// distribution over categories followed by background.
pub fn loss_background_var(g: &mut Graph, probs: &[Var], y_bg: f64, variant: BgVariant) -> Result<Var> {
    let terms = probs
        .iter()
        .map(|&p| background_term(g, p, y_bg, variant))
        .collect::<Result<Vec<_>>>()?;
    batch_mean(g, &terms)
}

pub fn loss_background(probs: &[Vec<f64>], y_bg: f64, variant: BgVariant) -> Result<f64> {
    let mut g = Graph::new();
    let ps = probs
        .iter()
        .map(|p| g.constant_vec(vec![p.len()], p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let l = loss_background_var(&mut g, &ps, y_bg, variant)?;
    Ok(g.scalar(l))
}

/// Image-level embeddings for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct RddBatch {
    pub e_i_s: Vec<Vec<f64>>,
    pub e_i_st: Vec<Vec<f64>>,
    pub t_i_s: Vec<f64>,
    pub t_i_t: Vec<f64>,
}

impl RddBatch {
    pub fn validate(&self) -> Result<()> {
        if self.e_i_s.is_empty() || self.e_i_s.len() != self.e_i_st.len() {
            return Err(Error::input(format!(
                "batch sizes {} and {} must be equal and positive",
                self.e_i_s.len(),
                self.e_i_st.len()
            )));
        }
        let all = self
            .e_i_s
            .iter()
            .chain(&self.e_i_st)
            .chain([&self.t_i_s, &self.t_i_t]);
        for v in all {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::input(format!("embedding norm {n} is not unit")));
            }
        }
        Ok(())
    }
}

/// Graph handles for an [`RddBatch`].
#[derive(Debug, Clone)]
pub struct RddVars {
    pub e_i_s: Vec<Var>,
    pub e_i_st: Vec<Var>,
    pub t_i_s: Var,
    pub t_i_t: Var,
}

impl RddVars {
    pub fn constants(g: &mut Graph, b: &RddBatch) -> Result<Self> {
        let mut vec = |v: &Vec<f64>| g.constant_vec(vec![v.len()], v.clone());
        Ok(Self {
            e_i_s: b.e_i_s.iter().map(&mut vec).collect::<Result<_>>()?,
            e_i_st: b.e_i_st.iter().map(&mut vec).collect::<Result<_>>()?,
            t_i_s: vec(&b.t_i_s)?,
            t_i_t: vec(&b.t_i_t)?,
        })
    }
}

/// `L_a = mean(1 - cos(e_st, t_t))`.
pub fn loss_align_var(g: &mut Graph, b: &RddVars) -> Result<Var> {
    let terms = b
        .e_i_st
        .iter()
        .map(|&e| {
            let c = g.cosine(e, b.t_i_t)?;
            let n = g.scale(c, -1.0);
            Ok(g.offset(n, 1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    batch_mean(g, &terms)
}

/// `L_s = mean ||e_s - e_st||_1`.
pub fn loss_semantic_var(g: &mut Graph, b: &RddVars) -> Result<Var> {
    let terms = b
        .e_i_s
        .iter()
        .zip(&b.e_i_st)
        .map(|(&s, &st)| g.l1(s, st))
        .collect::<Result<Vec<_>>>()?;
    batch_mean(g, &terms)
}

/// `L_r = mean ||(e_s - e_st) - (t_s - t_t)||_1`.
pub fn loss_relative_var(g: &mut Graph, b: &RddVars) -> Result<Var> {
    let dt = g.sub(b.t_i_s, b.t_i_t)?;
    let terms = b
        .e_i_s
        .iter()
        .zip(&b.e_i_st)
        .map(|(&s, &st)| {
            let de = g.sub(s, st)?;
            g.l1(de, dt)
        })
        .collect::<Result<Vec<_>>>()?;
    batch_mean(g, &terms)
}

/// Per-term values of the image-level loss; `None` for masked-out terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RddTerms {
    pub total: Var,
    pub align: Option<Var>,
    pub semantic: Option<Var>,
    pub relative: Option<Var>,
}

pub fn rdd_total_var(g: &mut Graph, b: &RddVars, weights: &RddWeights, mask: &RddMask) -> Result<RddTerms> {
    if mask.is_empty() {
        return Err(Error::config("image-level loss mask selects no term"));
    }
    let align = mask.align.then(|| loss_align_var(g, b)).transpose()?;
    let semantic = mask.semantic.then(|| loss_semantic_var(g, b)).transpose()?;
    let relative = mask.relative.then(|| loss_relative_var(g, b)).transpose()?;
    let mut parts = Vec::new();
    for (v, w) in [
        (align, weights.align),
        (semantic, weights.semantic),
        (relative, weights.relative),
    ] {
        if let Some(v) = v {
            parts.push(if w == 1.0 { v } else { g.scale(v, w) });
        }
    }
    let all = g.concat(&parts)?;
    let total = g.sum(all);
    Ok(RddTerms {
        total,
        align,
        semantic,
        relative,
    })
}

fn rdd_plain(b: &RddBatch, f: fn(&mut Graph, &RddVars) -> Result<Var>) -> Result<f64> {
    b.validate()?;
    let mut g = Graph::new();
    let v = RddVars::constants(&mut g, b)?;
    let l = f(&mut g, &v)?;
    Ok(g.scalar(l))
}

pub fn loss_align(b: &RddBatch) -> Result<f64> {
    rdd_plain(b, loss_align_var)
}

pub fn loss_semantic(b: &RddBatch) -> Result<f64> {
    rdd_plain(b, loss_semantic_var)
}

pub fn loss_relative(b: &RddBatch) -> Result<f64> {
    rdd_plain(b, loss_relative_var)
}

pub fn rdd_total(b: &RddBatch, weights: &RddWeights, mask: &RddMask) -> Result<f64> {
    b.validate()?;
    let mut g = Graph::new();
    let v = RddVars::constants(&mut g, b)?;
    let t = rdd_total_var(&mut g, &v, weights, mask)?;
    Ok(g.scalar(t.total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{grad_check, GradCheckConfig, Tensor};
    use crate::rng::DetRng;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    fn batch(items: Vec<(Vec<f64>, Vec<f64>)>, ts: Vec<f64>, tt: Vec<f64>) -> RddBatch {
        let (s, st) = items.into_iter().unzip();
        RddBatch {
            e_i_s: s,
            e_i_st: st,
            t_i_s: ts,
            t_i_t: tt,
        }
    }

    #[test]
    fn detect_prob_examples() {
        let e = vec![1.0, 0.0];
        let p = detect_prob(&e, &[vec![1.0, 0.0], vec![0.0, 1.0]], 1.0).unwrap();
        close(p[0], 1f64.exp() / (1f64.exp() + 1.0));
        let eq = detect_prob(&[1.0, 0.0], &vec![vec![0.0, 1.0]; 8], 1.0).unwrap();
        assert!(eq.iter().all(|&x| (x - 0.125).abs() < 1e-15));
        assert!(matches!(detect_prob(&e, &[], 1.0), Err(Error::Input(_))));
        let fg = positive_prob(&[1.0, 0.0, 0.0], &vec![vec![0.0, 0.0, 1.0]; 3], 1.0).unwrap();
        assert_eq!(fg.len(), 3);
        assert!(fg.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn background_prob_monotone_in_bg_similarity() {
        let table = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let mut last = 0.0;
        for k in 0..10 {
            let a = k as f64 / 10.0;
            let e = vec![0.3, 0.3, a];
            let p = negative_prob(&e, &table, 1.0).unwrap();
            assert!(p[2] > last);
            last = p[2];
        }
    }

    #[test]
    fn positive_loss_examples() {
        close(loss_positive(&[(vec![0.0, 1.0, 0.0], 1)]).unwrap(), 0.0);
        close(loss_positive(&[(vec![1.0 / 3.0; 3], 0)]).unwrap(), 3f64.ln());
        assert!(loss_positive(&[(vec![0.5, 0.5], 2)]).is_err());
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let p = k as f64 / 10.0;
            let l = loss_positive(&[(vec![p, (1.0 - p) / 2.0, (1.0 - p) / 2.0], 0)]).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn background_loss_examples() {
        close(loss_background(&[vec![1.0 / 3.0; 3]], 1.0 / 3.0, BgVariant::HingePositiveDiff).unwrap(), 0.0);
        close(
            loss_background(&[vec![0.5, 0.25, 0.25]], 1.0 / 3.0, BgVariant::HingePositiveDiff).unwrap(),
            1.0 / 6.0,
        );
        close(loss_background(&[vec![0.125; 8]], 0.125, BgVariant::UniformCe).unwrap(), 8f64.ln());
        assert_eq!(uniform_bg_label(7), 0.125);
        // detpro_binary: -log 0.5 - log(0.75) - log(0.75)
        close(
            loss_background(&[vec![0.25, 0.25, 0.5]], 0.0, BgVariant::DetproBinary).unwrap(),
            -(0.5f64.ln() + 2.0 * 0.75f64.ln()),
        );
        // detpro_uniform_fg: foreground (0.3, 0.1) renormalizes to (0.75, 0.25).
        close(
            loss_background(&[vec![0.3, 0.1, 0.6]], 0.0, BgVariant::DetproUniformFg).unwrap(),
            -(0.5 * 0.75f64.ln() + 0.5 * 0.25f64.ln()),
        );
        assert!("nope".parse::<BgVariant>().is_err());
        assert_eq!("detpro_binary".parse::<BgVariant>().unwrap(), BgVariant::DetproBinary);
    }

    #[test]
    fn rdd_examples() {
        let t = unit(vec![1.0, 2.0, 3.0]);
        let neg: Vec<f64> = t.iter().map(|x| -x).collect();
        let b = batch(vec![(t.clone(), t.clone())], t.clone(), t.clone());
        close(loss_align(&b).unwrap(), 0.0);
        let b = batch(vec![(t.clone(), neg)], t.clone(), t.clone());
        close(loss_align(&b).unwrap(), 2.0);
        let b = batch(vec![(vec![1.0, 0.0], vec![0.0, 1.0])], vec![1.0, 0.0], vec![1.0, 0.0]);
        close(loss_align(&b).unwrap(), 1.0);

        let b = batch(vec![(vec![0.6, 0.8], vec![0.8, 0.6])], vec![1.0, 0.0], vec![1.0, 0.0]);
        close(loss_semantic(&b).unwrap(), 0.4);
        let b = batch(
            vec![(vec![0.6, 0.8], vec![0.6, 0.8]), (vec![0.6, 0.8], vec![0.8, 0.6])],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
        );
        close(loss_semantic(&b).unwrap(), 0.2);
    }

    #[test]
    fn relative_examples() {
        let mut g = Graph::new();
        let v = RddVars {
            e_i_s: vec![g.constant_vec(vec![2], vec![0.6, 0.8]).unwrap()],
            e_i_st: vec![g.constant_vec(vec![2], vec![0.5, 0.9]).unwrap()],
            t_i_s: g.constant_vec(vec![2], vec![1.0, 0.0]).unwrap(),
            t_i_t: g.constant_vec(vec![2], vec![1.0, 0.0]).unwrap(),
        };
        let l = loss_relative_var(&mut g, &v).unwrap();
        assert!((g.scalar(l) - 0.2).abs() < 1e-12);
        let ts = unit(vec![1.0, 1.0]);
        let tt = vec![1.0, 0.0];
        let es = unit(vec![0.2, 1.0]);
        let est: Vec<f64> = es.iter().zip(&ts).zip(&tt).map(|((e, s), t)| e - (s - t)).collect();
        let mut g = Graph::new();
        let v = RddVars {
            e_i_s: vec![g.constant_vec(vec![2], es).unwrap()],
            e_i_st: vec![g.constant_vec(vec![2], est).unwrap()],
            t_i_s: g.constant_vec(vec![2], ts).unwrap(),
            t_i_t: g.constant_vec(vec![2], tt).unwrap(),
        };
        let l = loss_relative_var(&mut g, &v).unwrap();
        assert!(g.scalar(l).abs() < 1e-12);
    }

    #[test]
    fn rdd_total_mask_and_additivity() {
        let mut rng = DetRng::new(4);
        let mut u = |n| unit(rng.gaussian_vec(n, 1.0));
        let b = RddBatch {
            e_i_s: vec![u(8), u(8)],
            e_i_st: vec![u(8), u(8)],
            t_i_s: u(8),
            t_i_t: u(8),
        };
        let w = RddWeights::default();
        let sum = loss_align(&b).unwrap() + loss_semantic(&b).unwrap() + loss_relative(&b).unwrap();
        close(rdd_total(&b, &w, &RddMask::ALL).unwrap(), sum);
        let none = RddMask {
            align: false,
            semantic: false,
            relative: false,
        };
        assert!(matches!(rdd_total(&b, &w, &none), Err(Error::Config(_))));
        let aligned = RddBatch {
            e_i_st: vec![b.t_i_t.clone(); 2],
            ..b.clone()
        };
        let a_only = RddMask {
            align: true,
            semantic: false,
            relative: false,
        };
        assert!(rdd_total(&aligned, &w, &a_only).unwrap().abs() < 1e-12);
        assert_eq!(RddMask::ALL.label(), "La+Ls+Lr");
    }

    #[test]
    fn gradchecks() {
        for seed in 0..10 {
            let mut rng = DetRng::new(seed);
            let xs: Vec<Tensor> = (0..4).map(|_| Tensor::vector(rng.gaussian_vec(8, 1.0))).collect();
            let r = grad_check(
                |g, v| {
                    let n: Vec<Var> = v.iter().map(|&x| g.normalize(x)).collect::<Result<_>>()?;
                    let b = RddVars {
                        e_i_s: vec![n[0]],
                        e_i_st: vec![n[1]],
                        t_i_s: n[2],
                        t_i_t: n[3],
                    };
                    Ok(rdd_total_var(g, &b, &RddWeights::default(), &RddMask::ALL)?.total)
                },
                &xs,
                GradCheckConfig::default(),
            )
            .unwrap();
            assert!(r.passed, "seed {seed}: {r:?}");

            let logits = Tensor::vector(rng.gaussian_vec(4, 1.0));
            for variant in [
                BgVariant::UniformCe,
                BgVariant::HingePositiveDiff,
                BgVariant::DetproBinary,
                BgVariant::DetproUniformFg,
            ] {
                let r = grad_check(
                    |g, v| {
                        let p = g.softmax(v[0])?;
                        loss_background_var(g, &[p], 0.25, variant)
                    },
                    &[logits.clone()],
                    GradCheckConfig::default(),
                )
                .unwrap();
                assert!(r.passed, "{variant}: {r:?}");
            }
            let r = grad_check(
                |g, v| {
                    let p = g.softmax(v[0])?;
                    loss_positive_var(g, &[(p, 1)])
                },
                &[logits.clone()],
                GradCheckConfig::default(),
            )
            .unwrap();
            assert!(r.passed);
        }
    }
}
