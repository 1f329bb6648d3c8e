//! Reverse-mode differentiation over a closed set of tensor operations.
//!
//! A [`Graph`] records nodes in evaluation order. Leaves are either tracked
//! parameters or constants; a node is tracked when any of its inputs is.
//! [`Graph::backward`] walks the tape once in reverse and only visits tracked
//! nodes, so large constant feature maps cost nothing in the backward pass.

use std::sync::Arc;

use super::spatial::SpatialMap;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatVec(Var, Var),
    Softmax(Var),
    Log(Var),
    Relu(Var),
    Cosine(Var, Var),
    L1(Var, Var),
    SmoothL1(Var, Var),
    Sum(Var),
    Mean(Var),
    Normalize(Var),
    Concat(Vec<Var>),
    MeanRows(Var),
    Slice(Var, usize),
    Pick(Var, usize),
    Spatial(Var, Arc<SpatialMap>, usize),
    /// `e_sigma` and `e_mu` broadcast from patches onto pixels.
    PatchAffine {
        x: Var,
        sigma: Var,
        mu: Var,
        patch_of: Arc<Vec<u32>>,
        channels: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "{what}: length mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, tracked: bool) -> Var {
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite value from {op:?}");
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, false)
    }

    pub fn constant_vec(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        let shape = t.shape().to_vec();
        Ok(self.push(shape, t.into_values(), Op::Leaf, false))
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let (shape, value) = (self.shape(v).to_vec(), self.value(v).to_vec());
        self.push(shape, value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_len(va, vb, "add")?;
        let out = va.iter().zip(vb).map(|(x, y)| x + y).collect();
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_len(va, vb, "sub")?;
        let out = va.iter().zip(vb).map(|(x, y)| x - y).collect();
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), t))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_len(va, vb, "mul")?;
        let out = va.iter().zip(vb).map(|(x, y)| x * y).collect();
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        let t = self.tracked(a);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, s), t)
    }

    /// `a + c` for a scalar constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|x| x + c).collect();
        let t = self.tracked(a);
        self.push(self.shape(a).to_vec(), out, Op::Offset(a), t)
    }

    /// `m x` with `m` of shape `[rows, cols]` and `x` of length `cols`.
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let ms = self.shape(m);
        if ms.len() != 2 || ms[1] != self.value(x).len() {
            return Err(Error::shape(format!(
                "matvec: matrix {:?} vs vector of length {}",
                ms,
                self.value(x).len()
            )));
        }
        let (rows, cols) = (ms[0], ms[1]);
        let (vm, vx) = (self.value(m), self.value(x));
        let out = (0..rows)
            .map(|r| dot(&vm[r * cols..(r + 1) * cols], vx))
            .collect();
        let t = self.tracked(m) || self.tracked(x);
        Ok(self.push(vec![rows], out, Op::MatVec(m, x), t))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = super::ops::softmax(self.value(a))?;
        let t = self.tracked(a);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Softmax(a), t))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if let Some(bad) = va.iter().find(|&&x| x <= 0.0) {
            return Err(Error::domain(format!("log of non-positive value {bad}")));
        }
        let out = va.iter().map(|x| x.ln()).collect();
        let t = self.tracked(a);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Log(a), t))
    }

    /// Clamp at zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.max(0.0)).collect();
        let t = self.tracked(a);
        self.push(self.shape(a).to_vec(), out, Op::Relu(a), t)
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let c = super::ops::cosine_similarity(self.value(a), self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(vec![1], vec![c], Op::Cosine(a, b), t))
    }

    /// `sum |a_i - b_i|`.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = super::ops::l1_distance(self.value(a), self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(vec![1], vec![d], Op::L1(a, b), t))
    }

    /// Summed smooth-L1 (Huber, beta = 1) between `a` and `b`.
    pub fn smooth_l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_len(va, vb, "smooth_l1")?;
        let s = va
            .iter()
            .zip(vb)
            .map(|(x, y)| {
                let d = (x - y).abs();
                if d < 1.0 {
                    0.5 * d * d
                } else {
                    d - 0.5
                }
            })
            .sum();
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(vec![1], vec![s], Op::SmoothL1(a, b), t))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let t = self.tracked(a);
        self.push(vec![1], vec![s], Op::Sum(a), t)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let m = va.iter().sum::<f64>() / va.len() as f64;
        let t = self.tracked(a);
        self.push(vec![1], vec![m], Op::Mean(a), t)
    }

    /// `a / ||a||_2`.
    pub fn normalize(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let n = norm(va);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::domain("cannot normalize a zero-norm vector"));
        }
        let out = va.iter().map(|x| x / n).collect();
        let t = self.tracked(a);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Normalize(a), t))
    }

    /// Concatenation along the leading axis; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p)[1..] != tail[..] {
                return Err(Error::shape(format!(
                    "concat: trailing dims {:?} vs {:?}",
                    &self.shape(p)[1..],
                    tail
                )));
            }
            lead += self.shape(p)[0];
            out.extend_from_slice(self.value(p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let t = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(shape, out, Op::Concat(parts.to_vec()), t))
    }

    /// Mean over the rows of a `[n, d]` matrix.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape(format!("mean_rows expects a matrix, got {s:?}")));
        }
        let (n, d) = (s[0], s[1]);
        let va = self.value(a);
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, x) in out.iter_mut().zip(&va[r * d..(r + 1) * d]) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let t = self.tracked(a);
        Ok(self.push(vec![d], out, Op::MeanRows(a), t))
    }

    /// Contiguous range `[start, start + len)` of the flattened values.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if len == 0 || start + len > va.len() {
            return Err(Error::shape(format!(
                "slice [{start}, {}) out of range for length {}",
                start + len,
                va.len()
            )));
        }
        let out = va[start..start + len].to_vec();
        let t = self.tracked(a);
        Ok(self.push(vec![len], out, Op::Slice(a, start), t))
    }

    /// Element `i` as a scalar node.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        let va = self.value(a);
        let x = *va
            .get(i)
            .ok_or_else(|| Error::shape(format!("pick {i} of length {}", va.len())))?;
        let t = self.tracked(a);
        Ok(self.push(vec![1], vec![x], Op::Pick(a, i), t))
    }

    /// Applies a spatial map to each channel of a `[C, H, W]` node.
    pub fn spatial(&mut self, a: Var, map: &Arc<SpatialMap>) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 3 || (s[1], s[2]) != map.in_dims() {
            return Err(Error::shape(format!(
                "spatial map for {:?} applied to {:?}",
                map.in_dims(),
                s
            )));
        }
        let c = s[0];
        let out = map.apply(self.value(a), c)?;
        let (oh, ow) = map.out_dims();
        let t = self.tracked(a);
        Ok(self.push(vec![c, oh, ow], out, Op::Spatial(a, map.clone(), c), t))
    }

    /// `sigma[c, patch(p)] * x[c, p] + mu[c, patch(p)]` for a `[C, H, W]` map,
    /// with `patch_of[p]` giving the patch index of pixel `p`.
    pub fn patch_affine(
        &mut self,
        x: Var,
        sigma: Var,
        mu: Var,
        patch_of: &Arc<Vec<u32>>,
    ) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] * s[2] != patch_of.len() {
            return Err(Error::shape(format!(
                "patch_affine: map {s:?} vs {} pixel assignments",
                patch_of.len()
            )));
        }
        let c = s[0];
        let hw = patch_of.len();
        let patches = self.value(sigma).len() / c;
        if self.value(sigma).len() != c * patches
            || self.value(mu).len() != self.value(sigma).len()
            || patch_of.iter().any(|&p| p as usize >= patches)
        {
            return Err(Error::shape(format!(
                "patch_affine: {c} channels vs sigma {:?} / mu {:?}",
                self.shape(sigma),
                self.shape(mu)
            )));
        }
        let (vx, vs, vm) = (self.value(x), self.value(sigma), self.value(mu));
        let mut out = Vec::with_capacity(c * hw);
        for ch in 0..c {
            let base = ch * patches;
            for (p, &j) in patch_of.iter().enumerate() {
                let k = base + j as usize;
                out.push(vs[k] * vx[ch * hw + p] + vm[k]);
            }
        }
        let t = self.tracked(x) || self.tracked(sigma) || self.tracked(mu);
        let op = Op::PatchAffine {
            x,
            sigma,
            mu,
            patch_of: patch_of.clone(),
            channels: c,
        };
        Ok(self.push(s, out, op, t))
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.tracked(v) {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(vb) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(va) {
                        *x += gi * ai;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
                }
            }
            Op::Offset(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::MatVec(m, x) => {
                let cols = self.shape(*m)[1];
                let (vm, vx) = (self.value(*m), self.value(*x));
                if let Some(gm) = self.acc(grads, *m) {
                    for (r, gr) in g.iter().enumerate() {
                        for (dst, xc) in gm[r * cols..(r + 1) * cols].iter_mut().zip(vx) {
                            *dst += gr * xc;
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, gr) in g.iter().enumerate() {
                        for (dst, mrc) in gx.iter_mut().zip(&vm[r * cols..(r + 1) * cols]) {
                            *dst += gr * mrc;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let gy = dot(g, y);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((dst, yi), gi) in ga.iter_mut().zip(y).zip(g) {
                        *dst += yi * (gi - gy);
                    }
                }
            }
            Op::Log(a) => {
                let va = self.value(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((dst, x), gi) in ga.iter_mut().zip(va).zip(g) {
                        *dst += gi / x;
                    }
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((dst, x), gi) in ga.iter_mut().zip(va).zip(g) {
                        if *x > 0.0 {
                            *dst += gi;
                        }
                    }
                }
            }
            Op::Cosine(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (na, nb) = (norm(va), norm(vb));
                let c = node.value[0];
                let g0 = g[0];
                if let Some(ga) = self.acc(grads, *a) {
                    for ((dst, ai), bi) in ga.iter_mut().zip(va).zip(vb) {
                        *dst += g0 * (bi / (na * nb) - c * ai / (na * na));
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((dst, ai), bi) in gb.iter_mut().zip(va).zip(vb) {
                        *dst += g0 * (ai / (na * nb) - c * bi / (nb * nb));
                    }
                }
            }
            Op::L1(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let sign: Vec<f64> = va
                    .iter()
                    .zip(vb)
                    .map(|(x, y)| {
                        let d = x - y;
                        if d > 0.0 {
                            1.0
                        } else if d < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let g0 = g[0];
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(&sign).for_each(|(x, s)| *x += g0 * s);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(&sign).for_each(|(x, s)| *x -= g0 * s);
                }
            }
            Op::SmoothL1(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let d: Vec<f64> = va
                    .iter()
                    .zip(vb)
                    .map(|(x, y)| (x - y).clamp(-1.0, 1.0))
                    .collect();
                let g0 = g[0];
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(&d).for_each(|(x, s)| *x += g0 * s);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gb.iter_mut().zip(&d).for_each(|(x, s)| *x -= g0 * s);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0] / n);
                }
            }
            Op::Normalize(a) => {
                let y = &node.value;
                let n = norm(self.value(*a));
                let yg = dot(y, g);
                if let Some(ga) = self.acc(grads, *a) {
                    for ((dst, yi), gi) in ga.iter_mut().zip(y).zip(g) {
                        *dst += (gi - yi * yg) / n;
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(gp) = self.acc(grads, *p) {
                        gp.iter_mut()
                            .zip(&g[off..off + len])
                            .for_each(|(x, y)| *x += y);
                    }
                    off += len;
                }
            }
            Op::MeanRows(a) => {
                let s = self.shape(*a);
                let (n, d) = (s[0], s[1]);
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..n {
                        for (dst, gi) in ga[r * d..(r + 1) * d].iter_mut().zip(g) {
                            *dst += gi / n as f64;
                        }
                    }
                }
            }
            Op::Slice(a, start) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga[*start..*start + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(x, y)| *x += y);
                }
            }
            Op::Pick(a, i) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga[*i] += g[0];
                }
            }
            Op::Spatial(a, map, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    map.apply_transpose(g, *c, ga);
                }
            }
            Op::PatchAffine {
                x,
                sigma,
                mu,
                patch_of,
                channels,
            } => {
                let hw = patch_of.len();
                let patches = self.value(*sigma).len() / channels;
                let (vx, vs) = (self.value(*x), self.value(*sigma));
                if let Some(gx) = self.acc(grads, *x) {
                    for ch in 0..*channels {
                        for (p, &j) in patch_of.iter().enumerate() {
                            gx[ch * hw + p] += g[ch * hw + p] * vs[ch * patches + j as usize];
                        }
                    }
                }
                if let Some(gs) = self.acc(grads, *sigma) {
                    for ch in 0..*channels {
                        for (p, &j) in patch_of.iter().enumerate() {
                            gs[ch * patches + j as usize] += g[ch * hw + p] * vx[ch * hw + p];
                        }
                    }
                }
                if let Some(gm) = self.acc(grads, *mu) {
                    for ch in 0..*channels {
                        for (p, &j) in patch_of.iter().enumerate() {
                            gm[ch * patches + j as usize] += g[ch * hw + p];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(&Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(&Tensor::vector(vec![3.0, 4.0]));
        let p = g.mul(a, b).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[3.0, 4.0]);
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::new();
        let a = g.param(&Tensor::vector(vec![3.0]));
        let sq = g.mul(a, a).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let a = g.param(&Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn matvec_values_and_shape_errors() {
        let mut g = Graph::new();
        let m = g.constant(&Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let x = g.constant(&Tensor::vector(vec![1., 0., -1.]));
        let y = g.matvec(m, x).unwrap();
        assert_eq!(g.value(y), &[-2.0, -2.0]);
        let bad = g.constant(&Tensor::vector(vec![1., 0.]));
        assert!(g.matvec(m, bad).is_err());
    }

    #[test]
    fn concat_stacks_rows() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::new(vec![1, 2], vec![1., 2.]).unwrap());
        let b = g.constant(&Tensor::new(vec![2, 2], vec![3., 4., 5., 6.]).unwrap());
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[3, 2]);
        let m = g.mean_rows(c).unwrap();
        assert_eq!(g.value(m), &[3.0, 4.0]);
    }

    #[test]
    fn normalize_rejects_zero() {
        let mut g = Graph::new();
        let z = g.constant(&Tensor::zeros(vec![3]));
        assert!(matches!(g.normalize(z), Err(Error::Domain(_))));
    }
}
