//! Tape-based reverse-mode autodiff.
//!
//! Every op appends a node holding its output and whatever the backward
//! pass needs; [`Graph::backward`] walks the tape in reverse.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, Pad};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Input,
    Leaf,
    Param(usize),
    Conv { x: Var, k: Var, geom: ConvGeom },
    AddBias { x: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, s: f32 },
    Relu { x: Var },
    Gelu { x: Var },
    Norm { x: Var, gamma: Var, beta: Var, xhat: Vec<f32>, invstd: Vec<f32>, kind: NormKind },
    Concat { a: Var, b: Var },
    Upsample { x: Var },
    Linear { x: Var, w: Var },
    Attention { qkv: Var, heads: usize, probs: Vec<f32> },
    Reshape { x: Var },
    MaskedMse { pred: Var, target: Vec<f32>, mask: Vec<f32>, count: f64 },
    WeightedSum { x: Var, c: Vec<f32> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NormKind {
    BatchTrain,
    BatchEval,
    Layer,
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    exact: Option<f64>,
}

/// Running mean/variance buffers of a batch-norm layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunningStats {
    pub mean: usize,
    pub var: usize,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    updates: Vec<(usize, Tensor)>,
    bound: HashMap<usize, Var>,
}

/// Gradient of the loss w.r.t. every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads[v.0].as_deref()
    }
}

fn accum(grads: &mut [Option<Vec<f32>>], v: Var, g: Vec<f32>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            exact: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar result in f64 when the op tracked one, else the stored f32.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        n.exact.unwrap_or(n.value.data()[0] as f64)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Buffer values computed during the forward pass (batch-norm running
    /// statistics), to be written back into the store after a step.
    pub fn take_updates(&mut self) -> Vec<(usize, Tensor)> {
        std::mem::take(&mut self.updates)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// A constant that still receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Make later `param(store, id)` calls return `v` instead of reading
    /// the store (used to differentiate layers w.r.t. their parameters).
    pub fn bind(&mut self, id: usize, v: Var) {
        self.bound.insert(id, v);
    }

    pub fn param(&mut self, store: &ParamStore, id: usize) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let e = store.entry(id);
        self.push(e.value.clone(), Op::Param(id), e.trainable)
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: Pad) -> Result<Var> {
        let (xs, ks) = (self.shape(x), self.shape(k));
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::shape("conv2d", format!("x {xs:?}, kernel {ks:?}")));
        }
        let geom = ConvGeom::new(
            [xs[0], xs[1], xs[2], xs[3]],
            [ks[0], ks[1], ks[2], ks[3]],
            stride,
            pad,
        )
        .map_err(|e| Error::shape("conv2d", e))?;
        let out = geom.forward(self.value(x).data(), self.value(k).data());
        let t = Tensor::new(&[geom.n, geom.ho, geom.wo, geom.cout], out)?;
        let ng = self.ng(&[x, k]);
        Ok(self.push(t, Op::Conv { x, k, geom }, ng))
    }

    /// `x + b` with `b` broadcast over the leading axes of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return Err(Error::shape("add_bias", format!("x {xs:?}, bias {bs:?}")));
        }
        let bv = self.value(b).data();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(bv.len()) {
            chunk.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        let ng = self.ng(&[x, b]);
        Ok(self.push(out, Op::AddBias { x, b }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = self.value(a).clone();
        out.data_mut()
            .iter_mut()
            .zip(self.value(b).data())
            .for_each(|(o, v)| *o += v);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, ng))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        let ng = self.ng(&[x]);
        self.push(out, Op::Scale { x, s }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let ng = self.ng(&[x]);
        self.push(out, Op::Relu { x }, ng)
    }

    /// Smallest `|x|` over the inputs of every ReLU in the graph.
    pub fn relu_margin(&self) -> f32 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu { x } => Some(self.value(x).data().iter().fold(f32::INFINITY, |m, v| m.min(v.abs()))),
                _ => None,
            })
            .fold(f32::INFINITY, f32::min)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let ng = self.ng(&[x]);
        self.push(out, Op::Gelu { x }, ng)
    }

    /// Per-channel normalization over all leading axes. In training mode the
    /// batch statistics are used and new running statistics are queued.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: RunningStats,
        store: &ParamStore,
        train: bool,
    ) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape("batchnorm", format!("{c} channels vs affine params")));
        }
        let xv = self.value(x).data();
        let rows = xv.len() / c;
        let (mean, var) = if train {
            let mut sum = vec![0.0f64; c];
            let mut sq = vec![0.0f64; c];
            for row in xv.chunks(c) {
                for k in 0..c {
                    sum[k] += row[k] as f64;
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / rows as f64).collect();
            for row in xv.chunks(c) {
                for k in 0..c {
                    let d = row[k] as f64 - mean[k];
                    sq[k] += d * d;
                }
            }
            let var: Vec<f64> = sq.iter().map(|s| s / rows as f64).collect();
            let rm = store.value(running.mean).data();
            let rv = store.value(running.var).data();
            let unbias = if rows > 1 { rows as f64 / (rows - 1) as f64 } else { 1.0 };
            let new_mean = (0..c)
                .map(|k| ((1.0 - BN_MOMENTUM) * rm[k] as f64 + BN_MOMENTUM * mean[k]) as f32)
                .collect();
            let new_var = (0..c)
                .map(|k| ((1.0 - BN_MOMENTUM) * rv[k] as f64 + BN_MOMENTUM * var[k] * unbias) as f32)
                .collect();
            self.updates.push((running.mean, Tensor::new(&[c], new_mean)?));
            self.updates.push((running.var, Tensor::new(&[c], new_var)?));
            (mean, var)
        } else {
            let rm = store.value(running.mean).data().iter().map(|&v| v as f64).collect();
            let rv = store.value(running.var).data().iter().map(|&v| v as f64).collect();
            (rm, rv)
        };
        let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let kind = if train { NormKind::BatchTrain } else { NormKind::BatchEval };
        self.normalize(x, gamma, beta, c, kind, |_, k| (mean[k], invstd[k]))
    }

    /// Normalization over the last axis of each row.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::shape("layernorm", format!("{d} features vs affine params")));
        }
        let stats: Vec<(f64, f64)> = self
            .value(x)
            .data()
            .chunks(d)
            .map(|row| {
                let m = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
                let v = row.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / d as f64;
                (m, 1.0 / (v + NORM_EPS).sqrt())
            })
            .collect();
        self.normalize(x, gamma, beta, d, NormKind::Layer, |r, _| stats[r])
    }

    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        c: usize,
        kind: NormKind,
        stat: impl Fn(usize, usize) -> (f64, f64),
    ) -> Result<Var> {
        let xv = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0f32; xv.len()];
        let mut out = vec![0.0f32; xv.len()];
        for (r, row) in xv.chunks(c).enumerate() {
            for k in 0..c {
                let (m, is) = stat(r, k);
                let h = ((row[k] as f64 - m) * is) as f32;
                xhat[r * c + k] = h;
                out[r * c + k] = g[k] * h + b[k];
            }
        }
        let invstd = match kind {
            NormKind::Layer => (0..xv.len() / c).map(|r| stat(r, 0).1 as f32).collect(),
            _ => (0..c).map(|k| stat(0, k).1 as f32).collect(),
        };
        let t = Tensor::new(self.shape(x), out)?;
        let ng = self.ng(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                invstd,
                kind,
            },
            ng,
        ))
    }

    /// Concatenate along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape("concat", format!("{sa:?} vs {sb:?}")));
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for (ra, rb) in av.chunks(ca).zip(bv.chunks(cb)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = ca + cb;
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Concat { a, b }, ng))
    }

    /// Nearest-neighbour 2x upsampling of an NHWC tensor.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("upsample2x", format!("{s:?}")));
        }
        let out = kernels::upsample2x(self.value(x).data(), s[0], s[1], s[2], s[3]);
        let t = Tensor::new(&[s[0], 2 * s[1], 2 * s[2], s[3]], out)?;
        let ng = self.ng(&[x]);
        Ok(self.push(t, Op::Upsample { x }, ng))
    }

    /// `x · w` over the last axis of `x`; `w` is `[k, m]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(Error::shape("linear", format!("x {xs:?}, w {ws:?}")));
        }
        let (k, m) = (ws[0], ws[1]);
        let rows = self.value(x).len() / k;
        let mut out = vec![0.0; rows * m];
        kernels::gemm(
            self.value(x).data(),
            kernels::View::rowmajor(rows, k),
            self.value(w).data(),
            kernels::View::rowmajor(k, m),
            0.0,
            &mut out,
            kernels::View::rowmajor(rows, m),
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = m;
        let ng = self.ng(&[x, w]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Linear { x, w }, ng))
    }

    /// Multi-head scaled dot-product attention on packed `[n, t, 3d]` input.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Result<Var> {
        let s = self.shape(qkv).to_vec();
        if s.len() != 3 || s[2] % 3 != 0 || heads == 0 || (s[2] / 3) % heads != 0 {
            return Err(Error::shape(
                "attention",
                format!("{s:?} with {heads} heads"),
            ));
        }
        let (n, t, d) = (s[0], s[1], s[2] / 3);
        let (out, probs) = kernels::attention(self.value(qkv).data(), n, t, d, heads);
        let ng = self.ng(&[qkv]);
        Ok(self.push(Tensor::new(&[n, t, d], out)?, Op::Attention { qkv, heads, probs }, ng))
    }

    /// Attention weights saved by an attention node, `[n, heads, t, t]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f32]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(&[x]);
        Ok(self.push(t, Op::Reshape { x }, ng))
    }

    /// Mean squared error over cells where `mask > 0`.
    pub fn masked_mse(&mut self, pred: Var, target: &[f32], mask: &[f32]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || p.len() != mask.len() {
            return Err(Error::shape(
                "masked_mse",
                format!("pred {}, target {}, mask {}", p.len(), target.len(), mask.len()),
            ));
        }
        let mut sse = 0.0f64;
        let mut count = 0.0f64;
        for ((&pv, &t), &m) in p.iter().zip(target).zip(mask) {
            if m > 0.0 {
                let d = pv as f64 - t as f64;
                sse += d * d;
                count += 1.0;
            }
        }
        if count == 0.0 {
            return Err(Error::EmptyMask);
        }
        let loss = sse / count;
        let mask = mask.iter().map(|&m| if m > 0.0 { 1.0 } else { 0.0 }).collect();
        let ng = self.ng(&[pred]);
        let v = self.push(
            Tensor::scalar(loss as f32),
            Op::MaskedMse {
                pred,
                target: target.to_vec(),
                mask,
                count,
            },
            ng,
        );
        self.nodes[v.0].exact = Some(loss);
        Ok(v)
    }

    /// `Σ x·c`, accumulated in f64.
    pub fn weighted_sum(&mut self, x: Var, c: &[f32]) -> Result<Var> {
        let xv = self.value(x).data();
        if xv.len() != c.len() {
            return Err(Error::shape("weighted_sum", format!("{} vs {}", xv.len(), c.len())));
        }
        let s: f64 = xv.iter().zip(c).map(|(&a, &b)| a as f64 * b as f64).sum();
        let ng = self.ng(&[x]);
        let v = self.push(Tensor::scalar(s as f32), Op::WeightedSum { x, c: c.to_vec() }, ng);
        self.nodes[v.0].exact = Some(s);
        Ok(v)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input | Op::Leaf | Op::Param(_) => {}
            Op::Conv { x, k, geom } => {
                let (dx, dk) = geom.backward(
                    self.value(*x).data(),
                    self.value(*k).data(),
                    g,
                    self.wants(*x),
                    self.wants(*k),
                );
                if let Some(dx) = dx {
                    accum(grads, *x, dx);
                }
                if let Some(dk) = dk {
                    accum(grads, *k, dk);
                }
            }
            Op::AddBias { x, b } => {
                if self.wants(*b) {
                    let n = self.value(*b).len();
                    let mut db = vec![0.0f32; n];
                    for chunk in g.chunks(n) {
                        db.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                    }
                    accum(grads, *b, db);
                }
                if self.wants(*x) {
                    accum(grads, *x, g.to_vec());
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    accum(grads, *a, g.to_vec());
                }
                if self.wants(*b) {
                    accum(grads, *b, g.to_vec());
                }
            }
            Op::Scale { x, s } => accum(grads, *x, g.iter().map(|v| v * s).collect()),
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                accum(
                    grads,
                    *x,
                    g.iter().zip(xv).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect(),
                );
            }
            Op::Gelu { x } => {
                let xv = self.value(*x).data();
                accum(grads, *x, g.iter().zip(xv).map(|(&d, &v)| d * gelu_grad(v)).collect());
            }
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                invstd,
                kind,
            } => self.norm_backward(*x, *gamma, *beta, xhat, invstd, *kind, g, grads),
            Op::Concat { a, b } => {
                let (ca, cb) = (self.value(*a).last_dim(), self.value(*b).last_dim());
                let mut da = Vec::with_capacity(self.value(*a).len());
                let mut db = Vec::with_capacity(self.value(*b).len());
                for row in g.chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                if self.wants(*a) {
                    accum(grads, *a, da);
                }
                if self.wants(*b) {
                    accum(grads, *b, db);
                }
            }
            Op::Upsample { x } => {
                let s = self.shape(*x);
                accum(grads, *x, kernels::upsample2x_backward(g, s[0], s[1], s[2], s[3]));
            }
            Op::Linear { x, w } => {
                let ws = self.shape(*w);
                let (k, m) = (ws[0], ws[1]);
                let rows = self.value(*x).len() / k;
                let gv = kernels::View::rowmajor(rows, m);
                if self.wants(*x) {
                    let mut dx = vec![0.0; rows * k];
                    kernels::gemm(
                        g,
                        gv,
                        self.value(*w).data(),
                        kernels::View::rowmajor(k, m).t(),
                        0.0,
                        &mut dx,
                        kernels::View::rowmajor(rows, k),
                    );
                    accum(grads, *x, dx);
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; k * m];
                    kernels::gemm(
                        self.value(*x).data(),
                        kernels::View::rowmajor(rows, k).t(),
                        g,
                        gv,
                        0.0,
                        &mut dw,
                        kernels::View::rowmajor(k, m),
                    );
                    accum(grads, *w, dw);
                }
            }
            Op::Attention { qkv, heads, probs } => {
                let s = self.shape(*qkv);
                let d = kernels::attention_backward(
                    self.value(*qkv).data(),
                    probs,
                    g,
                    s[0],
                    s[1],
                    s[2] / 3,
                    *heads,
                );
                accum(grads, *qkv, d);
            }
            Op::Reshape { x } => accum(grads, *x, g.to_vec()),
            Op::MaskedMse {
                pred,
                target,
                mask,
                count,
            } => {
                let p = self.value(*pred).data();
                let up = g[0] as f64;
                let d = p
                    .iter()
                    .zip(target)
                    .zip(mask)
                    .map(|((&pv, &t), &m)| (m as f64 * 2.0 * (pv as f64 - t as f64) / count * up) as f32)
                    .collect();
                accum(grads, *pred, d);
            }
            Op::WeightedSum { x, c } => {
                let up = g[0];
                accum(grads, *x, c.iter().map(|v| v * up).collect());
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn norm_backward(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: &[f32],
        invstd: &[f32],
        kind: NormKind,
        g: &[f32],
        grads: &mut [Option<Vec<f32>>],
    ) {
        let gm = self.value(gamma).data();
        let c = gm.len();
        let rows = g.len() / c;
        if self.wants(gamma) || self.wants(beta) {
            let mut dg = vec![0.0f64; c];
            let mut db = vec![0.0f64; c];
            for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                for k in 0..c {
                    dg[k] += gr[k] as f64 * hr[k] as f64;
                    db[k] += gr[k] as f64;
                }
            }
            if self.wants(gamma) {
                accum(grads, gamma, dg.iter().map(|&v| v as f32).collect());
            }
            if self.wants(beta) {
                accum(grads, beta, db.iter().map(|&v| v as f32).collect());
            }
        }
        if !self.wants(x) {
            return;
        }
        let mut dx = vec![0.0f32; g.len()];
        match kind {
            NormKind::BatchEval => {
                for (r, gr) in g.chunks(c).enumerate() {
                    for k in 0..c {
                        dx[r * c + k] = gr[k] * gm[k] * invstd[k];
                    }
                }
            }
            NormKind::BatchTrain => {
                let mut s1 = vec![0.0f64; c];
                let mut s2 = vec![0.0f64; c];
                for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                    for k in 0..c {
                        let d = gr[k] as f64 * gm[k] as f64;
                        s1[k] += d;
                        s2[k] += d * hr[k] as f64;
                    }
                }
                let m = rows as f64;
                for (r, gr) in g.chunks(c).enumerate() {
                    for k in 0..c {
                        let d = gr[k] as f64 * gm[k] as f64;
                        let h = xhat[r * c + k] as f64;
                        dx[r * c + k] = (invstd[k] as f64 / m * (m * d - s1[k] - h * s2[k])) as f32;
                    }
                }
            }
            NormKind::Layer => {
                let m = c as f64;
                for (r, gr) in g.chunks(c).enumerate() {
                    let hr = &xhat[r * c..(r + 1) * c];
                    let (mut s1, mut s2) = (0.0f64, 0.0f64);
                    for k in 0..c {
                        let d = gr[k] as f64 * gm[k] as f64;
                        s1 += d;
                        s2 += d * hr[k] as f64;
                    }
                    for k in 0..c {
                        let d = gr[k] as f64 * gm[k] as f64;
                        dx[r * c + k] = (invstd[r] as f64 / m * (m * d - s1 - hr[k] as f64 * s2)) as f32;
                    }
                }
            }
        }
        accum(grads, x, dx);
    }

    /// Gradients of every parameter node, summed per parameter id.
    pub fn param_grads(&self, grads: &Gradients, n_params: usize) -> Vec<Option<Vec<f32>>> {
        let mut out: Vec<Option<Vec<f32>>> = vec![None; n_params];
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                match &mut out[*id] {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}

const SQRT_2_OVER_PI: f32 = 0.797_884_6;
const GELU_C: f32 = 0.044_715;

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let t = (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}
