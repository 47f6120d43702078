//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] owns every intermediate value produced during a forward pass.
//! Operations append nodes in execution order, so the node list is always
//! topologically sorted and [`Tape::backward`] simply walks it in reverse.
//! Parameters enter the tape as copies through [`Tape::leaf`]; after the
//! backward pass their gradients are read back with [`Tape::grad`] or
//! pushed into the owning tensor with [`Tape::accumulate_into`].

mod gradcheck;

use std::sync::Arc;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport, FD_STEP};

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Tanh,
    Relu,
    LeakyRelu(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
    },
    Add(Var, Var),
    AddRow {
        a: Var,
        bias: Var,
    },
    Hadamard(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        a: Var,
        idx: Arc<[usize]>,
    },
    Scatter {
        src: Var,
        idx: Arc<[usize]>,
    },
    ScaleRowsConst {
        a: Var,
        s: Arc<[f64]>,
    },
    ScaleRows {
        a: Var,
        s: Var,
    },
    SegmentSoftmax {
        scores: Var,
        seg: Arc<[usize]>,
        groups: usize,
    },
    SoftmaxCe {
        logits: Var,
        labels: Arc<[usize]>,
        mask: Arc<[usize]>,
        probs: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Persistent leaf gradients; repeated `backward` calls accumulate here.
    leaf_grads: Vec<Option<Vec<f64>>>,
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn check_indices(op: &'static str, idx: &[usize], bound: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= bound) {
        Some(&index) => Err(Error::Index { op, index, bound }),
        None => Ok(()),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a copy of `t`. Gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let mut value =
            Tensor::from_vec(t.rows(), t.cols(), t.data().to_vec()).expect("shape preserved");
        value.set_requires_grad(t.requires_grad());
        let needs = t.requires_grad();
        self.push(value, Op::Leaf, needs)
    }

    /// Records a copy of `t` that never receives gradients.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let value =
            Tensor::from_vec(t.rows(), t.cols(), t.data().to_vec()).expect("shape preserved");
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), needs))
    }

    /// `x · wᵀ` for `x[n×in]`, `w[out×in]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.cols() {
            return Err(Error::Dimension {
                op: "linear",
                lhs: xv.shape(),
                rhs: wv.shape(),
            });
        }
        let (n, k, m) = (xv.rows(), xv.cols(), wv.rows());
        let wt = wv.transpose();
        let mut out = Tensor::zeros(n, m);
        kernels::mm(xv.data(), wt.data(), out.data_mut(), n, k, m);
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::Linear { x, w }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("add", av, bv)?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    /// Adds a `1×d` row to every row of `a[n×d]`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            add_into(out.row_mut(r), bv.data());
        }
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(out, Op::AddRow { a, bias }, needs))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("hadamard", av, bv)?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Hadamard(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * c).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data).expect("shape preserved");
        let needs = self.needs(a);
        self.push(out, Op::Scale(a, c), needs)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .map(|&x| match kind {
                Activation::Tanh => x.tanh(),
                Activation::Relu => x.max(0.0),
                Activation::LeakyRelu(s) => {
                    if x > 0.0 {
                        x
                    } else {
                        s * x
                    }
                }
            })
            .collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data).expect("shape preserved");
        let needs = self.needs(a);
        self.push(out, Op::Act(a, kind), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    /// Row-wise layer normalization with biased variance, followed by the
    /// affine map `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.cols();
        for (name, p) in [("layer_norm.gamma", gv), ("layer_norm.beta", bv)] {
            if p.shape() != (1, d) {
                return Err(Error::Dimension {
                    op: name,
                    lhs: xv.shape(),
                    rhs: p.shape(),
                });
            }
        }
        if d == 0 || eps <= 0.0 {
            return Err(Error::invalid("layer_norm needs d >= 1 and eps > 0"));
        }
        let n = xv.rows();
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = Tensor::zeros(n, d);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            let o = out.row_mut(r);
            for c in 0..d {
                let xh = (row[c] - mean) * inv;
                xhat[r * d + c] = xh;
                o[c] = gv.data()[c] * xh + bv.data()[c];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Output row `i` is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let av = self.value(a);
        check_indices("gather_rows", &idx, av.rows())?;
        let out = av.select_rows(&idx);
        let needs = self.needs(a);
        Ok(self.push(out, Op::Gather { a, idx }, needs))
    }

    /// Output row `j` is the sum of the rows `i` of `src` with `idx[i] == j`.
    pub fn scatter_add_rows(&mut self, src: Var, idx: Arc<[usize]>, n: usize) -> Result<Var> {
        let sv = self.value(src);
        if idx.len() != sv.rows() {
            return Err(Error::Dimension {
                op: "scatter_add_rows",
                lhs: sv.shape(),
                rhs: (idx.len(), 1),
            });
        }
        check_indices("scatter_add_rows", &idx, n)?;
        let mut out = Tensor::zeros(n, sv.cols());
        for (i, &j) in idx.iter().enumerate() {
            add_into(out.row_mut(j), sv.row(i));
        }
        let needs = self.needs(src);
        Ok(self.push(out, Op::Scatter { src, idx }, needs))
    }

    /// Multiplies row `i` of `a` by the constant `s[i]`.
    pub fn scale_rows_const(&mut self, a: Var, s: Arc<[f64]>) -> Result<Var> {
        let av = self.value(a);
        if s.len() != av.rows() {
            return Err(Error::Dimension {
                op: "scale_rows_const",
                lhs: av.shape(),
                rhs: (s.len(), 1),
            });
        }
        let mut out = av.clone();
        for (r, &f) in s.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|x| *x *= f);
        }
        let needs = self.needs(a);
        Ok(self.push(out, Op::ScaleRowsConst { a, s }, needs))
    }

    /// Multiplies row `i` of `a[n×d]` by `s[i, 0]` for a differentiable `s[n×1]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (av, sv) = (self.value(a), self.value(s));
        if sv.shape() != (av.rows(), 1) {
            return Err(Error::Dimension {
                op: "scale_rows",
                lhs: av.shape(),
                rhs: sv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            let f = sv.data()[r];
            out.row_mut(r).iter_mut().for_each(|x| *x *= f);
        }
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(out, Op::ScaleRows { a, s }, needs))
    }

    /// Softmax of the `e×1` column `scores` within groups sharing `seg[i]`.
    pub fn segment_softmax(
        &mut self,
        scores: Var,
        seg: Arc<[usize]>,
        groups: usize,
    ) -> Result<Var> {
        let sv = self.value(scores);
        if sv.shape() != (seg.len(), 1) {
            return Err(Error::Dimension {
                op: "segment_softmax",
                lhs: sv.shape(),
                rhs: (seg.len(), 1),
            });
        }
        check_indices("segment_softmax", &seg, groups)?;
        let mut max = vec![f64::NEG_INFINITY; groups];
        for (i, &g) in seg.iter().enumerate() {
            max[g] = max[g].max(sv.data()[i]);
        }
        let mut out = Tensor::zeros(seg.len(), 1);
        let mut denom = vec![0.0; groups];
        for (i, &g) in seg.iter().enumerate() {
            let e = (sv.data()[i] - max[g]).exp();
            out.data_mut()[i] = e;
            denom[g] += e;
        }
        for (i, &g) in seg.iter().enumerate() {
            out.data_mut()[i] /= denom[g];
        }
        let needs = self.needs(scores);
        Ok(self.push(
            out,
            Op::SegmentSoftmax {
                scores,
                seg,
                groups,
            },
            needs,
        ))
    }

    /// Mean cross-entropy of the softmax of `logits` over the rows in `mask`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: Arc<[usize]>,
        mask: Arc<[usize]>,
    ) -> Result<Var> {
        if mask.is_empty() {
            return Err(Error::invalid("softmax_cross_entropy: empty mask"));
        }
        let lv = self.value(logits);
        let (n, k) = lv.shape();
        if labels.len() != n {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                lhs: lv.shape(),
                rhs: (labels.len(), 1),
            });
        }
        check_indices("softmax_cross_entropy.mask", &mask, n)?;
        for &r in mask.iter() {
            if labels[r] >= k {
                return Err(Error::Index {
                    op: "softmax_cross_entropy.label",
                    index: labels[r],
                    bound: k,
                });
            }
        }
        let mut probs = vec![0.0; mask.len() * k];
        let mut loss = 0.0;
        for (m, &r) in mask.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
            let log_sum = sum.ln();
            for c in 0..k {
                probs[m * k + c] = (row[c] - max).exp() / sum;
            }
            loss -= row[labels[r]] - max - log_sum;
        }
        loss /= mask.len() as f64;
        let out = Tensor::from_vec(1, 1, vec![loss])?;
        let needs = self.needs(logits);
        Ok(self.push(
            out,
            Op::SoftmaxCe {
                logits,
                labels,
                mask,
                probs,
            },
            needs,
        ))
    }

    /// Sum of all entries as a `1×1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let out = Tensor::from_vec(1, 1, vec![s]).expect("scalar");
        let needs = self.needs(a);
        self.push(out, Op::Sum(a), needs)
    }

    /// Propagates `d loss = 1` backwards through every recorded node.
    ///
    /// Leaf gradients accumulate across calls; everything else is rebuilt.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::invalid(format!(
                "backward needs a 1x1 loss, got {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let node = &self.nodes[i];
            let nodes = &self.nodes;
            let send = |v: Var, delta: Vec<f64>, grads: &mut Vec<Option<Vec<f64>>>| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match grads[v.0].as_mut() {
                    Some(acc) => add_into(acc, &delta),
                    None => grads[v.0] = Some(delta),
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    match self.leaf_grads[i].as_mut() {
                        Some(acc) => add_into(acc, &g),
                        None => self.leaf_grads[i] = Some(g),
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if nodes[a.0].needs_grad {
                        let mut da = vec![0.0; m * k];
                        kernels::mm_nt(&g, bv.data(), &mut da, m, n, k);
                        send(*a, da, &mut grads);
                    }
                    if nodes[b.0].needs_grad {
                        let mut db = vec![0.0; k * n];
                        kernels::mm_tn(av.data(), &g, &mut db, m, k, n);
                        send(*b, db, &mut grads);
                    }
                }
                Op::Linear { x, w } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let (n, k, m) = (xv.rows(), xv.cols(), wv.rows());
                    if nodes[x.0].needs_grad {
                        let mut dx = vec![0.0; n * k];
                        kernels::mm(&g, wv.data(), &mut dx, n, m, k);
                        send(*x, dx, &mut grads);
                    }
                    if nodes[w.0].needs_grad {
                        // dwᵀ = xᵀ·g, computed in the layout that skips zeros of x.
                        let mut dwt = vec![0.0; k * m];
                        kernels::mm_tn(xv.data(), &g, &mut dwt, n, k, m);
                        let mut dw = vec![0.0; m * k];
                        for p in 0..k {
                            for q in 0..m {
                                dw[q * k + p] = dwt[p * m + q];
                            }
                        }
                        send(*w, dw, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g, &mut grads);
                }
                Op::AddRow { a, bias } => {
                    let d = val(*bias).cols();
                    let mut db = vec![0.0; d];
                    for row in g.chunks(d.max(1)) {
                        add_into(&mut db, row);
                    }
                    send(*bias, db, &mut grads);
                    send(*a, g, &mut grads);
                }
                Op::Hadamard(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if nodes[a.0].needs_grad {
                        let da = g.iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                        send(*a, da, &mut grads);
                    }
                    if nodes[b.0].needs_grad {
                        let db = g.iter().zip(av.data()).map(|(x, y)| x * y).collect();
                        send(*b, db, &mut grads);
                    }
                }
                Op::Scale(a, c) => {
                    let da = g.iter().map(|x| x * c).collect();
                    send(*a, da, &mut grads);
                }
                Op::Act(a, kind) => {
                    let (inp, out) = (val(*a).data(), node.value.data());
                    let da = g
                        .iter()
                        .zip(inp.iter().zip(out))
                        .map(|(gi, (&x, &y))| match kind {
                            Activation::Tanh => gi * (1.0 - y * y),
                            Activation::Relu => {
                                if x > 0.0 {
                                    *gi
                                } else {
                                    0.0
                                }
                            }
                            Activation::LeakyRelu(s) => {
                                if x > 0.0 {
                                    *gi
                                } else {
                                    gi * s
                                }
                            }
                        })
                        .collect();
                    send(*a, da, &mut grads);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = val(*gamma).data();
                    let d = gv.len();
                    let n = inv_std.len();
                    if nodes[gamma.0].needs_grad || nodes[beta.0].needs_grad {
                        let mut dg = vec![0.0; d];
                        let mut db = vec![0.0; d];
                        for r in 0..n {
                            for c in 0..d {
                                dg[c] += g[r * d + c] * xhat[r * d + c];
                                db[c] += g[r * d + c];
                            }
                        }
                        send(*gamma, dg, &mut grads);
                        send(*beta, db, &mut grads);
                    }
                    if nodes[x.0].needs_grad {
                        let mut dx = vec![0.0; n * d];
                        let df = d as f64;
                        for r in 0..n {
                            let mut sum_dxh = 0.0;
                            let mut sum_dxh_xh = 0.0;
                            for c in 0..d {
                                let dxh = g[r * d + c] * gv[c];
                                sum_dxh += dxh;
                                sum_dxh_xh += dxh * xhat[r * d + c];
                            }
                            for c in 0..d {
                                let dxh = g[r * d + c] * gv[c];
                                dx[r * d + c] = inv_std[r] / df
                                    * (df * dxh - sum_dxh - xhat[r * d + c] * sum_dxh_xh);
                            }
                        }
                        send(*x, dx, &mut grads);
                    }
                }
                Op::Gather { a, idx } => {
                    let av = val(*a);
                    let d = av.cols();
                    let mut da = vec![0.0; av.len()];
                    for (i, &j) in idx.iter().enumerate() {
                        add_into(&mut da[j * d..(j + 1) * d], &g[i * d..(i + 1) * d]);
                    }
                    send(*a, da, &mut grads);
                }
                Op::Scatter { src, idx } => {
                    let d = val(*src).cols();
                    let mut ds = Vec::with_capacity(idx.len() * d);
                    for &j in idx.iter() {
                        ds.extend_from_slice(&g[j * d..(j + 1) * d]);
                    }
                    send(*src, ds, &mut grads);
                }
                Op::ScaleRowsConst { a, s } => {
                    let d = val(*a).cols();
                    let mut da = g;
                    for (r, &f) in s.iter().enumerate() {
                        da[r * d..(r + 1) * d].iter_mut().for_each(|x| *x *= f);
                    }
                    send(*a, da, &mut grads);
                }
                Op::ScaleRows { a, s } => {
                    let (av, sv) = (val(*a), val(*s));
                    let d = av.cols();
                    if nodes[s.0].needs_grad {
                        let ds = (0..av.rows())
                            .map(|r| {
                                g[r * d..(r + 1) * d]
                                    .iter()
                                    .zip(av.row(r))
                                    .map(|(x, y)| x * y)
                                    .sum()
                            })
                            .collect();
                        send(*s, ds, &mut grads);
                    }
                    if nodes[a.0].needs_grad {
                        let mut da = g;
                        for r in 0..av.rows() {
                            let f = sv.data()[r];
                            da[r * d..(r + 1) * d].iter_mut().for_each(|x| *x *= f);
                        }
                        send(*a, da, &mut grads);
                    }
                }
                Op::SegmentSoftmax {
                    scores,
                    seg,
                    groups,
                } => {
                    let alpha = node.value.data();
                    let mut dot = vec![0.0; *groups];
                    for (i, &grp) in seg.iter().enumerate() {
                        dot[grp] += alpha[i] * g[i];
                    }
                    let ds = seg
                        .iter()
                        .enumerate()
                        .map(|(i, &grp)| alpha[i] * (g[i] - dot[grp]))
                        .collect();
                    send(*scores, ds, &mut grads);
                }
                Op::SoftmaxCe {
                    logits,
                    labels,
                    mask,
                    probs,
                } => {
                    let lv = val(*logits);
                    let k = lv.cols();
                    let scale = g[0] / mask.len() as f64;
                    let mut dl = vec![0.0; lv.len()];
                    for (m, &r) in mask.iter().enumerate() {
                        for c in 0..k {
                            dl[r * k + c] += scale * probs[m * k + c];
                        }
                        dl[r * k + labels[r]] -= scale;
                    }
                    send(*logits, dl, &mut grads);
                }
                Op::Sum(a) => {
                    let n = val(*a).len();
                    send(*a, vec![g[0]; n], &mut grads);
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    /// Adds the leaf gradient of `v` into `target`'s gradient buffer.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor) {
        if let Some(g) = self.grad(v) {
            target.accumulate_grad(g);
        }
    }
}

#[cfg(test)]
mod tests;
