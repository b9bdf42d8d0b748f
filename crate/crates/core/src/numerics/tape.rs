//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a scalar output walks the record in reverse and
//! returns a [`Gradients`] table indexed by variable. Nodes that do not
//! depend on any gradient-requiring leaf are skipped during the reverse pass.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::numerics::tensor::{matmul_at_into, matmul_bt_into, Tensor};
use crate::numerics::NumericsError;
use crate::scalar::Scalar;

/// Row groups for grouped attention and pooling. Each inner list holds the
/// row indices of one sequence.
pub type RowGroups = Rc<Vec<Vec<usize>>>;

enum Op<S> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddN(Vec<usize>),
    AddBias(usize, usize),
    AddRows {
        x: usize,
        table: usize,
        index: Rc<Vec<usize>>,
    },
    Mul(usize, usize),
    Scale(usize, S),
    Gelu {
        x: usize,
        exact: bool,
    },
    Sigmoid(usize),
    Clamp {
        x: usize,
        lo: S,
        hi: S,
    },
    Exp(usize),
    Ln(usize),
    Minimum(usize, usize),
    Sum(usize),
    Mean(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        normed: Vec<S>,
        inv_std: Vec<S>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        groups: RowGroups,
        heads: usize,
        probs: Vec<S>,
    },
    GroupMean {
        x: usize,
        groups: RowGroups,
    },
    BernoulliLogProb {
        p: usize,
        mask: Rc<Vec<bool>>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Operation record for one forward pass.
pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar> {
    tape: &'t Tape<S>,
    id: usize,
}

/// Gradients of one scalar output with respect to every recorded variable.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, var: Var<'_, S>) -> Option<&Tensor<S>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf whose gradient will be computed.
    pub fn leaf(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, value: Tensor<S>, op: Op<S>, inputs: &[usize]) -> Var<'_, S> {
        let rg = self.needs(inputs);
        self.push(value, op, rg)
    }

    fn value_of(&self, id: usize) -> Ref<'_, Tensor<S>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Sum of same-shaped variables.
    pub fn add_n<'t>(&'t self, vars: &[Var<'t, S>]) -> Result<Var<'t, S>, NumericsError> {
        let first = vars.first().ok_or(NumericsError::Empty("add_n"))?;
        let mut out = first.value().clone();
        for v in &vars[1..] {
            let val = v.value();
            if val.shape() != out.shape() {
                return Err(NumericsError::Shape {
                    op: "add_n",
                    left: out.shape().to_vec(),
                    right: val.shape().to_vec(),
                });
            }
            for (o, &x) in out.data_mut().iter_mut().zip(val.data()) {
                *o += x;
            }
        }
        let ids: Vec<usize> = vars.iter().map(|v| v.id).collect();
        Ok(self.record(out, Op::AddN(ids.clone()), &ids))
    }

    /// Row-wise layer normalization of a `[rows, d]` input with learned
    /// gain and bias of length `d`.
    pub fn layer_norm<'t>(
        &'t self,
        x: Var<'t, S>,
        gain: Var<'t, S>,
        bias: Var<'t, S>,
        eps: S,
    ) -> Result<Var<'t, S>, NumericsError> {
        let xv = x.value();
        let (rows, d) = xv.dim2();
        if gain.value().len() != d || bias.value().len() != d {
            return Err(NumericsError::Shape {
                op: "layer_norm",
                left: xv.shape().to_vec(),
                right: gain.value().shape().to_vec(),
            });
        }
        let g = gain.value();
        let b = bias.value();
        let dn = S::of(d as f64);
        let mut normed = vec![S::zero(); rows * d];
        let mut inv_std = vec![S::zero(); rows];
        let mut out = vec![S::zero(); rows * d];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
            let inv = S::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..d {
                let nh = (row[c] - mean) * inv;
                normed[r * d + c] = nh;
                out[r * d + c] = nh * g.data()[c] + b.data()[c];
            }
        }
        let shape = xv.shape().to_vec();
        drop((xv, g, b));
        let value = Tensor::new(shape, out)?;
        Ok(self.record(
            value,
            Op::LayerNorm {
                x: x.id,
                gain: gain.id,
                bias: bias.id,
                normed,
                inv_std,
            },
            &[x.id, gain.id, bias.id],
        ))
    }

    /// Multi-head scaled dot-product self-attention run independently on
    /// each row group. `q`, `k`, `v` are `[rows, d]`; every row must appear in
    /// exactly one group. Returns the `[rows, d]` attention output before the
    /// output projection.
    pub fn attention<'t>(
        &'t self,
        q: Var<'t, S>,
        k: Var<'t, S>,
        v: Var<'t, S>,
        groups: RowGroups,
        heads: usize,
    ) -> Result<Var<'t, S>, NumericsError> {
        let (qv, kv, vv) = (q.value(), k.value(), v.value());
        let (rows, d) = qv.dim2();
        if kv.shape() != qv.shape() || vv.shape() != qv.shape() {
            return Err(NumericsError::Shape {
                op: "attention",
                left: qv.shape().to_vec(),
                right: kv.shape().to_vec(),
            });
        }
        if heads == 0 || d % heads != 0 {
            return Err(NumericsError::Heads { dim: d, heads });
        }
        let covered: usize = groups.iter().map(Vec::len).sum();
        if covered != rows || groups.iter().flatten().any(|&r| r >= rows) {
            return Err(NumericsError::Groups { rows });
        }
        let dh = d / heads;
        let scale = S::one() / S::of(dh as f64).sqrt();
        let mut out = vec![S::zero(); rows * d];
        let mut probs =
            Vec::with_capacity(groups.iter().map(|g| g.len() * g.len()).sum::<usize>() * heads);
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        for group in groups.iter() {
            let len = group.len();
            for h in 0..heads {
                let off = h * dh;
                for &ri in group {
                    let qi = &qd[ri * d + off..ri * d + off + dh];
                    let start = probs.len();
                    let mut max = S::neg_infinity();
                    for &rj in group {
                        let kj = &kd[rj * d + off..rj * d + off + dh];
                        let mut s = S::zero();
                        for (&a, &b) in qi.iter().zip(kj) {
                            s += a * b;
                        }
                        let s = s * scale;
                        max = max.max(s);
                        probs.push(s);
                    }
                    let mut denom = S::zero();
                    for p in &mut probs[start..start + len] {
                        *p = (*p - max).exp();
                        denom += *p;
                    }
                    for p in &mut probs[start..start + len] {
                        *p /= denom;
                    }
                    let oi = &mut out[ri * d + off..ri * d + off + dh];
                    for (j, &rj) in group.iter().enumerate() {
                        let a = probs[start + j];
                        let vj = &vd[rj * d + off..rj * d + off + dh];
                        for (o, &x) in oi.iter_mut().zip(vj) {
                            *o += a * x;
                        }
                    }
                }
            }
        }
        let shape = qv.shape().to_vec();
        drop((qv, kv, vv));
        let value = Tensor::new(shape, out)?;
        Ok(self.record(
            value,
            Op::Attention {
                q: q.id,
                k: k.id,
                v: v.id,
                groups,
                heads,
                probs,
            },
            &[q.id, k.id, v.id],
        ))
    }

    /// Mean of the rows in each group; output is `[groups, d]`.
    pub fn group_mean<'t>(
        &'t self,
        x: Var<'t, S>,
        groups: RowGroups,
    ) -> Result<Var<'t, S>, NumericsError> {
        let xv = x.value();
        let (rows, d) = xv.dim2();
        if groups.iter().any(|g| g.is_empty()) || groups.iter().flatten().any(|&r| r >= rows) {
            return Err(NumericsError::Groups { rows });
        }
        let mut out = vec![S::zero(); groups.len() * d];
        for (gi, group) in groups.iter().enumerate() {
            let o = &mut out[gi * d..(gi + 1) * d];
            for &r in group {
                for (acc, &val) in o.iter_mut().zip(&xv.data()[r * d..(r + 1) * d]) {
                    *acc += val;
                }
            }
            let n = S::of(group.len() as f64);
            for acc in o.iter_mut() {
                *acc /= n;
            }
        }
        drop(xv);
        let value = Tensor::new(vec![groups.len(), d], out)?;
        Ok(self.record(value, Op::GroupMean { x: x.id, groups }, &[x.id]))
    }

    /// Log-probability of a binary mask under independent Bernoulli
    /// probabilities `p`: `Σ b·ln p + (1−b)·ln(1−p)`.
    pub fn bernoulli_log_prob<'t>(
        &'t self,
        p: Var<'t, S>,
        mask: Rc<Vec<bool>>,
    ) -> Result<Var<'t, S>, NumericsError> {
        let pv = p.value();
        if pv.len() != mask.len() {
            return Err(NumericsError::Shape {
                op: "bernoulli_log_prob",
                left: pv.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let mut acc = S::zero();
        for (&pt, &b) in pv.data().iter().zip(mask.iter()) {
            acc += if b { pt.ln() } else { (S::one() - pt).ln() };
        }
        drop(pv);
        Ok(self.record(
            Tensor::scalar(acc),
            Op::BernoulliLogProb { p: p.id, mask },
            &[p.id],
        ))
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var<'_, S>) -> Result<Gradients<S>, NumericsError> {
        let nodes = self.nodes.borrow();
        if nodes[output.id].value.len() != 1 {
            return Err(NumericsError::NonScalarOutput(
                nodes[output.id].value.shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(Tensor::full(nodes[output.id].value.shape(), S::one()));

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<S: Scalar>(
    grads: &mut [Option<Tensor<S>>],
    nodes: &[Node<S>],
    id: usize,
    delta: Tensor<S>,
) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += *d;
            }
        }
        slot => *slot = Some(delta),
    }
}

fn zeros_like<S: Scalar>(nodes: &[Node<S>], id: usize) -> Vec<S> {
    vec![S::zero(); nodes[id].value.len()]
}

fn wrap<S: Scalar>(nodes: &[Node<S>], id: usize, data: Vec<S>) -> Tensor<S> {
    Tensor::new(nodes[id].value.shape().to_vec(), data).expect("gradient matches value shape")
}

fn backprop<S: Scalar>(
    nodes: &[Node<S>],
    id: usize,
    g: &Tensor<S>,
    grads: &mut [Option<Tensor<S>>],
) {
    let node = &nodes[id];
    let gd = g.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k) = av.dim2();
            let (_, n) = bv.dim2();
            if nodes[*a].requires_grad {
                let mut da = vec![S::zero(); m * k];
                matmul_bt_into(gd, bv.data(), &mut da, m, n, k);
                accumulate(grads, nodes, *a, wrap(nodes, *a, da));
            }
            if nodes[*b].requires_grad {
                let mut db = vec![S::zero(); k * n];
                matmul_at_into(av.data(), gd, &mut db, m, k, n);
                accumulate(grads, nodes, *b, wrap(nodes, *b, db));
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::AddN(ids) => {
            for &i in ids {
                accumulate(grads, nodes, i, g.clone());
            }
        }
        Op::AddBias(x, bias) => {
            accumulate(grads, nodes, *x, g.clone());
            if nodes[*bias].requires_grad {
                let n = nodes[*bias].value.len();
                let mut db = vec![S::zero(); n];
                for row in gd.chunks(n) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(grads, nodes, *bias, wrap(nodes, *bias, db));
            }
        }
        Op::AddRows { x, table, index } => {
            accumulate(grads, nodes, *x, g.clone());
            if nodes[*table].requires_grad {
                let d = nodes[*x].value.cols();
                let mut dt = zeros_like(nodes, *table);
                for (r, &t) in index.iter().enumerate() {
                    for c in 0..d {
                        dt[t * d + c] += gd[r * d + c];
                    }
                }
                accumulate(grads, nodes, *table, wrap(nodes, *table, dt));
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            if nodes[*a].requires_grad {
                let da = gd.iter().zip(bv).map(|(&gi, &bi)| gi * bi).collect();
                accumulate(grads, nodes, *a, wrap(nodes, *a, da));
            }
            if nodes[*b].requires_grad {
                let db = gd.iter().zip(av).map(|(&gi, &ai)| gi * ai).collect();
                accumulate(grads, nodes, *b, wrap(nodes, *b, db));
            }
        }
        Op::Scale(x, c) => {
            let dx = gd.iter().map(|&gi| gi * *c).collect();
            accumulate(grads, nodes, *x, wrap(nodes, *x, dx));
        }
        Op::Gelu { x, exact } => {
            let xv = nodes[*x].value.data();
            let dx = gd
                .iter()
                .zip(xv)
                .map(|(&gi, &xi)| gi * gelu_grad(xi, *exact))
                .collect();
            accumulate(grads, nodes, *x, wrap(nodes, *x, dx));
        }
        Op::Sigmoid(x) => {
            let yv = node.value.data();
            let dx = gd
                .iter()
                .zip(yv)
                .map(|(&gi, &y)| gi * y * (S::one() - y))
                .collect();
            accumulate(grads, nodes, *x, wrap(nodes, *x, dx));
        }
        Op::Clamp { x, lo, hi } => {
            let xv = nodes[*x].value.data();
            let dx = gd
                .iter()
                .zip(xv)
                .map(|(&gi, &xi)| {
                    if xi >= *lo && xi <= *hi {
                        gi
                    } else {
                        S::zero()
                    }
                })
                .collect();
            accumulate(grads, nodes, *x, wrap(nodes, *x, dx));
        }
        Op::Exp(x) => {
            let yv = node.value.data();
            let dx = gd.iter().zip(yv).map(|(&gi, &y)| gi * y).collect();
            accumulate(grads, nodes, *x, wrap(nodes, *x, dx));
        }
        Op::Ln(x) => {
            let xv = nodes[*x].value.data();
            let dx = gd.iter().zip(xv).map(|(&gi, &xi)| gi / xi).collect();
            accumulate(grads, nodes, *x, wrap(nodes, *x, dx));
        }
        Op::Minimum(a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            // ties route the gradient to the first operand
            let da = gd
                .iter()
                .zip(av.iter().zip(bv))
                .map(|(&gi, (&x, &y))| if x <= y { gi } else { S::zero() })
                .collect();
            let db = gd
                .iter()
                .zip(av.iter().zip(bv))
                .map(|(&gi, (&x, &y))| if x <= y { S::zero() } else { gi })
                .collect();
            accumulate(grads, nodes, *a, wrap(nodes, *a, da));
            accumulate(grads, nodes, *b, wrap(nodes, *b, db));
        }
        Op::Sum(x) => {
            let dx = vec![gd[0]; nodes[*x].value.len()];
            accumulate(grads, nodes, *x, wrap(nodes, *x, dx));
        }
        Op::Mean(x) => {
            let n = nodes[*x].value.len();
            let dx = vec![gd[0] / S::of(n as f64); n];
            accumulate(grads, nodes, *x, wrap(nodes, *x, dx));
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            normed,
            inv_std,
        } => {
            let gv = nodes[*gain].value.data();
            let d = gv.len();
            let rows = inv_std.len();
            if nodes[*x].requires_grad {
                let dn = S::of(d as f64);
                let mut dx = vec![S::zero(); rows * d];
                for r in 0..rows {
                    let gr = &gd[r * d..(r + 1) * d];
                    let nr = &normed[r * d..(r + 1) * d];
                    let mut sum_dn = S::zero();
                    let mut sum_dn_n = S::zero();
                    for c in 0..d {
                        let dnh = gr[c] * gv[c];
                        sum_dn += dnh;
                        sum_dn_n += dnh * nr[c];
                    }
                    for c in 0..d {
                        let dnh = gr[c] * gv[c];
                        dx[r * d + c] = inv_std[r] / dn * (dn * dnh - sum_dn - nr[c] * sum_dn_n);
                    }
                }
                accumulate(grads, nodes, *x, wrap(nodes, *x, dx));
            }
            if nodes[*gain].requires_grad || nodes[*bias].requires_grad {
                let mut dg = vec![S::zero(); d];
                let mut db = vec![S::zero(); d];
                for r in 0..rows {
                    for c in 0..d {
                        dg[c] += gd[r * d + c] * normed[r * d + c];
                        db[c] += gd[r * d + c];
                    }
                }
                accumulate(grads, nodes, *gain, wrap(nodes, *gain, dg));
                accumulate(grads, nodes, *bias, wrap(nodes, *bias, db));
            }
        }
        Op::Attention {
            q,
            k,
            v,
            groups,
            heads,
            probs,
        } => {
            let (qd, kd, vd) = (
                nodes[*q].value.data(),
                nodes[*k].value.data(),
                nodes[*v].value.data(),
            );
            let d = nodes[*q].value.cols();
            let dh = d / heads;
            let scale = S::one() / S::of(dh as f64).sqrt();
            let mut dq = zeros_like(nodes, *q);
            let mut dk = zeros_like(nodes, *k);
            let mut dv = zeros_like(nodes, *v);
            let mut cursor = 0;
            let mut dscore = Vec::new();
            for group in groups.iter() {
                let len = group.len();
                for h in 0..*heads {
                    let off = h * dh;
                    for &ri in group {
                        let a = &probs[cursor..cursor + len];
                        cursor += len;
                        let go = &gd[ri * d + off..ri * d + off + dh];
                        // dA_ij = dOut_i · v_j ; dV_j += a_ij dOut_i
                        dscore.clear();
                        let mut weighted = S::zero();
                        for (j, &rj) in group.iter().enumerate() {
                            let vj = &vd[rj * d + off..rj * d + off + dh];
                            let mut da = S::zero();
                            for (&x, &y) in go.iter().zip(vj) {
                                da += x * y;
                            }
                            dscore.push(da);
                            weighted += a[j] * da;
                            let dvj = &mut dv[rj * d + off..rj * d + off + dh];
                            for (acc, &x) in dvj.iter_mut().zip(go) {
                                *acc += a[j] * x;
                            }
                        }
                        let qi_start = ri * d + off;
                        for (j, &rj) in group.iter().enumerate() {
                            let ds = a[j] * (dscore[j] - weighted) * scale;
                            if ds == S::zero() {
                                continue;
                            }
                            for c in 0..dh {
                                dq[qi_start + c] += ds * kd[rj * d + off + c];
                                dk[rj * d + off + c] += ds * qd[qi_start + c];
                            }
                        }
                    }
                }
            }
            accumulate(grads, nodes, *q, wrap(nodes, *q, dq));
            accumulate(grads, nodes, *k, wrap(nodes, *k, dk));
            accumulate(grads, nodes, *v, wrap(nodes, *v, dv));
        }
        Op::GroupMean { x, groups } => {
            let d = nodes[*x].value.cols();
            let mut dx = zeros_like(nodes, *x);
            for (gi, group) in groups.iter().enumerate() {
                let n = S::of(group.len() as f64);
                for &r in group {
                    for c in 0..d {
                        dx[r * d + c] += gd[gi * d + c] / n;
                    }
                }
            }
            accumulate(grads, nodes, *x, wrap(nodes, *x, dx));
        }
        Op::BernoulliLogProb { p, mask } => {
            let pv = nodes[*p].value.data();
            let dp = pv
                .iter()
                .zip(mask.iter())
                .map(|(&pt, &b)| {
                    if b {
                        gd[0] / pt
                    } else {
                        -gd[0] / (S::one() - pt)
                    }
                })
                .collect();
            accumulate(grads, nodes, *p, wrap(nodes, *p, dp));
        }
    }
}

/// Elementwise GELU. `exact` selects `x·Φ(x)`; otherwise the tanh
/// approximation.
pub fn gelu_value<S: Scalar>(x: S, exact: bool) -> S {
    let half = S::of(0.5);
    if exact {
        half * x * (S::one() + (x / S::of(std::f64::consts::SQRT_2)).erf())
    } else {
        let c = S::of((2.0 / std::f64::consts::PI).sqrt());
        half * x * (S::one() + (c * (x + S::of(0.044715) * x * x * x)).tanh())
    }
}

fn gelu_grad<S: Scalar>(x: S, exact: bool) -> S {
    let half = S::of(0.5);
    if exact {
        let cdf = half * (S::one() + (x / S::of(std::f64::consts::SQRT_2)).erf());
        let pdf = (-half * x * x).exp() / S::of((2.0 * std::f64::consts::PI).sqrt());
        cdf + x * pdf
    } else {
        let c = S::of((2.0 / std::f64::consts::PI).sqrt());
        let a = S::of(0.044715);
        let t = (c * (x + a * x * x * x)).tanh();
        half * (S::one() + t)
            + half * x * (S::one() - t * t) * c * (S::one() + S::of(3.0) * a * x * x)
    }
}

/// Logistic function with a branch that avoids overflow of `exp(-x)` for
/// negative inputs.
pub fn sigmoid_value<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Tensor<S>> {
        self.tape.value_of(self.id)
    }

    pub fn item(&self) -> S {
        self.value().item()
    }

    fn unary(self, value: Tensor<S>, op: Op<S>) -> Var<'t, S> {
        self.tape.record(value, op, &[self.id])
    }

    fn same_shape(&self, other: &Var<'t, S>, op: &'static str) -> Result<(), NumericsError> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(NumericsError::Shape {
                op,
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(self, other: Var<'t, S>) -> Result<Var<'t, S>, NumericsError> {
        let value = crate::numerics::tensor::matmul(&self.value(), &other.value())?;
        Ok(self
            .tape
            .record(value, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'t, S>) -> Result<Var<'t, S>, NumericsError> {
        self.same_shape(&other, "add")?;
        let value = {
            let (a, b) = (self.value(), other.value());
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| x + y)
                .collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self
            .tape
            .record(value, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Var<'t, S>) -> Result<Var<'t, S>, NumericsError> {
        self.same_shape(&other, "mul")?;
        let value = {
            let (a, b) = (self.value(), other.value());
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| x * y)
                .collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self
            .tape
            .record(value, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn minimum(self, other: Var<'t, S>) -> Result<Var<'t, S>, NumericsError> {
        self.same_shape(&other, "minimum")?;
        let value = {
            let (a, b) = (self.value(), other.value());
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| x.min(y))
                .collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self
            .tape
            .record(value, Op::Minimum(self.id, other.id), &[self.id, other.id]))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` input.
    pub fn add_bias(self, bias: Var<'t, S>) -> Result<Var<'t, S>, NumericsError> {
        let value = {
            let (x, b) = (self.value(), bias.value());
            let n = x.cols();
            if b.len() != n {
                return Err(NumericsError::Shape {
                    op: "add_bias",
                    left: x.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(n) {
                for (v, &bv) in row.iter_mut().zip(b.data()) {
                    *v += bv;
                }
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        Ok(self
            .tape
            .record(value, Op::AddBias(self.id, bias.id), &[self.id, bias.id]))
    }

    /// Adds row `index[r]` of `table` to row `r` of the input. Used for
    /// positional embeddings shared across frames or patches.
    pub fn add_rows(
        self,
        table: Var<'t, S>,
        index: Rc<Vec<usize>>,
    ) -> Result<Var<'t, S>, NumericsError> {
        let value = {
            let (x, t) = (self.value(), table.value());
            let (rows, d) = x.dim2();
            let (trows, td) = t.dim2();
            if td != d || index.len() != rows || index.iter().any(|&i| i >= trows) {
                return Err(NumericsError::Shape {
                    op: "add_rows",
                    left: x.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            let mut data = x.data().to_vec();
            for (r, &ti) in index.iter().enumerate() {
                for c in 0..d {
                    data[r * d + c] += t.data()[ti * d + c];
                }
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        let op = Op::AddRows {
            x: self.id,
            table: table.id,
            index,
        };
        Ok(self.tape.record(value, op, &[self.id, table.id]))
    }

    pub fn scale(self, c: S) -> Var<'t, S> {
        let value = self.value().map(|x| x * c);
        self.unary(value, Op::Scale(self.id, c))
    }

    pub fn gelu(self, exact: bool) -> Var<'t, S> {
        let value = self.value().map(|x| gelu_value(x, exact));
        self.unary(value, Op::Gelu { x: self.id, exact })
    }

    pub fn sigmoid(self) -> Var<'t, S> {
        let value = self.value().map(sigmoid_value);
        self.unary(value, Op::Sigmoid(self.id))
    }

    pub fn clamp(self, lo: S, hi: S) -> Var<'t, S> {
        let value = self.value().map(|x| x.max(lo).min(hi));
        self.unary(value, Op::Clamp { x: self.id, lo, hi })
    }

    pub fn exp(self) -> Var<'t, S> {
        let value = self.value().map(S::exp);
        self.unary(value, Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t, S> {
        let value = self.value().map(S::ln);
        self.unary(value, Op::Ln(self.id))
    }

    pub fn sum(self) -> Var<'t, S> {
        let value = Tensor::scalar(self.value().sum());
        self.unary(value, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, S> {
        let value = {
            let v = self.value();
            Tensor::scalar(v.sum() / S::of(v.len() as f64))
        };
        self.unary(value, Op::Mean(self.id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_zero_and_asymptote() {
        for exact in [true, false] {
            assert_eq!(gelu_value(0.0f64, exact), 0.0);
            assert!((gelu_value(10.0f64, exact) - 10.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gelu_at_one_matches_quadrature_of_gaussian_cdf() {
        // Φ(1) by composite Simpson over [-12, 1] of the standard normal pdf.
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let (a, b, n) = (-12.0, 1.0, 20_000);
        let h = (b - a) / n as f64;
        let mut acc = pdf(a) + pdf(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * pdf(a + i as f64 * h);
        }
        let cdf = acc * h / 3.0;
        assert!((gelu_value(1.0f64, true) - cdf).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_properties() {
        assert_eq!(sigmoid_value(0.0f64), 0.5);
        for x in [0.3, 2.0, 17.0, 40.0] {
            assert!((sigmoid_value(x) + sigmoid_value(-x) - 1.0f64).abs() < 1e-15);
        }
        assert!(sigmoid_value(-745.0f64) > 0.0);
    }

    #[test]
    fn backward_requires_scalar_output() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(tape.backward(x.gelu(true)).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let y = x.mul(c).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn minimum_routes_gradient_to_smaller_operand() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(vec![1.0, 5.0]));
        let b = tape.leaf(Tensor::from_vec(vec![2.0, 3.0]));
        let y = a.minimum(b).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(g.get(b).unwrap().data(), &[0.0, 1.0]);
    }
}
