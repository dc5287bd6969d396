use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Abs(Var),
    Square(Var),
    /// `[.., k] · [k, n]`
    MatMul(Var, Var),
    /// `[b, m, k] · [b, k, n]`
    BatchMatMul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    /// `out[i] = x[index[i]]`
    Gather(Var, Rc<Vec<usize>>),
    /// `out[r] = Σ w · z[j]` over the `(j, w)` pairs of row `r`.
    Combine(Var, Rc<Vec<Vec<(usize, f64)>>>),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Sum(Var),
    StopGradient,
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Records operations for one forward pass and replays them backwards.
///
/// Nodes are appended in evaluation order, so parents always precede
/// children and the reverse sweep in [`Tape::backward`] is a valid
/// topological order.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    check_finite: bool,
    fault: Option<String>,
    sg_log: Vec<Tensor>,
    sg_replay: Option<(Vec<Tensor>, usize)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Debug verification: any non-finite value produced on this tape makes
    /// [`Tape::backward`] (and [`Tape::verify`]) fail.
    pub fn with_finite_check(mut self) -> Self {
        self.check_finite = true;
        self
    }

    /// Forces the stop-gradient outputs of a subsequent forward pass to the
    /// given values, in call order. Used to evaluate a graph as a smooth
    /// function of its inputs with every stop-gradient held constant.
    pub fn replay_stop_gradients(&mut self, values: Vec<Tensor>) {
        self.sg_replay = Some((values, 0));
    }

    /// Stop-gradient outputs recorded so far, in call order.
    pub fn stop_gradient_log(&self) -> &[Tensor] {
        &self.sg_log
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a leaf tensor; gradients are collected for it when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_raw(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Forward value is `x`; no gradient flows back to `x`.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = match &mut self.sg_replay {
            Some((values, cursor)) if *cursor < values.len() => {
                let v = values[*cursor].clone();
                *cursor += 1;
                v
            }
            _ => self.nodes[x.0].value.clone(),
        };
        self.sg_log.push(value.clone());
        self.push_raw(value, Op::StopGradient, false)
    }

    pub fn verify(&self) -> Result<()> {
        match &self.fault {
            Some(msg) => Err(Error::Numeric(msg.clone())),
            None => Ok(()),
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        if self.check_finite && self.fault.is_none() && !value.is_finite() {
            self.fault = Some(format!(
                "non-finite value produced at node {} ({:?})",
                self.nodes.len(),
                op_name(&op)
            ));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// over every path from `loss` to each node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.verify()?;
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.filter(|_| self.nodes[id].requires_grad).map(|d| Tensor {
                    shape: self.nodes[id].value.shape().to_vec(),
                    data: d,
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
                self.accumulate(grads, *b, |d| reduce_broadcast(d, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
                self.accumulate(grads, *b, |d| reduce_broadcast(d, g, -1.0));
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                self.accumulate(grads, *a, |d| {
                    let nb = bv.len();
                    for (i, (di, gi)) in d.iter_mut().zip(g).enumerate() {
                        *di += gi * bv[i % nb];
                    }
                });
                self.accumulate(grads, *b, |d| {
                    let nb = d.len();
                    for (i, (gi, ai)) in g.iter().zip(av).enumerate() {
                        d[i % nb] += gi * ai;
                    }
                });
            }
            Op::Div(a, b) => {
                let bv = self.nodes[b.0].value.data();
                let out = node.value.data();
                self.accumulate(grads, *a, |d| {
                    let nb = bv.len();
                    for (i, (di, gi)) in d.iter_mut().zip(g).enumerate() {
                        *di += gi / bv[i % nb];
                    }
                });
                self.accumulate(grads, *b, |d| {
                    let nb = d.len();
                    for (i, (gi, oi)) in g.iter().zip(out).enumerate() {
                        d[i % nb] -= gi * oi / bv[i % nb];
                    }
                });
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += gi * s;
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.nodes[a.0].value.data();
                self.accumulate(grads, *a, |d| {
                    for ((di, gi), xi) in d.iter_mut().zip(g).zip(av) {
                        if *xi > 0.0 {
                            *di += gi;
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let av = self.nodes[a.0].value.data();
                self.accumulate(grads, *a, |d| {
                    for ((di, gi), &xi) in d.iter_mut().zip(g).zip(av) {
                        *di += gi * super::ops::gelu_grad(xi);
                    }
                });
            }
            Op::Abs(a) => {
                let av = self.nodes[a.0].value.data();
                self.accumulate(grads, *a, |d| {
                    for ((di, gi), &xi) in d.iter_mut().zip(g).zip(av) {
                        *di += gi * sign(xi);
                    }
                });
            }
            Op::Square(a) => {
                let av = self.nodes[a.0].value.data();
                self.accumulate(grads, *a, |d| {
                    for ((di, gi), &xi) in d.iter_mut().zip(g).zip(av) {
                        *di += 2.0 * gi * xi;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let at = &self.nodes[a.0].value;
                let bt = &self.nodes[b.0].value;
                let k = bt.shape()[0];
                let n = bt.shape()[1];
                let m = at.numel() / k;
                // dA = dC · Bᵀ
                self.accumulate(grads, *a, |d| {
                    let bv = bt.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let drow = &mut d[i * k..(i + 1) * k];
                        for (p, dp) in drow.iter_mut().enumerate() {
                            let brow = &bv[p * n..(p + 1) * n];
                            *dp += dot(grow, brow);
                        }
                    }
                });
                // dB = Aᵀ · dC
                self.accumulate(grads, *b, |d| {
                    let av = at.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            let drow = &mut d[p * n..(p + 1) * n];
                            for (dv, gv) in drow.iter_mut().zip(grow) {
                                *dv += a_ip * gv;
                            }
                        }
                    }
                });
            }
            Op::BatchMatMul(a, b) => {
                let at = &self.nodes[a.0].value;
                let bt = &self.nodes[b.0].value;
                let (bs, m, k) = (at.shape()[0], at.shape()[1], at.shape()[2]);
                let n = bt.shape()[2];
                self.accumulate(grads, *a, |d| {
                    let bv = bt.data();
                    for s in 0..bs {
                        for i in 0..m {
                            let grow = &g[(s * m + i) * n..(s * m + i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[(s * k + p) * n..(s * k + p + 1) * n];
                                d[(s * m + i) * k + p] += dot(grow, brow);
                            }
                        }
                    }
                });
                self.accumulate(grads, *b, |d| {
                    let av = at.data();
                    for s in 0..bs {
                        for i in 0..m {
                            let grow = &g[(s * m + i) * n..(s * m + i + 1) * n];
                            for p in 0..k {
                                let a_ip = av[(s * m + i) * k + p];
                                let drow = &mut d[(s * k + p) * n..(s * k + p + 1) * n];
                                for (dv, gv) in drow.iter_mut().zip(grow) {
                                    *dv += a_ip * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Reshape(a) => self.accumulate(grads, *a, |d| add_into(d, g)),
            Op::Permute(a, perm) => {
                let in_shape = self.nodes[a.0].value.shape();
                let map = super::ops::permute_index(in_shape, perm);
                self.accumulate(grads, *a, |d| {
                    for (o, &src) in map.iter().enumerate() {
                        d[src] += g[o];
                    }
                });
            }
            Op::Gather(a, index) => {
                self.accumulate(grads, *a, |d| {
                    for (o, &src) in index.iter().enumerate() {
                        d[src] += g[o];
                    }
                });
            }
            Op::Combine(z, rows) => {
                let dim = self.nodes[z.0].value.cols();
                self.accumulate(grads, *z, |d| {
                    for (r, terms) in rows.iter().enumerate() {
                        let grow = &g[r * dim..(r + 1) * dim];
                        for &(j, w) in terms {
                            let drow = &mut d[j * dim..(j + 1) * dim];
                            for (dv, gv) in drow.iter_mut().zip(grow) {
                                *dv += w * gv;
                            }
                        }
                    }
                });
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = node.value.data();
                let (outer, len, inner) = (*outer, *len, *inner);
                self.accumulate(grads, *x, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * len + j) * inner + i;
                            let s: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                d[at(j)] += y[at(j)] * (g[at(j)] - s);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.nodes[gain.0].value.data();
                let n = gv.len();
                let rows = xhat.len() / n;
                self.accumulate(grads, *x, |d| {
                    for r in 0..rows {
                        let gr = &g[r * n..(r + 1) * n];
                        let xh = &xhat[r * n..(r + 1) * n];
                        let dxhat: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dx = dot(&dxhat, xh) / n as f64;
                        for j in 0..n {
                            d[r * n + j] += rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                });
                self.accumulate(grads, *gain, |d| {
                    for r in 0..rows {
                        for j in 0..n {
                            d[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                });
                self.accumulate(grads, *bias, |d| {
                    for r in 0..rows {
                        for j in 0..n {
                            d[j] += g[r * n + j];
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.accumulate(grads, *a, |d| {
                    for di in d.iter_mut() {
                        *di += g0;
                    }
                });
            }
        }
    }
}

/// Gradients from one [`Tape::backward`] call, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Scale(..) => "scale",
        Op::Relu(_) => "relu",
        Op::Gelu(_) => "gelu",
        Op::Abs(_) => "abs",
        Op::Square(_) => "square",
        Op::MatMul(..) => "matmul",
        Op::BatchMatMul(..) => "bmm",
        Op::Reshape(_) => "reshape",
        Op::Permute(..) => "permute",
        Op::Gather(..) => "gather",
        Op::Combine(..) => "combine",
        Op::Softmax { .. } => "softmax",
        Op::LayerNorm { .. } => "layernorm",
        Op::Sum(_) => "sum",
        Op::StopGradient => "stop_gradient",
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(d: &mut [f64], g: &[f64]) {
    for (di, gi) in d.iter_mut().zip(g) {
        *di += gi;
    }
}

/// Sums a full-size gradient back onto a leading-axis-broadcast operand.
fn reduce_broadcast(d: &mut [f64], g: &[f64], sign: f64) {
    let nb = d.len();
    for (i, gi) in g.iter().enumerate() {
        d[i % nb] += sign * gi;
    }
}
