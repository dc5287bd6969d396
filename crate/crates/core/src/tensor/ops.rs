use std::f64::consts::{PI, SQRT_2};
use std::rc::Rc;

use super::tape::{Op, Tape, Var};
use super::{matmul_raw, Tensor};
use crate::error::{shape_err, Result};

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * pdf
}

/// For each output position of `permute(shape, perm)`, the flat source index.
pub(crate) fn permute_index(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let nd = shape.len();
    let mut strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; nd];
    for _ in 0..n {
        map.push(idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    map
}

fn check_broadcast(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        Ok(())
    } else {
        shape_err(format!("{what}: shape {b:?} does not broadcast onto {a:?}"))
    }
}

impl Tape {
    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_broadcast(av.shape(), bv.shape(), what)?;
        let nb = bv.numel();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv.data()[i % nb]))
            .collect();
        let value = Tensor {
            shape: av.shape().to_vec(),
            data,
        };
        Ok(self.push(value, op(a, b), &[a, b]))
    }

    /// `a + b`; `b` may broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let value = Tensor {
            shape: av.shape().to_vec(),
            data: av.data().iter().map(|&x| f(x)).collect(),
        };
        self.push(value, op, &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `[.., k] · [k, n] -> [.., n]`. Leading axes of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if bt.ndim() != 2 || at.ndim() == 0 {
            return shape_err(format!(
                "matmul expects [.., k]·[k, n], got {:?}·{:?}",
                at.shape(),
                bt.shape()
            ));
        }
        let (k, n) = (bt.shape()[0], bt.shape()[1]);
        if at.cols() != k {
            return shape_err(format!(
                "matmul inner dimensions differ: {:?}·{:?}",
                at.shape(),
                bt.shape()
            ));
        }
        let m = at.numel() / k;
        let data = matmul_raw(at.data(), bt.data(), m, k, n);
        let mut shape = at.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor { shape, data }, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched `[b, m, k] · [b, k, n] -> [b, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.ndim() != 3 || bt.ndim() != 3 || at.shape()[0] != bt.shape()[0] {
            return shape_err(format!(
                "bmm expects [b,m,k]·[b,k,n], got {:?}·{:?}",
                at.shape(),
                bt.shape()
            ));
        }
        let (bs, m, k) = (at.shape()[0], at.shape()[1], at.shape()[2]);
        let n = bt.shape()[2];
        if bt.shape()[1] != k {
            return shape_err(format!(
                "bmm inner dimensions differ: {:?}·{:?}",
                at.shape(),
                bt.shape()
            ));
        }
        let mut data = Vec::with_capacity(bs * m * n);
        for s in 0..bs {
            data.extend(matmul_raw(
                &at.data()[s * m * k..(s + 1) * m * k],
                &bt.data()[s * k * n..(s + 1) * k * n],
                m,
                k,
                n,
            ));
        }
        let value = Tensor {
            shape: vec![bs, m, n],
            data,
        };
        Ok(self.push(value, Op::BatchMatMul(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Materialized axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let at = self.value(a);
        let nd = at.ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd
            || perm
                .iter()
                .any(|&p| p >= nd || std::mem::replace(&mut seen[p], true))
        {
            return shape_err(format!("invalid permutation {perm:?} for {:?}", at.shape()));
        }
        let map = permute_index(at.shape(), perm);
        let data = map.iter().map(|&i| at.data()[i]).collect();
        let shape = perm.iter().map(|&p| at.shape()[p]).collect();
        Ok(self.push(Tensor { shape, data }, Op::Permute(a, perm.to_vec()), &[a]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let nd = self.value(a).ndim();
        if nd < 2 {
            return shape_err("transpose needs at least 2 axes");
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 1, nd - 2);
        self.permute(a, &perm)
    }

    /// `out[i] = a[index[i]]` on the flattened input, reshaped to `shape`.
    pub fn gather(&mut self, a: Var, index: Rc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let at = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= at.numel()) {
            return shape_err(format!("gather index {bad} out of range {}", at.numel()));
        }
        let data: Vec<f64> = index.iter().map(|&i| at.data()[i]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(value, Op::Gather(a, index), &[a]))
    }

    /// Rows of `z` ([C, D]) combined with fixed weights: row `r` of the
    /// output is `Σ w · z[j]` over `terms[r]`. The weights are constants;
    /// only `z` receives gradient.
    pub fn combine_rows(&mut self, z: Var, terms: Rc<Vec<Vec<(usize, f64)>>>) -> Result<Var> {
        let zt = self.value(z);
        if zt.ndim() != 2 {
            return shape_err(format!(
                "combine_rows expects a matrix, got {:?}",
                zt.shape()
            ));
        }
        let (c, d) = (zt.shape()[0], zt.shape()[1]);
        let mut data = vec![0.0; terms.len() * d];
        for (r, row_terms) in terms.iter().enumerate() {
            let out = &mut data[r * d..(r + 1) * d];
            for &(j, w) in row_terms {
                if j >= c {
                    return shape_err(format!("codeword index {j} out of range {c}"));
                }
                for (o, v) in out.iter_mut().zip(zt.row(j)) {
                    *o += w * v;
                }
            }
        }
        let value = Tensor::new(vec![terms.len(), d], data)?;
        Ok(self.push(value, Op::Combine(z, terms), &[z]))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let at = self.value(a);
        if axis >= at.ndim() {
            return shape_err(format!(
                "softmax axis {axis} out of range for {:?}",
                at.shape()
            ));
        }
        let shape = at.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = at.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    y[at(j)] = e;
                    s += e;
                }
                for j in 0..len {
                    y[at(j)] /= s;
                }
            }
        }
        let value = Tensor {
            shape: shape.to_vec(),
            data: y,
        };
        Ok(self.push(
            value,
            Op::Softmax {
                x: a,
                outer,
                len,
                inner,
            },
            &[a],
        ))
    }

    /// Layer normalization over the last axis with affine `gain`/`bias`.
    pub fn layernorm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.value(a).cols();
        if self.value(gain).shape() != [n] || self.value(bias).shape() != [n] {
            return shape_err(format!(
                "layernorm gain/bias must be [{n}], got {:?}/{:?}",
                self.value(gain).shape(),
                self.value(bias).shape()
            ));
        }
        if eps <= 0.0 {
            return Err(crate::error::Error::Config(
                "layernorm eps must be > 0".into(),
            ));
        }
        let at = self.value(a);
        let rows = at.rows();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; at.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; at.numel()];
        for r in 0..rows {
            let x = &at.data()[r * n..(r + 1) * n];
            let mean = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (x[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor {
            shape: at.shape().to_vec(),
            data: out,
        };
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: a,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[a, gain, bias],
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `x · W + b` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }
}
