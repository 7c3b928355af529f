//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Tape`] records every primal operation in creation order. Because a
//! node can only reference nodes created before it, walking the node list
//! backwards is a valid reverse topological order.

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Mse(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    // Per-row inverse standard deviations for layer norm.
    saved: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn gelu_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> NnError {
    NnError::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape()))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op, saved: Vec::new() });
        Var(self.nodes.len() - 1)
    }

    /// A constant input. Receives a gradient but is not a parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The tape node bound to a stored parameter; created on first use and
    /// reused afterwards so gradients accumulate on one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let idx = id.index();
        if self.param_vars.len() <= idx {
            self.param_vars.resize(idx + 1, None);
        }
        if let Some(v) = self.param_vars[idx] {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.param_vars[idx] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(shape_err("matmul_t", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = vec![0.0; m * n];
        gemm_nt(ta.data(), tb.data(), m, k, n, &mut out);
        let value = Tensor::from_rows(m, n, out)?;
        Ok(self.push(value, Op::MatMulT(a, b)))
    }

    fn zip_same(&self, a: Var, b: Var, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    fn row_broadcast(&self, a: Var, row: Var, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err(op, ta, tr));
        }
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tr.data()[i % c]))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.row_broadcast(a, row, "add_row", |x, y| x + y)?;
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.row_broadcast(a, row, "mul_row", |x, y| x * y)?;
        Ok(self.push(value, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu_scalar);
        self.push(value, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let c = ta.cols();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Zero-mean, unit-variance normalization of each row (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let c = ta.cols();
        let mut data = ta.data().to_vec();
        let mut inv = Vec::with_capacity(ta.rows());
        for row in data.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * s;
            }
            inv.push(s);
        }
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let v = self.push(value, Op::LayerNormRows(a));
        self.nodes[v.0].saved = inv;
        v
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let c = ta.cols();
        if start + len > c {
            return Err(NnError::Shape(format!("slice_cols {start}+{len} of {c}")));
        }
        let mut data = Vec::with_capacity(ta.rows() * len);
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row_slice(r)[start..start + len]);
        }
        let value = Tensor::from_rows(ta.rows(), len, data)?;
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), t));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::from_rows(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if start + len > ta.rows() {
            return Err(NnError::Shape(format!("slice_rows {start}+{len} of {}", ta.rows())));
        }
        let c = ta.cols();
        let data = ta.data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::from_rows(len, c, data)?;
        Ok(self.push(value, Op::SliceRows(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_rows(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let data = self.value(a).data().to_vec();
        let value = Tensor::from_rows(rows, cols, data)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Mean squared difference over all entries, as a `1 × 1` node.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let diff = self.zip_same(a, b, "mse", |x, y| x - y)?;
        let n = diff.len() as f64;
        let value = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
        Ok(self.push(Tensor::scalar(value), Op::Mse(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum();
        self.push(Tensor::scalar(value), Op::Sum(a))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(NnError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(shape, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let mut ga = vec![0.0; m * k];
                    gemm_nt(g.data(), tb.data(), m, n, k, &mut ga);
                    let mut gb = vec![0.0; k * n];
                    gemm_tn(ta.data(), g.data(), m, k, n, &mut gb);
                    accumulate(&mut grads, *a, ta.shape(), ga);
                    accumulate(&mut grads, *b, tb.shape(), gb);
                }
                Op::MatMulT(a, b) => {
                    // y = a bᵀ: ga = g b, gb = gᵀ a
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                    let mut ga = vec![0.0; m * k];
                    gemm(g.data(), tb.data(), m, n, k, &mut ga);
                    let mut gb = vec![0.0; n * k];
                    gemm_tn(g.data(), ta.data(), m, n, k, &mut gb);
                    accumulate(&mut grads, *a, ta.shape(), ga);
                    accumulate(&mut grads, *b, tb.shape(), gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.shape(), g.data().to_vec());
                    accumulate(&mut grads, *b, g.shape(), g.data().to_vec());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.shape(), g.data().to_vec());
                    accumulate(&mut grads, *b, g.shape(), g.data().iter().map(|x| -x).collect());
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = g.data().iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                    let gb = g.data().iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, ta.shape(), ga);
                    accumulate(&mut grads, *b, tb.shape(), gb);
                }
                Op::AddRow(a, row) => {
                    let c = g.cols();
                    let mut gr = vec![0.0; c];
                    for r in g.data().chunks(c) {
                        for (acc, x) in gr.iter_mut().zip(r) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *a, g.shape(), g.data().to_vec());
                    let rs = self.value(*row).shape().to_vec();
                    accumulate(&mut grads, *row, &rs, gr);
                }
                Op::MulRow(a, row) => {
                    let (ta, tr) = (self.value(*a), self.value(*row));
                    let c = g.cols();
                    let mut ga = Vec::with_capacity(g.len());
                    let mut gr = vec![0.0; c];
                    for (gr_row, a_row) in g.data().chunks(c).zip(ta.data().chunks(c)) {
                        for j in 0..c {
                            ga.push(gr_row[j] * tr.data()[j]);
                            gr[j] += gr_row[j] * a_row[j];
                        }
                    }
                    accumulate(&mut grads, *a, ta.shape(), ga);
                    accumulate(&mut grads, *row, tr.shape(), gr);
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads, *a, g.shape(), g.data().iter().map(|x| x * s).collect());
                }
                Op::Gelu(a) => {
                    let ta = self.value(*a);
                    let ga = g.data().iter().zip(ta.data()).map(|(g, &x)| g * gelu_grad(x)).collect();
                    accumulate(&mut grads, *a, ta.shape(), ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut ga = Vec::with_capacity(y.len());
                    for (g_row, y_row) in g.data().chunks(c).zip(y.data().chunks(c)) {
                        let dot: f64 = g_row.iter().zip(y_row).map(|(g, y)| g * y).sum();
                        ga.extend(g_row.iter().zip(y_row).map(|(g, y)| y * (g - dot)));
                    }
                    accumulate(&mut grads, *a, y.shape(), ga);
                }
                Op::LayerNormRows(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    let n = c as f64;
                    let mut ga = Vec::with_capacity(y.len());
                    for ((g_row, y_row), &inv) in
                        g.data().chunks(c).zip(y.data().chunks(c)).zip(&node.saved)
                    {
                        let sum_g: f64 = g_row.iter().sum();
                        let sum_gy: f64 = g_row.iter().zip(y_row).map(|(g, y)| g * y).sum();
                        ga.extend(
                            g_row
                                .iter()
                                .zip(y_row)
                                .map(|(g, y)| inv / n * (n * g - sum_g - y * sum_gy)),
                        );
                    }
                    accumulate(&mut grads, *a, y.shape(), ga);
                }
                Op::SliceCols(a, start) => {
                    let ta = self.value(*a);
                    let (c, len) = (ta.cols(), g.cols());
                    let mut ga = vec![0.0; ta.len()];
                    for r in 0..ta.rows() {
                        ga[r * c + start..r * c + start + len].copy_from_slice(g.row_slice(r));
                    }
                    accumulate(&mut grads, *a, ta.shape(), ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let tp = self.value(p);
                        let w = tp.cols();
                        let mut gp = Vec::with_capacity(tp.len());
                        for r in 0..tp.rows() {
                            gp.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, p, tp.shape(), gp);
                    }
                }
                Op::SliceRows(a, start) => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let mut ga = vec![0.0; ta.len()];
                    ga[start * c..start * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, ta.shape(), ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let tp = self.value(p);
                        let n = tp.len();
                        accumulate(&mut grads, p, tp.shape(), g.data()[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::Reshape(a) => {
                    let ta = self.value(*a);
                    accumulate(&mut grads, *a, ta.shape(), g.data().to_vec());
                }
                Op::Mse(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let scale = 2.0 * g.data()[0] / ta.len() as f64;
                    let ga: Vec<f64> =
                        ta.data().iter().zip(tb.data()).map(|(x, y)| scale * (x - y)).collect();
                    let gb = ga.iter().map(|x| -x).collect();
                    accumulate(&mut grads, *a, ta.shape(), ga);
                    accumulate(&mut grads, *b, tb.shape(), gb);
                }
                Op::Sum(a) => {
                    let ta = self.value(*a);
                    accumulate(&mut grads, *a, ta.shape(), vec![g.data()[0]; ta.len()]);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn param_nodes(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId::from_index(i), v)))
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(&data) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape"));
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// One gradient per stored parameter, zero for parameters the loss does
    /// not depend on.
    pub fn for_params(&self, tape: &Tape, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        for (id, var) in tape.param_nodes() {
            if let Some(g) = self.wrt(var) {
                out[id.index()] = g.clone();
            }
        }
        out
    }
}
