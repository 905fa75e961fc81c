//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node holding its output value and enough context to
//! run its backward rule. Node ids are handed out in creation order, which is
//! a topological order, so `backward` is a single reverse sweep.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity used by feed-forward blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
    Tanh,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Act(Var, Activation),
    Softmax(Var),
    LayerNorm { x: Var, rstd: Vec<T> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, rows: Vec<usize> },
    Reshape(Var),
    MeanRows(Var),
    SumAll(Var),
    RowNorms(Var),
    CrossEntropy { logits: Var, label: usize, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A recorded computation.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` as a tensor; zeros when `v` did not influence the loss.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor::from_vec(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn dims(t: &Tensor<impl Scalar>) -> (usize, usize) {
    t.dims2()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Adds an input; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let ng = tensor.requires_grad();
        self.push(tensor, Op::Leaf, ng)
    }

    /// Adds an input that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    /// `op(a) * op(b)` where `op` optionally transposes a 2-D operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ra, ca) = dims(self.value(a));
        let (rb, cb) = dims(self.value(b));
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if tb { (cb, rb) } else { (rb, cb) };
        if k != k2 || self.shape(a).len() > 2 || self.shape(b).len() > 2 {
            return Err(self.dim_err("matmul", a, b));
        }
        let (rsa, csa) = if ta { (1, ca as isize) } else { (ca as isize, 1) };
        let (rsb, csb) = if tb { (1, cb as isize) } else { (cb as isize, 1) };
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            rsa,
            csa,
            self.value(b).data(),
            rsb,
            csb,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let ng = self.ng(a) || self.ng(b);
        let value = Tensor::from_vec([m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err(name, a, b));
        }
        self.value(a).zip_map(self.value(b), f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    fn row_broadcast(&mut self, x: Var, row: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (m, n) = dims(self.value(x));
        if self.value(row).len() != n {
            return Err(self.dim_err(name, x, row));
        }
        let xs = self.value(x).data();
        let rs = self.value(row).data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(xs[i * n..(i + 1) * n].iter().zip(rs).map(|(&a, &b)| f(a, b)));
        }
        Tensor::from_vec(self.shape(x).to_vec(), out)
    }

    /// `x[i, :] + row` for every row `i`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let v = self.row_broadcast(x, row, "add_row", |a, b| a + b)?;
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(v, Op::AddRow(x, row), ng))
    }

    /// `x[i, :] * row` for every row `i`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let v = self.row_broadcast(x, row, "mul_row", |a, b| a * b)?;
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(v, Op::MulRow(x, row), ng))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).map(|a| a * c);
        let ng = self.ng(x);
        self.push(v, Op::Scale(x, c), ng)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let v = self.value(x).map(|a| act_forward(kind, a));
        let ng = self.ng(x);
        self.push(v, Op::Act(x, kind), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Gelu)
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = softmax_rows(self.value(x));
        let ng = self.ng(x);
        self.push(v, Op::Softmax(x), ng)
    }

    /// Zero-mean / unit-variance normalization over the last axis (no affine).
    pub fn layer_norm_plain(&mut self, x: Var, eps: T) -> Var {
        let (m, n) = dims(self.value(x));
        let xs = self.value(x).data();
        let nt = T::of(n as f64);
        let mut out = Vec::with_capacity(m * n);
        let mut rstd = Vec::with_capacity(m);
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nt;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / nt;
            let r = T::one() / (var + eps).sqrt();
            out.extend(row.iter().map(|&a| (a - mean) * r));
            rstd.push(r);
        }
        let v = Tensor::from_vec(self.shape(x).to_vec(), out).unwrap();
        let ng = self.ng(x);
        self.push(v, Op::LayerNorm { x, rstd }, ng)
    }

    /// Layer normalization with per-channel gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let y = self.layer_norm_plain(x, eps);
        let y = self.mul_row(y, gain)?;
        self.add_row(y, bias)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims(self.value(x));
        if start + len > n {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: self.shape(x).to_vec(),
                rhs: vec![start, len],
            });
        }
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xs[i * n + start..i * n + start + len]);
        }
        let v = Tensor::from_vec([m, len], out)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = dims(self.value(parts[0])).0;
        let mut n = 0;
        for &p in parts {
            let (pm, pn) = dims(self.value(p));
            if pm != m {
                return Err(self.dim_err("concat_cols", parts[0], p));
            }
            n += pn;
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                let pn = dims(self.value(p)).1;
                out.extend_from_slice(&self.value(p).data()[i * pn..(i + 1) * pn]);
            }
        }
        let v = Tensor::from_vec([m, n], out)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims(self.value(x));
        if start + len > m {
            return Err(Error::Dimension {
                op: "slice_rows",
                lhs: self.shape(x).to_vec(),
                rhs: vec![start, len],
            });
        }
        let out = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let v = Tensor::from_vec([len, n], out)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::SliceRows { x, start }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = dims(self.value(parts[0])).1;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = dims(self.value(p));
            if pn != n {
                return Err(self.dim_err("concat_rows", parts[0], p));
            }
            m += pm;
            out.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::from_vec([m, n], out)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Selects rows by index (embedding lookup).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = dims(self.value(x));
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::argument(format!("row index {bad} out of range for {m} rows")));
        }
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&xs[r * n..(r + 1) * n]);
        }
        let v = Tensor::from_vec([rows.len(), n], out)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::GatherRows { x, rows: rows.to_vec() }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape.to_vec())?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Reshape(x), ng))
    }

    /// Mean over rows: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (m, n) = dims(self.value(x));
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for (o, &a) in out.iter_mut().zip(&xs[i * n..(i + 1) * n]) {
                *o = *o + a;
            }
        }
        let mt = T::of(m as f64);
        out.iter_mut().for_each(|o| *o = *o / mt);
        let v = Tensor::from_vec([1, n], out).unwrap();
        let ng = self.ng(x);
        self.push(v, Op::MeanRows(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::of(self.value(x).len() as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Euclidean norm of every row: `[m, n] -> [m, 1]`.
    pub fn row_norms(&mut self, x: Var) -> Var {
        let (m, n) = dims(self.value(x));
        let xs = self.value(x).data();
        let out = (0..m)
            .map(|i| xs[i * n..(i + 1) * n].iter().map(|&a| a * a).sum::<T>().sqrt())
            .collect();
        let v = Tensor::from_vec([m, 1], out).unwrap();
        let ng = self.ng(x);
        self.push(v, Op::RowNorms(x), ng)
    }

    /// `-log softmax(logits)[label]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let c = self.value(logits).len();
        if label >= c {
            return Err(Error::argument(format!("label {label} out of range for {c} classes")));
        }
        let probs = softmax_rows(&self.value(logits).reshape([1, c])?).into_vec();
        let xs = self.value(logits).data();
        let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + xs.iter().map(|&a| (a - max).exp()).sum::<T>().ln();
        let loss = lse - xs[label];
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            ng,
        ))
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (ra, ca) = dims(&self.nodes[a.0].value);
                let (rb, cb) = dims(&self.nodes[b.0].value);
                let (m, k) = if *ta { (ca, ra) } else { (ra, ca) };
                let n = if *tb { rb } else { cb };
                let (rsa, csa) = if *ta { (1, ca as isize) } else { (ca as isize, 1) };
                let (rsb, csb) = if *tb { (1, cb as isize) } else { (cb as isize, 1) };
                if self.ng(*a) {
                    let buf = slot(grads, *a, ra * ca);
                    let (rsc, csc) = if *ta { (1, m as isize) } else { (k as isize, 1) };
                    T::gemm(m, n, k, T::one(), g, n as isize, 1, val(*b), csb, rsb, T::one(), buf, rsc, csc);
                }
                if self.ng(*b) {
                    let buf = slot(grads, *b, rb * cb);
                    let (rsc, csc) = if *tb { (1, k as isize) } else { (n as isize, 1) };
                    T::gemm(k, m, n, T::one(), val(*a), csa, rsa, g, n as isize, 1, T::one(), buf, rsc, csc);
                }
            }
            Op::Add(a, b) => {
                accumulate(self, grads, *a, g.iter().copied());
                accumulate(self, grads, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                accumulate(self, grads, *a, g.iter().copied());
                accumulate(self, grads, *b, g.iter().map(|&v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                accumulate(self, grads, *a, g.iter().zip(bv).map(|(&d, &y)| d * y));
                accumulate(self, grads, *b, g.iter().zip(av).map(|(&d, &x)| d * x));
            }
            Op::AddRow(x, row) => {
                accumulate(self, grads, *x, g.iter().copied());
                if self.ng(*row) {
                    let n = self.nodes[row.0].value.len();
                    let buf = slot(grads, *row, n);
                    for chunk in g.chunks(n) {
                        for (o, &d) in buf.iter_mut().zip(chunk) {
                            *o = *o + d;
                        }
                    }
                }
            }
            Op::MulRow(x, row) => {
                let rv = val(*row);
                let n = rv.len();
                if self.ng(*x) {
                    accumulate(self, grads, *x, g.iter().enumerate().map(|(p, &d)| d * rv[p % n]));
                }
                if self.ng(*row) {
                    let xv = val(*x);
                    let buf = slot(grads, *row, n);
                    for (gc, xc) in g.chunks(n).zip(xv.chunks(n)) {
                        for ((o, &d), &a) in buf.iter_mut().zip(gc).zip(xc) {
                            *o = *o + d * a;
                        }
                    }
                }
            }
            Op::Scale(x, c) => accumulate(self, grads, *x, g.iter().map(|&d| d * *c)),
            Op::Act(x, kind) => {
                let xv = val(*x);
                accumulate(self, grads, *x, g.iter().zip(xv).map(|(&d, &a)| d * act_derivative(*kind, a)));
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = dims(&node.value).1;
                let mut out = Vec::with_capacity(y.len());
                for (yc, gc) in y.chunks(n).zip(g.chunks(n)) {
                    let dot = yc.iter().zip(gc).map(|(&a, &b)| a * b).sum::<T>();
                    out.extend(yc.iter().zip(gc).map(|(&a, &b)| a * (b - dot)));
                }
                accumulate(self, grads, *x, out.into_iter());
            }
            Op::LayerNorm { x, rstd } => {
                let y = node.value.data();
                let n = dims(&node.value).1;
                let nt = T::of(n as f64);
                let mut out = Vec::with_capacity(y.len());
                for ((yc, gc), &r) in y.chunks(n).zip(g.chunks(n)).zip(rstd) {
                    let mg = gc.iter().copied().sum::<T>() / nt;
                    let mgy = gc.iter().zip(yc).map(|(&a, &b)| a * b).sum::<T>() / nt;
                    out.extend(gc.iter().zip(yc).map(|(&d, &v)| r * (d - mg - v * mgy)));
                }
                accumulate(self, grads, *x, out.into_iter());
            }
            Op::SliceCols { x, start } => {
                if self.ng(*x) {
                    let (m, n) = dims(&self.nodes[x.0].value);
                    let len = dims(&node.value).1;
                    let buf = slot(grads, *x, m * n);
                    for r in 0..m {
                        for c in 0..len {
                            buf[r * n + start + c] = buf[r * n + start + c] + g[r * len + c];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = dims(&node.value);
                let mut off = 0;
                for &p in parts {
                    let pn = dims(&self.nodes[p.0].value).1;
                    if self.ng(p) {
                        let buf = slot(grads, p, m * pn);
                        for r in 0..m {
                            for c in 0..pn {
                                buf[r * pn + c] = buf[r * pn + c] + g[r * n + off + c];
                            }
                        }
                    }
                    off += pn;
                }
            }
            Op::SliceRows { x, start } => {
                if self.ng(*x) {
                    let total = self.nodes[x.0].value.len();
                    let n = dims(&node.value).1;
                    let buf = slot(grads, *x, total);
                    for (o, &d) in buf[start * n..start * n + g.len()].iter_mut().zip(g) {
                        *o = *o + d;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    accumulate(self, grads, p, g[off..off + len].iter().copied());
                    off += len;
                }
            }
            Op::GatherRows { x, rows } => {
                if self.ng(*x) {
                    let total = self.nodes[x.0].value.len();
                    let n = dims(&node.value).1;
                    let buf = slot(grads, *x, total);
                    for (k, &r) in rows.iter().enumerate() {
                        for c in 0..n {
                            buf[r * n + c] = buf[r * n + c] + g[k * n + c];
                        }
                    }
                }
            }
            Op::Reshape(x) => accumulate(self, grads, *x, g.iter().copied()),
            Op::MeanRows(x) => {
                let (m, n) = dims(&self.nodes[x.0].value);
                let mt = T::of(m as f64);
                accumulate(self, grads, *x, (0..m * n).map(|p| g[p % n] / mt));
            }
            Op::SumAll(x) => {
                let len = self.nodes[x.0].value.len();
                accumulate(self, grads, *x, std::iter::repeat_n(g[0], len));
            }
            Op::RowNorms(x) => {
                let xv = val(*x);
                let norms = node.value.data();
                let n = dims(&self.nodes[x.0].value).1;
                accumulate(
                    self,
                    grads,
                    *x,
                    xv.iter().enumerate().map(|(p, &a)| {
                        let r = p / n;
                        if norms[r] > T::zero() {
                            g[r] * a / norms[r]
                        } else {
                            T::zero()
                        }
                    }),
                );
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                accumulate(
                    self,
                    grads,
                    *logits,
                    probs.iter().enumerate().map(|(c, &p)| {
                        let y = if c == *label { T::one() } else { T::zero() };
                        g[0] * (p - y)
                    }),
                );
            }
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn accumulate<T: Scalar>(g: &Graph<T>, grads: &mut [Option<Vec<T>>], v: Var, contrib: impl Iterator<Item = T>) {
    if !g.ng(v) {
        return;
    }
    match &mut grads[v.0] {
        Some(buf) => buf.iter_mut().zip(contrib).for_each(|(o, d)| *o = *o + d),
        empty => *empty = Some(contrib.collect()),
    }
}

pub(crate) fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.dims2().1;
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&a| (a - max).exp()));
        let s = out[start..].iter().copied().sum::<T>();
        out[start..].iter_mut().for_each(|v| *v = *v / s);
    }
    Tensor::from_vec(x.shape().to_vec(), out).unwrap()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn act_forward<T: Scalar>(kind: Activation, x: T) -> T {
    match kind {
        Activation::Gelu => {
            let u = T::of(GELU_C) * (x + T::of(0.044715) * x * x * x);
            T::of(0.5) * x * (T::one() + u.tanh())
        }
        Activation::Relu => x.max(T::zero()),
        Activation::Tanh => x.tanh(),
    }
}

fn act_derivative<T: Scalar>(kind: Activation, x: T) -> T {
    match kind {
        Activation::Gelu => {
            let c = T::of(GELU_C);
            let k = T::of(0.044715);
            let th = (c * (x + k * x * x * x)).tanh();
            T::of(0.5) * (T::one() + th)
                + T::of(0.5) * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * k * x * x)
        }
        Activation::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::Tanh => {
            let t = x.tanh();
            T::one() - t * t
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// `softmax(q k^T * scale) v`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, scale: T) -> Result<Var> {
        if dims(self.value(q)).1 != dims(self.value(k)).1 {
            return Err(self.dim_err("attention(q, k)", q, k));
        }
        if dims(self.value(k)).0 != dims(self.value(v)).0 {
            return Err(self.dim_err("attention(k, v)", k, v));
        }
        let scores = self.matmul_t(q, k, false, true)?;
        let scores = self.scale(scores, scale);
        let weights = self.softmax(scores);
        self.matmul(weights, v)
    }
}
