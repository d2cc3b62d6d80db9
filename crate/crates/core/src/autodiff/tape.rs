use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::linalg::gemm;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, f64),
    Matmul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Softplus(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    Square(Var),
    L2Norm(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    RowSums(Var),
    MulCol(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so parents
/// always precede their children.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of every `requires_grad` leaf, keyed by its handle.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<Var, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(&v).map(Vec::as_slice)
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.remove(&v)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    /// Adds an input; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push(t, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn constant_scalar(&mut self, value: f64) -> Result<Var> {
        Ok(self.constant(Tensor::scalar(value)?))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn unary(&mut self, op: Op, x: Var, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let a = self.value(x);
        let data = a.data().iter().map(|v| f(*v)).collect();
        let out = Tensor::from_op(name, a.shape().to_vec(), data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, op, needs))
    }

    fn binary(
        &mut self,
        op: Op,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::from_op(name, ta.shape().to_vec(), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Add(a, b), a, b, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Sub(a, b), a, b, "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Mul(a, b), a, b, "mul", |x, y| x * y)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(Op::MulScalar(a, c), a, "mul_scalar", |x| x * c)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Op::Relu(x), x, "relu", |v| v.max(0.0))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(Op::Softplus(x), x, "softplus", softplus)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Op::Tanh(x), x, "tanh", f64::tanh)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Op::Square(x), x, "square", |v| v * v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), (k, 1), tb.data(), (n, 1), &mut data, 0.0);
        let out = Tensor::from_op("matmul", vec![m, n], data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Matmul(a, b), needs))
    }

    /// `x + bias` with `bias` (shape `[n]` or `[1, n]`) added to every row of `x` (`[m, n]`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.shape().last().copied().unwrap_or(0);
        let bias_ok = tb.len() == n && (tb.shape().len() == 1 || tb.shape() == [1, n]);
        if tx.shape().len() != 2 || !bias_ok {
            return Err(mismatch("add_bias", tx, tb));
        }
        let data = tx
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(tb.data()).map(|(a, b)| a + b))
            .collect();
        let out = Tensor::from_op("add_bias", tx.shape().to_vec(), data)?;
        let needs = self.needs(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), needs))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        let out = Tensor::from_op("sum", vec![1], vec![s])?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Sum(x), needs))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let out = Tensor::from_op("mean", vec![1], vec![s])?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Mean(x), needs))
    }

    /// Euclidean norm of all entries.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let out = Tensor::from_op("l2_norm", vec![1], vec![s])?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::L2Norm(x), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.is_empty() || shape.iter().product::<usize>() != t.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor::from_op("reshape", shape.to_vec(), t.data().to_vec())?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Reshape(x), needs))
    }

    /// Concatenates along the leading axis; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::ShapeMismatch {
            op: "concat",
            lhs: vec![],
            rhs: vec![],
        })?;
        let tail = self.shape(first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != tail[..] {
                return Err(mismatch("concat", self.value(first), t));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let out = Tensor::from_op("concat", shape, data)?;
        let needs = self.needs(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), needs))
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start >= end || end > t.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: t.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let n = t.row_len();
        let mut shape = t.shape().to_vec();
        shape[0] = end - start;
        let out = Tensor::from_op("slice", shape, t.data()[start * n..end * n].to_vec())?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Slice(x, start), needs))
    }

    /// Sums each row of an `[m, n]` matrix into an `[m, 1]` column.
    pub fn row_sums(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(mismatch("row_sums", t, t));
        }
        let n = t.shape()[1];
        let data = t.data().chunks(n).map(|r| r.iter().sum()).collect();
        let out = Tensor::from_op("row_sums", vec![t.shape()[0], 1], data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::RowSums(x), needs))
    }

    /// Scales row `r` of `x` (`[m, n]`) by `col[r]` (`col` is `[m, 1]`).
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (tx, tc) = (self.value(x), self.value(col));
        if tx.shape().len() != 2 || tc.shape() != [tx.shape()[0], 1] {
            return Err(mismatch("mul_col", tx, tc));
        }
        let n = tx.shape()[1];
        let data = tx
            .data()
            .chunks(n)
            .zip(tc.data())
            .flat_map(|(row, c)| row.iter().map(move |v| v * c))
            .collect();
        let out = Tensor::from_op("mul_col", tx.shape().to_vec(), data)?;
        let needs = self.needs(&[x, col]);
        Ok(self.push(out, Op::MulCol(x, col), needs))
    }

    /// Vector-Jacobian products from a scalar `root` back to every leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::NonScalarRoot(root_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let value = &node.value;
            match &node.op {
                Op::Leaf => {
                    out.grads.insert(Var(i), g);
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, |d| add_into(d, &g));
                    self.acc(&mut grads, *b, |d| add_into(d, &g));
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, |d| add_into(d, &g));
                    self.acc(&mut grads, *b, |d| {
                        d.iter_mut().zip(&g).for_each(|(d, g)| *d -= g)
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    self.acc(&mut grads, *a, |d| {
                        for ((d, g), y) in d.iter_mut().zip(&g).zip(vb) {
                            *d += g * y;
                        }
                    });
                    self.acc(&mut grads, *b, |d| {
                        for ((d, g), x) in d.iter_mut().zip(&g).zip(va) {
                            *d += g * x;
                        }
                    });
                }
                Op::MulScalar(a, c) => {
                    self.acc(&mut grads, *a, |d| {
                        d.iter_mut().zip(&g).for_each(|(d, g)| *d += g * c)
                    });
                }
                Op::Matmul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    // dA = G * B^T, dB = A^T * G
                    self.acc(&mut grads, *a, |d| {
                        gemm(m, n, k, &g, (n, 1), tb.data(), (1, n), d, 1.0)
                    });
                    self.acc(&mut grads, *b, |d| {
                        gemm(k, m, n, ta.data(), (1, k), &g, (n, 1), d, 1.0)
                    });
                }
                Op::AddBias(x, bias) => {
                    let n = value.shape()[1];
                    self.acc(&mut grads, *x, |d| add_into(d, &g));
                    self.acc(&mut grads, *bias, |d| {
                        for row in g.chunks(n) {
                            add_into(d, row);
                        }
                    });
                }
                Op::Relu(x) => {
                    let vx = self.value(*x).data();
                    self.acc(&mut grads, *x, |d| {
                        for ((d, g), x) in d.iter_mut().zip(&g).zip(vx) {
                            if *x > 0.0 {
                                *d += g;
                            }
                        }
                    });
                }
                Op::Softplus(x) => {
                    let vx = self.value(*x).data();
                    self.acc(&mut grads, *x, |d| {
                        for ((d, g), x) in d.iter_mut().zip(&g).zip(vx) {
                            *d += g * sigmoid(*x);
                        }
                    });
                }
                Op::Tanh(x) => {
                    let vy = value.data();
                    self.acc(&mut grads, *x, |d| {
                        for ((d, g), y) in d.iter_mut().zip(&g).zip(vy) {
                            *d += g * (1.0 - y * y);
                        }
                    });
                }
                Op::Square(x) => {
                    let vx = self.value(*x).data();
                    self.acc(&mut grads, *x, |d| {
                        for ((d, g), x) in d.iter_mut().zip(&g).zip(vx) {
                            *d += 2.0 * g * x;
                        }
                    });
                }
                Op::Sum(x) => {
                    self.acc(&mut grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0]));
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len() as f64;
                    self.acc(&mut grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0] / n));
                }
                Op::L2Norm(x) => {
                    let norm = value.item();
                    let vx = self.value(*x).data();
                    if norm > 0.0 {
                        self.acc(&mut grads, *x, |d| {
                            for (d, x) in d.iter_mut().zip(vx) {
                                *d += g[0] * x / norm;
                            }
                        });
                    }
                }
                Op::Reshape(x) => {
                    self.acc(&mut grads, *x, |d| add_into(d, &g));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        self.acc(&mut grads, *p, |d| add_into(d, &g[offset..offset + len]));
                        offset += len;
                    }
                }
                Op::Slice(x, start) => {
                    let n = self.value(*x).row_len();
                    let begin = start * n;
                    self.acc(&mut grads, *x, |d| add_into(&mut d[begin..begin + g.len()], &g));
                }
                Op::RowSums(x) => {
                    let n = self.value(*x).shape()[1];
                    self.acc(&mut grads, *x, |d| {
                        for (row, g) in d.chunks_mut(n).zip(&g) {
                            row.iter_mut().for_each(|d| *d += g);
                        }
                    });
                }
                Op::MulCol(x, col) => {
                    let (vx, vc) = (self.value(*x).data(), self.value(*col).data());
                    let n = value.shape()[1];
                    self.acc(&mut grads, *x, |d| {
                        for ((drow, grow), c) in d.chunks_mut(n).zip(g.chunks(n)).zip(vc) {
                            for (d, g) in drow.iter_mut().zip(grow) {
                                *d += g * c;
                            }
                        }
                    });
                    self.acc(&mut grads, *col, |d| {
                        for ((d, grow), xrow) in d.iter_mut().zip(g.chunks(n)).zip(vx.chunks(n)) {
                            *d += grow.iter().zip(xrow).map(|(g, x)| g * x).sum::<f64>();
                        }
                    });
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                out.grads
                    .entry(Var(i))
                    .or_insert_with(|| vec![0.0; node.value.len()]);
            }
        }
        for (i, node) in self.nodes.iter().enumerate().skip(root.0 + 1) {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                out.grads.insert(Var(i), vec![0.0; node.value.len()]);
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap().with_requires_grad(true)
    }

    #[test]
    fn softplus_at_zero_is_ln_two() {
        let mut t = Tape::new();
        let x = t.leaf(vec1(&[0.0]));
        let y = t.softplus(x).unwrap();
        assert!((t.value(y).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn matmul_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(2, 3, vec![1.0; 6]).unwrap());
        let b = t.constant(Tensor::matrix(3, 1, vec![1.0; 3]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.shape(c), &[2, 1]);
        let err = t.matmul(b, b).unwrap_err();
        assert!(err.to_string().contains("[3, 1]"), "{err}");
    }

    #[test]
    fn tanh_slope_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(vec1(&[0.0]));
        let y = t.tanh(x).unwrap();
        let s = t.sum(y).unwrap();
        assert_eq!(t.backward(s).unwrap().get(x).unwrap(), &[1.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(vec1(&[0.3, -2.0, 5.0]));
        let s = t.sum(x).unwrap();
        assert_eq!(t.backward(s).unwrap().get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn squared_norm_gradient_is_twice_input() {
        let xs = [0.3, -2.0, 5.0];
        let mut t = Tape::new();
        let x = t.leaf(vec1(&xs));
        let n = t.l2_norm(x).unwrap();
        let s = t.square(n).unwrap();
        let g = t.backward(s).unwrap();
        for (g, x) in g.get(x).unwrap().iter().zip(&xs) {
            assert!((g - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(vec1(&[1.0, 2.0]));
        let y = t.square(x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn unused_leaves_get_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vec1(&[1.0, 2.0]));
        let unused = t.leaf(vec1(&[4.0]));
        let s = t.sum(x).unwrap();
        let late = t.leaf(vec1(&[5.0, 6.0]));
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(unused).unwrap(), &[0.0]);
        assert_eq!(g.get(late).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_errors_name_both_operands() {
        let mut t = Tape::new();
        let a = t.leaf(vec1(&[1.0, 2.0]));
        let b = t.leaf(vec1(&[1.0, 2.0, 3.0]));
        let msg = t.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vec1(&[1.0]));
        let c = t.constant(Tensor::scalar(3.0).unwrap());
        let y = t.mul(x, c).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[3.0]);
        assert!(g.get(c).is_none());
    }
}
