//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value and the operation that produced it. [`Tape::backward`] walks the
//! nodes in reverse, accumulating adjoints, and adds the adjoint of every
//! parameter leaf into the matching [`ParamStore`] gradient.
//!
//! ```
//! use carmil::numerics::{Matrix, ParamStore, Tape};
//!
//! let mut store = ParamStore::new(0);
//! let w = store.add("w", Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]])?)?;
//!
//! let mut tape = Tape::new();
//! let wv = tape.param(&store, w);
//! let sq = tape.hadamard(wv, wv)?;
//! let loss = tape.sum(sq);
//! tape.backward(loss, &mut store)?;
//!
//! // d/dW sum(W∘W) = 2W
//! assert_eq!(store.grad(w), &store.value(w).scaled(2.0));
//! # Ok::<(), carmil::Error>(())
//! ```
//!
//! Reductions over the tile axis ([`Tape::col_sum`], [`Tape::row_mean`],
//! [`Tape::softmax_col`]) sum in sorted order, which makes them bitwise
//! independent of row order.

use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRowBroadcast(Var, Var),
    ScaleRows(Var, Var),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    ColSum(Var),
    SoftmaxCol(Var),
    SelectRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    BceLogits(Var, Matrix, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, name: &str) -> Result<Var> {
        value.ensure_finite(name)?;
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Hadamard(a, b)
            | Op::AddRowBroadcast(a, b)
            | Op::ScaleRows(a, b) => self.requires(*a) || self.requires(*b),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Clamp(a, _, _)
            | Op::Sum(a)
            | Op::ColSum(a)
            | Op::SoftmaxCol(a)
            | Op::SelectRows(a, _)
            | Op::BceLogits(a, _, _) => self.requires(*a),
            Op::ConcatRows(parts) => parts.iter().any(|p| self.requires(*p)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        // constants are validated by their producers; non-finite input is
        // still caught by the first op that consumes it
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf bound to a learnable parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Hadamard(a, b), "hadamard")
    }

    /// `factor * a`. A zero factor contributes no gradient at all.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).scaled(factor);
        self.push(out, Op::Scale(a, factor), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a), "add_scalar")
    }

    /// `a (n×m) + 1·bias (1×m)`.
    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if self.shape(bias) != (1, m) {
            return Err(Error::ShapeMismatch {
                op: "add_row_broadcast",
                left: (n, m),
                right: self.shape(bias),
            });
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).as_slice().to_vec();
        for r in 0..n {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRowBroadcast(a, bias), "add_row_broadcast")
    }

    /// Multiplies row `i` of `a (n×m)` by `s[i]` for a column `s (n×1)`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if self.shape(s) != (n, 1) {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                left: (n, m),
                right: self.shape(s),
            });
        }
        let mut out = self.value(a).clone();
        for r in 0..n {
            let f = self.value(s).as_slice()[r];
            out.row_mut(r).iter_mut().for_each(|v| *v *= f);
        }
        self.push(out, Op::ScaleRows(a, s), "scale_rows")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), "exp")
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).as_slice().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive entry {bad}"),
            });
        }
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), "log")
    }

    /// Clamps into `[lo, hi]`; clamped entries pass no gradient.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi), "clamp")
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        // a sum of finite values can still overflow, but the inputs here are
        // losses of bounded magnitude
        self.nodes.push(Node {
            requires_grad: self.requires(a),
            value: out,
            op: Op::Sum(a),
        });
        Var(self.nodes.len() - 1)
    }

    /// Column sums `1ᵀ a` as a 1×m node, summed in sorted order.
    pub fn col_sum(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let (n, m) = v.shape();
        let mut buf = vec![0.0; n];
        let mut out = Matrix::zeros(1, m);
        for c in 0..m {
            for r in 0..n {
                buf[r] = v[(r, c)];
            }
            out[(0, c)] = ordered_sum(&mut buf);
        }
        self.push(out, Op::ColSum(a), "col_sum")
    }

    /// Mean of the rows of `a (n×m)` as a 1×m node; order-independent.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let n = self.shape(a).0;
        if n == 0 {
            return Err(Error::InvalidArgument("row_mean of an empty matrix".into()));
        }
        let s = self.col_sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Softmax over the entries of a column vector.
    pub fn softmax_col(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if m != 1 || n == 0 {
            return Err(Error::ShapeMismatch {
                op: "softmax_col",
                left: (n, m),
                right: (n, 1),
            });
        }
        let x = self.value(a).as_slice();
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
        let total = ordered_sum(&mut e.clone());
        let out = Matrix::column(&e.iter().map(|v| v / total).collect::<Vec<_>>());
        self.push(out, Op::SoftmaxCol(a), "softmax_col")
    }

    /// Gathers rows by index (indices may repeat).
    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let (n, m) = v.shape();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!("row index {bad} out of range for {n} rows")));
        }
        let mut out = Matrix::zeros(indices.len(), m);
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(v.row(i));
        }
        self.push(out, Op::SelectRows(a, indices.to_vec()), "select_rows")
    }

    /// Stacks nodes with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts.first().map_or(0, |p| self.shape(*p).1);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: (rows, m),
                    right: v.shape(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.as_slice());
        }
        let out = Matrix::from_vec(rows, m, data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Mean binary cross-entropy between `σ(logits)` and soft `targets`,
    /// with `σ(logits)` clamped into `[clamp, 1 - clamp]` first. Equal to
    /// the composition of [`Tape::sigmoid`], [`Tape::clamp`] and [`Tape::log`]
    /// but computed in log space with one node.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Matrix, clamp: f64) -> Result<Var> {
        if self.shape(logits) != targets.shape() {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                left: self.shape(logits),
                right: targets.shape(),
            });
        }
        if !(clamp > 0.0 && clamp < 0.5) {
            return Err(Error::InvalidArgument(format!("clamp {clamp} outside (0, 0.5)")));
        }
        let bound = ((1.0 - clamp) / clamp).ln();
        let (log_lo, log_hi) = (clamp.ln(), (1.0 - clamp).ln());
        let x = self.value(logits).as_slice();
        let mut total = 0.0;
        for (&xi, &a) in x.iter().zip(targets.as_slice()) {
            // log σ(x) = -softplus(-x), log(1 - σ(x)) = -softplus(x)
            let (log_p, log_q) = if xi <= -bound {
                (log_lo, log_hi)
            } else if xi >= bound {
                (log_hi, log_lo)
            } else {
                (-softplus(-xi), -softplus(xi))
            };
            total += a * log_p + (1.0 - a) * log_q;
        }
        let out = Matrix::scalar(-total / x.len().max(1) as f64);
        self.push(out, Op::BceLogits(logits, targets.clone(), bound), "bce_with_logits")
    }

    /// Back-propagates from a 1×1 `loss`, adding parameter adjoints into
    /// `store`. Gradients accumulate across calls until
    /// [`ParamStore::zero_grad`].
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: self.shape(loss),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let mut send = |target: Var, contribution: Matrix| {
                if !self.requires(target) {
                    return;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.accumulate_grad(*id, &g),
                Op::MatMul(a, b) => {
                    if self.requires(*a) {
                        send(*a, g.matmul_nt(self.value(*b))?);
                    }
                    if self.requires(*b) {
                        send(*b, self.value(*a).matmul_tn(&g)?);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.scaled(-1.0));
                    send(*a, g);
                }
                Op::Hadamard(a, b) => {
                    send(*a, g.zip_map(self.value(*b), |x, y| x * y));
                    send(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
                Op::Scale(a, f) => {
                    if *f != 0.0 {
                        send(*a, g.scaled(*f));
                    }
                }
                Op::AddScalar(a) => send(*a, g),
                Op::AddRowBroadcast(a, b) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    send(*b, db);
                    send(*a, g);
                }
                Op::ScaleRows(a, s) => {
                    let av = self.value(*a);
                    let sv = self.value(*s).as_slice();
                    let mut ds = Matrix::zeros(g.rows(), 1);
                    let mut da = g.clone();
                    for r in 0..g.rows() {
                        ds.as_mut_slice()[r] = g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum();
                        da.row_mut(r).iter_mut().for_each(|v| *v *= sv[r]);
                    }
                    send(*s, ds);
                    send(*a, da);
                }
                Op::Transpose(a) => send(*a, g.transpose()),
                Op::Relu(a) => send(*a, g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
                Op::Sigmoid(a) => send(*a, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))),
                Op::Tanh(a) => send(*a, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))),
                Op::Exp(a) => send(*a, g.zip_map(&node.value, |gv, y| gv * y)),
                Op::Log(a) => send(*a, g.zip_map(self.value(*a), |gv, x| gv / x)),
                Op::Clamp(a, lo, hi) => send(
                    *a,
                    g.zip_map(self.value(*a), |gv, x| if x > *lo && x < *hi { gv } else { 0.0 }),
                ),
                Op::Sum(a) => {
                    let (n, m) = self.shape(*a);
                    send(*a, Matrix::filled(n, m, g.item()));
                }
                Op::ColSum(a) => {
                    let (n, m) = self.shape(*a);
                    let mut da = Matrix::zeros(n, m);
                    for r in 0..n {
                        da.row_mut(r).copy_from_slice(g.row(0));
                    }
                    send(*a, da);
                }
                Op::SoftmaxCol(a) => {
                    let y = node.value.as_slice();
                    let dot: f64 = y.iter().zip(g.as_slice()).map(|(p, q)| p * q).sum();
                    let dx: Vec<f64> = y.iter().zip(g.as_slice()).map(|(p, q)| p * (q - dot)).collect();
                    send(*a, Matrix::column(&dx));
                }
                Op::SelectRows(a, indices) => {
                    let (n, m) = self.shape(*a);
                    let mut da = Matrix::zeros(n, m);
                    for (r, &i) in indices.iter().enumerate() {
                        for (d, v) in da.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    send(*a, da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (n, m) = self.shape(*p);
                        let slice = g.as_slice()[offset * m..(offset + n) * m].to_vec();
                        send(*p, Matrix::from_vec(n, m, slice)?);
                        offset += n;
                    }
                }
                Op::BceLogits(a, targets, bound) => {
                    let scale = g.item() / targets.len().max(1) as f64;
                    send(
                        *a,
                        self.value(*a).zip_map(targets, |x, t| {
                            if x.abs() < *bound {
                                scale * (sigmoid(x) - t)
                            } else {
                                0.0
                            }
                        }),
                    );
                }
            }
        }
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_check;

    #[test]
    fn relu_and_sigmoid_values() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[[-1.0, 2.0]]).unwrap());
        let r = t.relu(x).unwrap();
        assert_eq!(t.value(r), &Matrix::from_rows(&[[0.0, 2.0]]).unwrap());
        assert_eq!(sigmoid(0.0), 0.5);
        for x in [-30.0, -2.5, 0.1, 3.0, 40.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::new(3);
        let w = store.add_glorot("w", 3, 4).unwrap();
        let mut t = Tape::new();
        let wv = t.param(&store, w);
        let loss = t.sum(wv);
        t.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w), &Matrix::filled(3, 4, 1.0));
        // second call accumulates
        t.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(w), &Matrix::filled(3, 4, 2.0));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new(0);
        let w = store.add_zeros("w", 2, 2).unwrap();
        let mut t = Tape::new();
        let wv = t.param(&store, w);
        assert!(t.backward(wv, &mut store).is_err());
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[[1.0, 0.0]]).unwrap());
        assert!(matches!(t.log(x), Err(Error::Domain { .. })));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut store = ParamStore::new(11);
        let a = store.add_glorot("a", 3, 4).unwrap();
        let b = store.add_glorot("b", 4, 2).unwrap();
        let err = finite_difference_check(
            |s, t| {
                let (av, bv) = (t.param(s, a), t.param(s, b));
                let p = t.matmul(av, bv)?;
                Ok(t.sum(p))
            },
            &mut store,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
        // d sum(AB)/dA = 1 Bᵀ
        let ones = Matrix::filled(3, 2, 1.0);
        assert_eq!(store.grad(a), &ones.matmul_nt(store.value(b)).unwrap());
    }

    #[test]
    fn every_op_passes_gradient_check() {
        let mut store = ParamStore::new(5);
        let a = store.add_glorot("a", 4, 3).unwrap();
        let b = store.add_glorot("b", 4, 3).unwrap();
        let bias = store.add_glorot("bias", 1, 3).unwrap();
        let s = store.add_glorot("s", 4, 1).unwrap();
        let err = finite_difference_check(
            |st, t| {
                let (av, bv, biasv, sv) = (t.param(st, a), t.param(st, b), t.param(st, bias), t.param(st, s));
                let h = t.hadamard(av, bv)?;
                let h = t.add_row_broadcast(h, biasv)?;
                let th = t.tanh(h)?;
                let sg = t.sigmoid(bv)?;
                let mix = t.sub(th, sg)?;
                let sm = t.softmax_col(sv)?;
                let w = t.scale_rows(mix, sm)?;
                let cs = t.col_sum(w)?;
                let e = t.exp(cs)?;
                let lg = t.log(e)?;
                let rm = t.row_mean(av)?;
                let both = t.concat_rows(&[lg, rm])?;
                let sel = t.select_rows(both, &[1, 0, 1])?;
                let tr = t.transpose(sel)?;
                let sq = t.matmul(tr, sel)?;
                let r = t.relu(sq)?;
                let c = t.clamp(r, -10.0, 10.0)?;
                let sc = t.scale(c, 0.7)?;
                let sc = t.add_scalar(sc, 3.0)?;
                Ok(t.sum(sc))
            },
            &mut store,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn fused_cross_entropy_matches_composition() {
        let logits = Matrix::from_rows(&[[0.3, -2.0, 17.0], [-20.0, 1.5, 0.0]]).unwrap();
        let targets = Matrix::from_rows(&[[0.0, 0.6, 1.0], [0.2, 0.0, 1.0]]).unwrap();
        let c = 1e-7;
        let run = |fused: bool| {
            let mut store = ParamStore::new(0);
            let id = store.add("x", logits.clone()).unwrap();
            let mut t = Tape::new();
            let x = t.param(&store, id);
            let loss = if fused {
                t.bce_with_logits(x, &targets, c).unwrap()
            } else {
                let p = t.sigmoid(x).unwrap();
                let p = t.clamp(p, c, 1.0 - c).unwrap();
                let lp = t.log(p).unwrap();
                let neg = t.scale(p, -1.0).unwrap();
                let q = t.add_scalar(neg, 1.0).unwrap();
                let lq = t.log(q).unwrap();
                let tv = t.constant(targets.clone());
                let cv = t.constant(targets.map(|v| 1.0 - v));
                let a = t.hadamard(tv, lp).unwrap();
                let b = t.hadamard(cv, lq).unwrap();
                let ab = t.add(a, b).unwrap();
                let s = t.sum(ab);
                t.scale(s, -1.0 / 6.0).unwrap()
            };
            t.backward(loss, &mut store).unwrap();
            (t.value(loss).item(), store.grad(id).clone())
        };
        let (v1, g1) = run(true);
        let (v2, g2) = run(false);
        assert!((v1 - v2).abs() < 1e-12, "{v1} vs {v2}");
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        // entries beyond the clamp pass no gradient
        assert_eq!(g1.as_slice()[2], 0.0);
        assert_eq!(g1.as_slice()[3], 0.0);
    }

    #[test]
    fn fused_cross_entropy_gradient() {
        let mut store = ParamStore::new(3);
        let x = store.add_glorot("x", 5, 5).unwrap();
        let targets = Matrix::from_vec(5, 5, (0..25).map(|i| (i % 4) as f64 / 3.0).collect()).unwrap();
        let err = finite_difference_check(
            |st, t| {
                let xv = t.param(st, x);
                let scaled = t.scale(xv, 4.0)?;
                t.bce_with_logits(scaled, &targets, 1e-7)
            },
            &mut store,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn col_sum_is_row_order_independent() {
        let rows = [[0.1, 1e16], [0.2, -1e16], [0.3, 1.0], [1e-3, 3.0]];
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&rows).unwrap());
        let s = t.col_sum(x).unwrap();
        let mut rev = rows;
        rev.reverse();
        let y = t.constant(Matrix::from_rows(&rev).unwrap());
        let s2 = t.col_sum(y).unwrap();
        assert_eq!(t.value(s), t.value(s2));
    }

    #[test]
    fn zero_scale_blocks_gradient() {
        let mut store = ParamStore::new(0);
        let w = store.add("w", Matrix::filled(2, 2, -0.0)).unwrap();
        let mut t = Tape::new();
        let wv = t.param(&store, w);
        let z = t.scale(wv, 0.0).unwrap();
        let loss = t.sum(z);
        t.backward(loss, &mut store).unwrap();
        assert!(store.grad(w).as_slice().iter().all(|v| v.to_bits() == 0));
    }
}
