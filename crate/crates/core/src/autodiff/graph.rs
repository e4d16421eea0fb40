//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node whose inputs are earlier nodes, so node order is a
//! topological order and `backward` is a single reverse sweep. A graph is built
//! per forward pass and dropped afterwards; parameters live in a
//! [`ParamStore`](super::ParamStore) and are bound into each graph as leaves.

use std::sync::Arc;

use super::sparse::SparseMatrix;
use super::tensor::{gemm_acc, MatView, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Every differentiable operation the graph supports.
///
/// `ALL` enumerates the registry; the gradient-check suite iterates it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    SparseMatMul,
    Add,
    Sub,
    Hadamard,
    Scale,
    GatherRows,
    ConcatLastAxis,
    MeanAxis,
    LeakyRelu,
    Tanh,
    L1Loss,
    MseLoss,
    MinReduceLast,
    PairwiseDistance,
    Sum,
    Reshape,
    TileRows,
}

impl OpKind {
    pub const ALL: [OpKind; 18] = [
        OpKind::MatMul,
        OpKind::SparseMatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Hadamard,
        OpKind::Scale,
        OpKind::GatherRows,
        OpKind::ConcatLastAxis,
        OpKind::MeanAxis,
        OpKind::LeakyRelu,
        OpKind::Tanh,
        OpKind::L1Loss,
        OpKind::MseLoss,
        OpKind::MinReduceLast,
        OpKind::PairwiseDistance,
        OpKind::Sum,
        OpKind::Reshape,
        OpKind::TileRows,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::SparseMatMul => "sparse_matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Hadamard => "hadamard",
            OpKind::Scale => "scale",
            OpKind::GatherRows => "gather_rows",
            OpKind::ConcatLastAxis => "concat_last_axis",
            OpKind::MeanAxis => "mean_axis",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::Tanh => "tanh",
            OpKind::L1Loss => "l1_loss",
            OpKind::MseLoss => "mse_loss",
            OpKind::MinReduceLast => "min_reduce_last",
            OpKind::PairwiseDistance => "pairwise_distance",
            OpKind::Sum => "sum",
            OpKind::Reshape => "reshape",
            OpKind::TileRows => "tile_rows",
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    SparseMatMul(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, T),
    GatherRows { x: Var, idx: Arc<[usize]> },
    Concat(Vec<Var>),
    MeanAxis { x: Var, axis: usize },
    LeakyRelu(Var, T),
    Tanh(Var),
    L1Loss(Var, Var),
    MseLoss(Var, Var),
    MinReduceLast { x: Var, argmin: Vec<usize> },
    PairwiseDistance(Var, Var),
    Sum(Var),
    Reshape(Var),
    TileRows(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// A single-use computation graph.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

/// Mean of `|a - b|` over all entries. Shared by the `l1_loss` op and the MAE metric.
pub fn mean_abs_diff<T: Real>(a: &[T], b: &[T]) -> T {
    let total: T = a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum();
    total / T::lit(a.len() as f64)
}

fn suffix_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        Ok(())
    } else {
        Err(Error::contract(
            op,
            format!("shape {b:?} does not broadcast onto {a:?}"),
        ))
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, kind: OpKind, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NumericFault { op: kind.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `a: [.., q] × b: [q, r] -> [.., r]`; leading axes of `a` are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::contract(
                "matmul",
                format!("incompatible shapes {sa:?} x {sb:?}"),
            ));
        }
        let q = sb[0];
        let r = sb[1];
        let mut shape = sa.to_vec();
        *shape.last_mut().expect("rank >= 2") = r;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let rows = av.len() / q;
        let mut out = vec![T::zero(); rows * r];
        gemm_acc(MatView::new(av, rows, q), MatView::new(bv, q, r), &mut out);
        let value = Tensor::new(shape, out)?;
        self.push(OpKind::MatMul, value, Op::MatMul(a, b), &[a, b])
    }

    /// `P: N×N (sparse) × x: [N, d] -> [N, d]`.
    pub fn sparse_matmul(&mut self, p: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || sx[0] != p.n_cols() {
            return Err(Error::contract(
                "sparse_matmul",
                format!(
                    "matrix {}x{} incompatible with features {sx:?}",
                    p.n_rows(),
                    p.n_cols()
                ),
            ));
        }
        let d = sx[1];
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); p.n_rows() * d];
        for (r, c, w) in p.entries() {
            let w = T::lit(w);
            let src = &xv[c * d..(c + 1) * d];
            for (o, &s) in out[r * d..(r + 1) * d].iter_mut().zip(src) {
                *o = *o + w * s;
            }
        }
        let value = Tensor::new(vec![p.n_rows(), d], out)?;
        self.push(
            OpKind::SparseMatMul,
            value,
            Op::SparseMatMul(Arc::clone(p), x),
            &[x],
        )
    }

    fn binary(&mut self, kind: OpKind, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Var> {
        suffix_broadcast(kind.name(), self.shape(a), self.shape(b))?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let m = bv.len();
        let mut out = Vec::with_capacity(av.len());
        for chunk in av.chunks_exact(m) {
            out.extend(chunk.iter().zip(bv).map(|(&x, &y)| f(x, y)));
        }
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let op = match kind {
            OpKind::Add => Op::Add(a, b),
            OpKind::Sub => Op::Sub(a, b),
            _ => Op::Hadamard(a, b),
        };
        self.push(kind, value, op, &[a, b])
    }

    /// `a + b`; `b` may have a shape equal to a trailing suffix of `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Sub, a, b, |x, y| x - y)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Hadamard, a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::lit(s);
        let value = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x).data().iter().map(|&v| v * s).collect(),
        )?;
        self.push(OpKind::Scale, value, Op::Scale(x, s), &[x])
    }

    /// `x: [N, d]`, `idx` of length `M·k` → `[M, k, d]` with row `idx[m·k + j]` at `(m, j)`.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>, k: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || k == 0 || idx.is_empty() || !idx.len().is_multiple_of(k) {
            return Err(Error::contract(
                "gather_rows",
                format!("features {sx:?} with {} indices, k = {k}", idx.len()),
            ));
        }
        let (n, d) = (sx[0], sx[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::contract(
                "gather_rows",
                format!("index {bad} out of range for {n} rows"),
            ));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            out.extend_from_slice(&xv[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![idx.len() / k, k, d], out)?;
        self.push(OpKind::GatherRows, value, Op::GatherRows { x, idx }, &[x])
    }

    pub fn concat_last_axis(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat_last_axis", "no inputs"))?;
        let lead = {
            let s = self.shape(first);
            if s.is_empty() {
                return Err(Error::contract("concat_last_axis", "scalar input"));
            }
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::contract(
                    "concat_last_axis",
                    format!("leading shape {:?} differs from {lead:?}", s),
                ));
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        self.push(
            OpKind::ConcatLastAxis,
            value,
            Op::Concat(parts.to_vec()),
            parts,
        )
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::contract(
                "mean_axis",
                format!("axis {axis} out of range for shape {s:?}"),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let inv = T::one() / T::lit(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for a in 0..len {
                let base = (o * len + a) * inner;
                for (d, &v) in dst.iter_mut().zip(&xv[base..base + inner]) {
                    *d = *d + v;
                }
            }
            for d in dst.iter_mut() {
                *d = *d * inv;
            }
        }
        let mut shape = s;
        shape.remove(axis);
        let value = Tensor::new(shape, out)?;
        self.push(OpKind::MeanAxis, value, Op::MeanAxis { x, axis }, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let s = T::lit(slope);
        let value = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x)
                .data()
                .iter()
                .map(|&v| if v > T::zero() { v } else { v * s })
                .collect(),
        )?;
        self.push(OpKind::LeakyRelu, value, Op::LeakyRelu(x, s), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x).data().iter().map(|v| v.tanh()).collect(),
        )?;
        self.push(OpKind::Tanh, value, Op::Tanh(x), &[x])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::contract(
                op,
                format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// Scalar `mean |a - b|`.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1_loss", a, b)?;
        let v = mean_abs_diff(self.value(a).data(), self.value(b).data());
        self.push(OpKind::L1Loss, Tensor::scalar(v), Op::L1Loss(a, b), &[a, b])
    }

    /// Scalar `mean (a - b)²`.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse_loss", a, b)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let total: T = av.iter().zip(bv).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let v = total / T::lit(av.len() as f64);
        self.push(
            OpKind::MseLoss,
            Tensor::scalar(v),
            Op::MseLoss(a, b),
            &[a, b],
        )
    }

    /// Minimum over the last axis. Gradient goes to the first minimal element only.
    pub fn min_reduce_last(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() {
            return Err(Error::contract("min_reduce_last", "scalar input"));
        }
        let m = s[s.len() - 1];
        let xv = self.value(x).data();
        let mut argmin = Vec::with_capacity(xv.len() / m);
        let mut out = Vec::with_capacity(xv.len() / m);
        for row in xv.chunks_exact(m) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v < row[best] {
                    best = j;
                }
            }
            argmin.push(best);
            out.push(row[best]);
        }
        let value = Tensor::new(s[..s.len() - 1].to_vec(), out)?;
        self.push(
            OpKind::MinReduceLast,
            value,
            Op::MinReduceLast { x, argmin },
            &[x],
        )
    }

    /// Euclidean distances between rows: `a: [N, c]`, `b: [M, c]` → `[N, M]`.
    pub fn pairwise_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::contract(
                "pairwise_distance",
                format!("incompatible point sets {sa:?} and {sb:?}"),
            ));
        }
        let (n, m, c) = (sa[0], sb[0], sa[1]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let pa = &av[i * c..(i + 1) * c];
            for j in 0..m {
                let pb = &bv[j * c..(j + 1) * c];
                let sq: T = pa.iter().zip(pb).map(|(&x, &y)| (x - y) * (x - y)).sum();
                out.push(sq.sqrt());
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        self.push(
            OpKind::PairwiseDistance,
            value,
            Op::PairwiseDistance(a, b),
            &[a, b],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v: T = self.value(x).data().iter().copied().sum();
        self.push(OpKind::Sum, Tensor::scalar(v), Op::Sum(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = Tensor::new(shape, self.value(x).data().to_vec())?;
        self.push(OpKind::Reshape, value, Op::Reshape(x), &[x])
    }

    /// Repeats a `[d]` or `[1, d]` tensor into `[n, d]`.
    pub fn tile_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let s = self.shape(x);
        let d = match s {
            [d] | [1, d] => *d,
            _ => {
                return Err(Error::contract(
                    "tile_rows",
                    format!("expected [d] or [1, d], got {s:?}"),
                ))
            }
        };
        let row = self.value(x).data();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(row);
        }
        let value = Tensor::new(vec![n, d], out)?;
        self.push(OpKind::TileRows, value, Op::TileRows(x), &[x])
    }

    /// Clears all gradients so `backward` may run again.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    /// Reverse sweep from a scalar loss. Errors if called twice without [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract(
                "backward",
                "gradients already populated; call zero_grad before a second backward",
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let shape = self.shape(loss).to_vec();
        self.nodes[loss.0].grad = Some(Tensor::full(shape, T::one()));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad || matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(grad) = self.nodes[id].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(id, grad.data());
            self.nodes[id].grad = Some(grad);
            for (v, g) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NumericFault {
                        op: self.kind_of(id).name(),
                    });
                }
                let node = &mut self.nodes[v.0];
                match node.grad.as_mut() {
                    Some(acc) => {
                        for (a, &x) in acc.data_mut().iter_mut().zip(&g) {
                            *a = *a + x;
                        }
                    }
                    None => {
                        node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                    }
                }
            }
        }
        Ok(())
    }

    fn kind_of(&self, id: usize) -> OpKind {
        match &self.nodes[id].op {
            Op::Leaf => unreachable!("leaf has no op kind"),
            Op::MatMul(..) => OpKind::MatMul,
            Op::SparseMatMul(..) => OpKind::SparseMatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::Scale(..) => OpKind::Scale,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::Concat(..) => OpKind::ConcatLastAxis,
            Op::MeanAxis { .. } => OpKind::MeanAxis,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Tanh(..) => OpKind::Tanh,
            Op::L1Loss(..) => OpKind::L1Loss,
            Op::MseLoss(..) => OpKind::MseLoss,
            Op::MinReduceLast { .. } => OpKind::MinReduceLast,
            Op::PairwiseDistance(..) => OpKind::PairwiseDistance,
            Op::Sum(..) => OpKind::Sum,
            Op::Reshape(..) => OpKind::Reshape,
            Op::TileRows(..) => OpKind::TileRows,
        }
    }

    /// Gradient contributions of node `id` to each of its inputs.
    fn local_grads(&self, id: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[id];
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let sb = self.shape(*b);
                let (q, r) = (sb[0], sb[1]);
                let (av, bv) = (val(*a), val(*b));
                let rows = av.len() / q;
                let mut out = Vec::new();
                let gm = MatView::new(g, rows, r);
                if wants(*a) {
                    let mut ga = vec![T::zero(); av.len()];
                    gemm_acc(gm, MatView::new(bv, q, r).t(), &mut ga);
                    out.push((*a, ga));
                }
                if wants(*b) {
                    let mut gb = vec![T::zero(); bv.len()];
                    gemm_acc(MatView::new(av, rows, q).t(), gm, &mut gb);
                    out.push((*b, gb));
                }
                out
            }
            Op::SparseMatMul(p, x) => {
                let d = self.shape(*x)[1];
                let mut gx = vec![T::zero(); val(*x).len()];
                for (r, c, w) in p.entries() {
                    let w = T::lit(w);
                    for (o, &s) in gx[c * d..(c + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                    {
                        *o = *o + w * s;
                    }
                }
                vec![(*x, gx)]
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                let m = val(*b).len();
                let mut gb = vec![T::zero(); m];
                for chunk in g.chunks_exact(m) {
                    for (o, &x) in gb.iter_mut().zip(chunk) {
                        *o = *o + sign * x;
                    }
                }
                vec![(*a, g.to_vec()), (*b, gb)]
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let m = bv.len();
                let mut ga = Vec::with_capacity(g.len());
                let mut gb = vec![T::zero(); m];
                for (gc, ac) in g.chunks_exact(m).zip(av.chunks_exact(m)) {
                    ga.extend(gc.iter().zip(bv).map(|(&x, &y)| x * y));
                    for ((o, &x), &y) in gb.iter_mut().zip(gc).zip(ac) {
                        *o = *o + x * y;
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, s) => vec![(*x, g.iter().map(|&v| v * *s).collect())],
            Op::GatherRows { x, idx } => {
                let d = self.shape(*x)[1];
                let mut gx = vec![T::zero(); val(*x).len()];
                for (slot, &i) in idx.iter().enumerate() {
                    for (o, &s) in gx[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(&g[slot * d..(slot + 1) * d])
                    {
                        *o = *o + s;
                    }
                }
                vec![(*x, gx)]
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|&p| *self.shape(p).last().expect("rank >= 1"))
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut out: Vec<(Var, Vec<T>)> = parts
                    .iter()
                    .zip(&widths)
                    .map(|(&p, &w)| (p, Vec::with_capacity(rows * w)))
                    .collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for ((_, buf), &w) in out.iter_mut().zip(&widths) {
                        buf.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                out
            }
            Op::MeanAxis { x, axis } => {
                let s = self.shape(*x);
                let outer: usize = s[..*axis].iter().product();
                let len = s[*axis];
                let inner: usize = s[*axis + 1..].iter().product();
                let inv = T::one() / T::lit(len as f64);
                let mut gx = vec![T::zero(); val(*x).len()];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        for (d, &v) in gx[base..base + inner].iter_mut().zip(src) {
                            *d = v * inv;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::LeakyRelu(x, slope) => {
                let gx = g
                    .iter()
                    .zip(val(*x))
                    .map(|(&gi, &xi)| if xi > T::zero() { gi } else { gi * *slope })
                    .collect();
                vec![(*x, gx)]
            }
            Op::Tanh(x) => {
                let gx = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gi, &y)| gi * (T::one() - y * y))
                    .collect();
                vec![(*x, gx)]
            }
            Op::L1Loss(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let scale = g[0] / T::lit(av.len() as f64);
                let ga: Vec<T> = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| {
                        if x > y {
                            scale
                        } else if x < y {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let gb = ga.iter().map(|&v| -v).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::MseLoss(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let scale = T::lit(2.0) * g[0] / T::lit(av.len() as f64);
                let ga: Vec<T> = av.iter().zip(bv).map(|(&x, &y)| scale * (x - y)).collect();
                let gb = ga.iter().map(|&v| -v).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::MinReduceLast { x, argmin } => {
                let m = *self.shape(*x).last().expect("rank >= 1");
                let mut gx = vec![T::zero(); val(*x).len()];
                for (row, (&j, &gi)) in argmin.iter().zip(g).enumerate() {
                    gx[row * m + j] = gi;
                }
                vec![(*x, gx)]
            }
            Op::PairwiseDistance(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, m, c) = (sa[0], sb[0], sa[1]);
                let (av, bv) = (val(*a), val(*b));
                let dist = node.value.data();
                let mut ga = vec![T::zero(); av.len()];
                let mut gb = vec![T::zero(); bv.len()];
                for i in 0..n {
                    for j in 0..m {
                        let gij = g[i * m + j];
                        let dij = dist[i * m + j];
                        if gij == T::zero() || dij == T::zero() {
                            continue;
                        }
                        let w = gij / dij;
                        for t in 0..c {
                            let diff = w * (av[i * c + t] - bv[j * c + t]);
                            ga[i * c + t] = ga[i * c + t] + diff;
                            gb[j * c + t] = gb[j * c + t] - diff;
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).len()])],
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::TileRows(x) => {
                let d = val(*x).len();
                let mut gx = vec![T::zero(); d];
                for row in g.chunks_exact(d) {
                    for (o, &v) in gx.iter_mut().zip(row) {
                        *o = *o + v;
                    }
                }
                vec![(*x, gx)]
            }
        }
    }
}
