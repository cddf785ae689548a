//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] is an append-only list of nodes. Every operation pushes one node
//! whose parents already live on the tape, so node order is a topological order
//! and [`Tape::backward`] is a single reverse sweep.
//!
//! Leaves come in two flavours: parameters ([`Tape::param`]) accumulate
//! gradients, constants ([`Tape::constant`]) do not. Any node computed only from
//! constants is itself constant and is skipped during the sweep. [`Tape::detach`]
//! copies a value into a fresh constant, cutting the gradient path.

use crate::error::{DlmeError, Result};
use crate::kernels::KernelParams;
use crate::tensor::matrix::{gemm, Matrix};

/// Floor applied to squared distances before the square root.
pub const DIST_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Relu(NodeId),
    PairwiseDist(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine(NodeId, f64),
    Ln(NodeId),
    StudentT(NodeId, KernelParams),
    Gaussian(NodeId, f64),
    Clamp(NodeId, f64, f64),
    MeanOffDiag(NodeId),
    Sum(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
    grad: Option<Matrix>,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Trainable leaf: receives gradients in [`Tape::backward`].
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Same value as `x`, but no gradient flows back through it.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a parameter leaf, if any backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_derived(&mut self, op: Op, value: Matrix, parents: &[NodeId]) -> NodeId {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(op, value, requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push_derived(Op::MatMul(a, b), value, &[a, b]))
    }

    /// Adds a 1×c row vector to every row of an r×c matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(DlmeError::dim(
                "add_row",
                format!(
                    "cannot broadcast {}x{} over {}x{}",
                    rv.rows(),
                    rv.cols(),
                    av.rows(),
                    av.cols()
                ),
            ));
        }
        let mut value = av.clone();
        let bias = rv.as_slice().to_vec();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(&bias) {
                *v += b;
            }
        }
        Ok(self.push_derived(Op::AddRow(a, row), value, &[a, row]))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push_derived(Op::Relu(a), value, &[a])
    }

    /// Euclidean distances between all rows: `D_ij = sqrt(max(|a_i - a_j|^2, DIST_EPS))`
    /// off the diagonal and exactly zero on it.
    pub fn pairwise_dist(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let n = x.rows();
        let mut value = Matrix::zeros(n, n);
        for i in 0..n {
            let xi = x.row(i);
            for j in (i + 1)..n {
                let sq = squared_distance(xi, x.row(j));
                let d = sq.max(DIST_EPS).sqrt();
                value[(i, j)] = d;
                value[(j, i)] = d;
            }
        }
        self.push_derived(Op::PairwiseDist(a), value, &[a])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push_derived(Op::Add(a, b), value, &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push_derived(Op::Sub(a, b), value, &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push_derived(Op::Mul(a, b), value, &[a, b]))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> NodeId {
        let value = self.value(a).map(|v| scale * v + shift);
        self.push_derived(Op::Affine(a, scale), value, &[a])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.affine(a, factor, 0.0)
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        if let Some(bad) = x.as_slice().iter().find(|v| !(**v > 0.0)) {
            return Err(DlmeError::Domain(format!("ln of non-positive value {bad}")));
        }
        let value = x.map(f64::ln);
        Ok(self.push_derived(Op::Ln(a), value, &[a]))
    }

    /// Student-t similarity applied elementwise to a matrix of distances.
    pub fn student_t(&mut self, a: NodeId, params: KernelParams) -> Result<NodeId> {
        let x = self.value(a);
        if let Some(bad) = x.as_slice().iter().find(|v| !(**v >= 0.0)) {
            return Err(DlmeError::Contract(format!(
                "t-kernel needs non-negative distances, got {bad}"
            )));
        }
        let value = x.map(|d| params.eval_unchecked(d));
        Ok(self.push_derived(Op::StudentT(a, params), value, &[a]))
    }

    /// Gaussian density with standard deviation `sigma`, elementwise over distances.
    pub fn gaussian(&mut self, a: NodeId, sigma: f64) -> Result<NodeId> {
        if !(sigma > 0.0) {
            return Err(DlmeError::Contract(format!(
                "gaussian sigma must be positive, got {sigma}"
            )));
        }
        let x = self.value(a);
        if let Some(bad) = x.as_slice().iter().find(|v| !(**v >= 0.0)) {
            return Err(DlmeError::Contract(format!(
                "gaussian kernel needs non-negative distances, got {bad}"
            )));
        }
        let value = x.map(|d| crate::kernels::gaussian_density(d, sigma));
        Ok(self.push_derived(Op::Gaussian(a, sigma), value, &[a]))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero wherever the clamp is active.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        self.push_derived(Op::Clamp(a, lo, hi), value, &[a])
    }

    /// Mean over the off-diagonal entries of a square matrix (n ≥ 2).
    pub fn mean_off_diag(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        let n = x.rows();
        if x.cols() != n || n < 2 {
            return Err(DlmeError::dim(
                "mean_off_diag",
                format!("need a square matrix with n >= 2, got {}x{}", n, x.cols()),
            ));
        }
        let mut total = 0.0;
        for i in 0..n {
            for (j, v) in x.row(i).iter().enumerate() {
                if i != j {
                    total += v;
                }
            }
        }
        let value = Matrix::scalar(total / (n * (n - 1)) as f64);
        Ok(self.push_derived(Op::MeanOffDiag(a), value, &[a]))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::scalar(self.value(a).sum());
        self.push_derived(Op::Sum(a), value, &[a])
    }

    /// Accumulates `d loss / d param` into every parameter leaf reachable from `loss`.
    ///
    /// Leaf gradients accumulate across calls; call [`Tape::zero_grads`] between
    /// passes to start fresh.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(DlmeError::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {
                    let node = &mut self.nodes[id];
                    match &mut node.grad {
                        Some(acc) => acc.add_scaled(&g, 1.0)?,
                        None => node.grad = Some(g),
                    }
                }
                Op::MatMul(a, b) => {
                    if self.requires_grad(a) {
                        let bv = self.value(b);
                        let mut ga = Matrix::zeros(g.rows(), bv.rows());
                        gemm(1.0, &g, false, bv, true, 0.0, &mut ga);
                        accumulate(&mut adj, a, ga)?;
                    }
                    if self.requires_grad(b) {
                        let av = self.value(a);
                        let mut gb = Matrix::zeros(av.cols(), g.cols());
                        gemm(1.0, av, true, &g, false, 0.0, &mut gb);
                        accumulate(&mut adj, b, gb)?;
                    }
                }
                Op::AddRow(a, row) => {
                    if self.requires_grad(row) {
                        let mut gr = Matrix::zeros(1, g.cols());
                        for r in g.row_iter() {
                            for (acc, v) in gr.as_mut_slice().iter_mut().zip(r) {
                                *acc += v;
                            }
                        }
                        accumulate(&mut adj, row, gr)?;
                    }
                    if self.requires_grad(a) {
                        accumulate(&mut adj, a, g)?;
                    }
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut adj, a, ga)?;
                }
                Op::PairwiseDist(a) => {
                    let ga = self.pairwise_dist_grad(a, NodeId(id), &g);
                    accumulate(&mut adj, a, ga)?;
                }
                Op::Add(a, b) => {
                    if self.requires_grad(a) {
                        accumulate(&mut adj, a, g.clone())?;
                    }
                    if self.requires_grad(b) {
                        accumulate(&mut adj, b, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if self.requires_grad(a) {
                        accumulate(&mut adj, a, g.clone())?;
                    }
                    if self.requires_grad(b) {
                        accumulate(&mut adj, b, g.map(|v| -v))?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.requires_grad(a) {
                        let ga = g.zip_map(self.value(b), |gv, y| gv * y)?;
                        accumulate(&mut adj, a, ga)?;
                    }
                    if self.requires_grad(b) {
                        let gb = g.zip_map(self.value(a), |gv, x| gv * x)?;
                        accumulate(&mut adj, b, gb)?;
                    }
                }
                Op::Affine(a, scale) => {
                    accumulate(&mut adj, a, g.map(|v| v * scale))?;
                }
                Op::Ln(a) => {
                    let ga = g.zip_map(self.value(a), |gv, x| gv / x)?;
                    accumulate(&mut adj, a, ga)?;
                }
                Op::StudentT(a, params) => {
                    let nu = params.nu();
                    let out = &self.nodes[id].value;
                    let mut ga = g.zip_map(out, |gv, k| gv * k)?;
                    for (v, &d) in ga.as_mut_slice().iter_mut().zip(self.value(a).as_slice()) {
                        *v *= -(nu + 1.0) * d / (nu + d * d);
                    }
                    accumulate(&mut adj, a, ga)?;
                }
                Op::Gaussian(a, sigma) => {
                    let out = &self.nodes[id].value;
                    let mut ga = g.zip_map(out, |gv, k| gv * k)?;
                    for (v, &d) in ga.as_mut_slice().iter_mut().zip(self.value(a).as_slice()) {
                        *v *= -d / (sigma * sigma);
                    }
                    accumulate(&mut adj, a, ga)?;
                }
                Op::Clamp(a, lo, hi) => {
                    let ga = g.zip_map(self.value(a), |gv, x| {
                        if x > lo && x < hi {
                            gv
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut adj, a, ga)?;
                }
                Op::MeanOffDiag(a) => {
                    let n = self.value(a).rows();
                    let w = g.item()? / (n * (n - 1)) as f64;
                    let mut ga = Matrix::filled(n, n, w);
                    for i in 0..n {
                        ga[(i, i)] = 0.0;
                    }
                    accumulate(&mut adj, a, ga)?;
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(a).shape();
                    accumulate(&mut adj, a, Matrix::filled(r, c, g.item()?))?;
                }
            }
        }
        Ok(())
    }

    fn pairwise_dist_grad(&self, a: NodeId, out: NodeId, g: &Matrix) -> Matrix {
        let x = self.value(a);
        let dist = self.value(out);
        let n = x.rows();
        // dD_ij/da_i = (a_i - a_j) / D_ij, zero where the distance floor is active.
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                if squared_distance(x.row(i), x.row(j)) <= DIST_EPS {
                    continue;
                }
                let v = (g[(i, j)] + g[(j, i)]) / dist[(i, j)];
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        let mut ga = Matrix::zeros(n, x.cols());
        gemm(-1.0, &w, false, x, false, 0.0, &mut ga);
        for i in 0..n {
            let s: f64 = w.row(i).iter().sum();
            for (gv, xv) in ga.row_mut(i).iter_mut().zip(x.row(i)) {
                *gv += s * xv;
            }
        }
        ga
    }
}

fn accumulate(adj: &mut [Option<Matrix>], id: NodeId, g: Matrix) -> Result<()> {
    match &mut adj[id.0] {
        Some(acc) => acc.add_scaled(&g, 1.0),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
