//! Reverse-mode differentiation over a recorded tape.
//!
//! The engine is deliberately small: it supports exactly the primitive set
//! the crate's objectives need (dense products, elementwise maps, gathers,
//! group softmax, the analytic ReLU tangent kernel, and a differentiable
//! positive-definite solve), each with a hand-derived adjoint. Values are
//! computed eagerly as nodes are recorded; `backward` then walks the tape in
//! exact reverse order.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::matrix::{cholesky, cholesky_solve_factored, Matrix};
use crate::numerics::params::Params;

/// Feature-group layout of a binarized row: contiguous `[offset, offset+size)`
/// slices, one per original column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureGroups {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl FeatureGroups {
    pub fn new(sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for &s in &sizes {
            offsets.push(total);
            total += s;
        }
        FeatureGroups {
            sizes,
            offsets,
            total,
        }
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn total_width(&self) -> usize {
        self.total
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.offsets.iter().copied().zip(self.sizes.iter().copied())
    }

    pub fn size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    /// Leaf value; `param` links it to a parameter slot for gradient collection.
    Leaf { param: Option<usize> },
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    /// (n x k) + (1 x k), broadcasting the row vector over all rows.
    AddRowVec(NodeId, NodeId),
    Relu(NodeId),
    /// Heaviside step of the input. Backward contributes nothing: the step is
    /// piecewise constant almost everywhere.
    Step,
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    GatherRows(NodeId, Arc<Vec<usize>>),
    GatherCols(NodeId, Arc<Vec<usize>>),
    Reshape(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// 1 x k row of column sums.
    SumCols(NodeId),
    RowSoftmax(NodeId),
    GroupSoftmax(NodeId, Arc<FeatureGroups>),
    /// Mean over rows of -ln p[i, label_i], probabilities clamped at 1e-12.
    NllRows(NodeId, Arc<Vec<usize>>),
    /// Weighted per-group negative log2-likelihood of one-hot targets
    /// (the reconstruction objective), mean over rows.
    GroupNllBits {
        probs: NodeId,
        target: Arc<Matrix>,
        groups: Arc<FeatureGroups>,
    },
    /// Analytic depth-1 ReLU neural-tangent kernel between row sets.
    Ntk(NodeId, NodeId),
    /// x = a^{-1} b for symmetric positive definite a.
    CholeskySolve(NodeId, NodeId),
    /// 1 - cosine similarity between the flattened input and a constant.
    CosineDistTo(NodeId, Arc<Matrix>),
}

struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Per-parameter gradients, aligned with a [`Params`] store. Parameters the
/// loss never touched hold zero matrices of the parameter's shape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(params: &Params) -> Self {
        Gradients {
            grads: (0..params.len())
                .map(|i| {
                    let (r, c) = params.value(i).shape();
                    Matrix::zeros(r, c)
                })
                .collect(),
        }
    }

    pub fn get(&self, param: usize) -> &Matrix {
        &self.grads[param]
    }

    pub fn get_mut(&mut self, param: usize) -> &mut Matrix {
        &mut self.grads[param]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.grads.iter()
    }
}

/// Recorded computation: ops, forward values, and the parameter links needed
/// to assemble gradients.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Records a constant leaf. Gradients never flow into it.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf { param: None }, value, false)
    }

    /// Records one trainable parameter leaf, snapshotting its current value.
    pub fn param(&mut self, params: &Params, index: usize) -> NodeId {
        self.push(
            Op::Leaf {
                param: Some(index),
            },
            params.value(index).clone(),
            true,
        )
    }

    /// Registers every parameter in `params`; result is indexed by parameter id.
    pub fn params(&mut self, params: &Params) -> Vec<NodeId> {
        (0..params.len()).map(|i| self.param(params, i)).collect()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMul(a, b), v, g))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let g = self.ng(a);
        self.push(Op::Transpose(a), v, g)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Add(a, b), v, g))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Sub(a, b), v, g))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Hadamard(a, b), v, g))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        let g = self.ng(a);
        self.push(Op::Scale(a, c), v, g)
    }

    pub fn add_row_vec(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(a).shape();
        let rv = self.value(row);
        if rv.shape() != (1, c) {
            return Err(Error::Dimension(format!(
                "add_row_vec: {}x{} + {}x{}",
                r,
                c,
                rv.rows(),
                rv.cols()
            )));
        }
        let rowvals = self.value(row).row(0).to_vec();
        let mut v = self.value(a).clone();
        for i in 0..r {
            for (x, &b) in v.row_mut(i).iter_mut().zip(&rowvals) {
                *x += b;
            }
        }
        let g = self.ng(a) || self.ng(row);
        Ok(self.push(Op::AddRowVec(a, row), v, g))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        let g = self.ng(a);
        self.push(Op::Relu(a), v, g)
    }

    pub fn step(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        self.push(Op::Step, v, false)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Empty("concat_cols of zero nodes".into()));
        }
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Matrix::zeros(rows, total);
        let mut col0 = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(Error::Dimension("concat_cols row mismatch".into()));
            }
            for r in 0..rows {
                let dst = &mut v.row_mut(r)[col0..col0 + m.cols()];
                dst.copy_from_slice(self.value(p).row(r));
            }
            col0 += self.value(p).cols();
        }
        let g = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v, g))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Empty("concat_rows of zero nodes".into()));
        }
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::vstack(&mats)?;
        let g = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v, g))
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: Arc<Vec<usize>>) -> Result<NodeId> {
        let v = self.value(a).gather_rows(&indices)?;
        let g = self.ng(a);
        Ok(self.push(Op::GatherRows(a, indices), v, g))
    }

    pub fn gather_cols(&mut self, a: NodeId, indices: Arc<Vec<usize>>) -> Result<NodeId> {
        let m = self.value(a);
        let mut v = Matrix::zeros(m.rows(), indices.len());
        for r in 0..m.rows() {
            for (j, &c) in indices.iter().enumerate() {
                if c >= m.cols() {
                    return Err(Error::Dimension(format!(
                        "column index {} out of {}",
                        c,
                        m.cols()
                    )));
                }
                v.set(r, j, m.at(r, c));
            }
        }
        let g = self.ng(a);
        Ok(self.push(Op::GatherCols(a, indices), v, g))
    }

    /// Reinterprets the row-major buffer with a new shape of equal size.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let m = self.value(a);
        if m.rows() * m.cols() != rows * cols {
            return Err(Error::Dimension(format!(
                "reshape {}x{} to {}x{}",
                m.rows(),
                m.cols(),
                rows,
                cols
            )));
        }
        let v = Matrix::from_vec(rows, cols, m.data().to_vec())?;
        let g = self.ng(a);
        Ok(self.push(Op::Reshape(a), v, g))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::from_vec(1, 1, vec![self.value(a).sum()]).unwrap();
        let g = self.ng(a);
        self.push(Op::SumAll(a), v, g)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let n = (m.rows() * m.cols()) as f64;
        let v = Matrix::from_vec(1, 1, vec![m.sum() / n]).unwrap();
        let g = self.ng(a);
        self.push(Op::MeanAll(a), v, g)
    }

    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let mut v = Matrix::zeros(1, m.cols());
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                v.set(0, c, v.at(0, c) + m.at(r, c));
            }
        }
        let g = self.ng(a);
        self.push(Op::SumCols(a), v, g)
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let mut v = m.clone();
        for r in 0..v.rows() {
            softmax_slice(v.row_mut(r));
        }
        let g = self.ng(a);
        self.push(Op::RowSoftmax(a), v, g)
    }

    pub fn group_softmax(&mut self, a: NodeId, groups: Arc<FeatureGroups>) -> Result<NodeId> {
        let m = self.value(a);
        if m.cols() != groups.total_width() {
            return Err(Error::Dimension(format!(
                "group_softmax on width {} with groups totalling {}",
                m.cols(),
                groups.total_width()
            )));
        }
        let mut v = m.clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            for (off, size) in groups.iter() {
                softmax_slice(&mut row[off..off + size]);
            }
        }
        let g = self.ng(a);
        Ok(self.push(Op::GroupSoftmax(a, groups), v, g))
    }

    /// Mean cross-entropy (nats) of per-row class probabilities against labels.
    pub fn nll_rows(&mut self, probs: NodeId, labels: Arc<Vec<usize>>) -> Result<NodeId> {
        let m = self.value(probs);
        if labels.len() != m.rows() {
            return Err(Error::Dimension("nll_rows label count".into()));
        }
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= m.cols() {
                return Err(Error::Contract(format!("label {} out of {}", y, m.cols())));
            }
            total += -(m.at(r, y).max(PROB_FLOOR)).ln();
        }
        let v = Matrix::from_vec(1, 1, vec![total / m.rows() as f64])?;
        let g = self.ng(probs);
        Ok(self.push(Op::NllRows(probs, labels), v, g))
    }

    /// The reconstruction objective: mean over rows of the group-weighted
    /// cross-entropy in bits between one-hot targets and probabilities.
    pub fn group_nll_bits(
        &mut self,
        probs: NodeId,
        target: Arc<Matrix>,
        groups: Arc<FeatureGroups>,
    ) -> Result<NodeId> {
        let p = self.value(probs);
        if p.shape() != target.shape() {
            return Err(Error::Dimension("group_nll_bits shape mismatch".into()));
        }
        let mut total = 0.0;
        for r in 0..p.rows() {
            total += row_group_nll_bits(p.row(r), target.row(r), &groups)?;
        }
        let v = Matrix::from_vec(1, 1, vec![total / p.rows() as f64])?;
        let g = self.ng(probs);
        Ok(self.push(
            Op::GroupNllBits {
                probs,
                target,
                groups,
            },
            v,
            g,
        ))
    }

    pub fn ntk(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ma, mb) = (self.value(a), self.value(b));
        if ma.cols() != mb.cols() {
            return Err(Error::Dimension(format!(
                "ntk between widths {} and {}",
                ma.cols(),
                mb.cols()
            )));
        }
        let v = ntk_forward(ma, mb);
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Ntk(a, b), v, g))
    }

    pub fn cholesky_solve(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let l = cholesky(self.value(a))?;
        let v = cholesky_solve_factored(&l, self.value(b))?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(Op::CholeskySolve(a, b), v, g))
    }

    pub fn cosine_dist_to(&mut self, a: NodeId, target: Arc<Matrix>) -> Result<NodeId> {
        let m = self.value(a);
        if m.shape() != target.shape() {
            return Err(Error::Dimension("cosine_dist_to shape mismatch".into()));
        }
        let v = Matrix::from_vec(1, 1, vec![cosine_distance(m, &target)])?;
        let g = self.ng(a);
        Ok(self.push(Op::CosineDistTo(a, target), v, g))
    }

    /// Reverse pass from a scalar loss node. Returns gradients aligned with
    /// `params`; parameters the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: NodeId, params: &Params) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            if adj[idx].is_none() {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf { .. }) {
                continue; // leaf adjoints are collected below
            }
            let g = adj[idx].take().expect("checked above");
            self.accumulate(idx, &g, &mut adj)?;
        }

        let mut out = Gradients::zeros_like(params);
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(p) } = node.op {
                if let Some(g) = &adj[idx] {
                    out.get_mut(p).add_scaled(g, 1.0)?;
                }
            }
        }
        Ok(out)
    }

    fn bump(&self, adj: &mut [Option<Matrix>], target: NodeId, delta: &Matrix) -> Result<()> {
        if !self.nodes[target.0].needs_grad {
            return Ok(());
        }
        match &mut adj[target.0] {
            Some(g) => g.add_scaled(delta, 1.0)?,
            slot @ None => *slot = Some(delta.clone()),
        }
        Ok(())
    }

    fn accumulate(&self, idx: usize, g: &Matrix, adj: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let da = g.matmul(&vb.transpose())?;
                    self.bump(adj, *a, &da)?;
                }
                if self.ng(*b) {
                    let db = va.transpose().matmul(g)?;
                    self.bump(adj, *b, &db)?;
                }
            }
            Op::Transpose(a) => self.bump(adj, *a, &g.transpose())?,
            Op::Add(a, b) => {
                self.bump(adj, *a, g)?;
                self.bump(adj, *b, g)?;
            }
            Op::Sub(a, b) => {
                self.bump(adj, *a, g)?;
                self.bump(adj, *b, &g.scale(-1.0))?;
            }
            Op::Hadamard(a, b) => {
                if self.ng(*a) {
                    self.bump(adj, *a, &g.hadamard(self.value(*b))?)?;
                }
                if self.ng(*b) {
                    self.bump(adj, *b, &g.hadamard(self.value(*a))?)?;
                }
            }
            Op::Scale(a, c) => self.bump(adj, *a, &g.scale(*c))?,
            Op::AddRowVec(a, row) => {
                self.bump(adj, *a, g)?;
                if self.ng(*row) {
                    let mut rv = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            rv.set(0, c, rv.at(0, c) + g.at(r, c));
                        }
                    }
                    self.bump(adj, *row, &rv)?;
                }
            }
            Op::Relu(a) => {
                let mask = self.value(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                self.bump(adj, *a, &g.hadamard(&mask)?)?;
            }
            Op::Step => {}
            Op::ConcatCols(parts) => {
                let mut col0 = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.ng(p) {
                        let mut dp = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[col0..col0 + w]);
                        }
                        self.bump(adj, p, &dp)?;
                    }
                    col0 += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut row0 = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    if self.ng(p) {
                        let mut dp = Matrix::zeros(h, g.cols());
                        for r in 0..h {
                            dp.row_mut(r).copy_from_slice(g.row(row0 + r));
                        }
                        self.bump(adj, p, &dp)?;
                    }
                    row0 += h;
                }
            }
            Op::GatherRows(a, indices) => {
                let (r, c) = self.value(*a).shape();
                let mut da = Matrix::zeros(r, c);
                for (out_r, &src_r) in indices.iter().enumerate() {
                    for cc in 0..c {
                        da.set(src_r, cc, da.at(src_r, cc) + g.at(out_r, cc));
                    }
                }
                self.bump(adj, *a, &da)?;
            }
            Op::GatherCols(a, indices) => {
                let (r, c) = self.value(*a).shape();
                let mut da = Matrix::zeros(r, c);
                for rr in 0..r {
                    for (out_c, &src_c) in indices.iter().enumerate() {
                        da.set(rr, src_c, da.at(rr, src_c) + g.at(rr, out_c));
                    }
                }
                self.bump(adj, *a, &da)?;
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                let da = Matrix::from_vec(r, c, g.data().to_vec())?;
                self.bump(adj, *a, &da)?;
            }
            Op::SumAll(a) => {
                let (r, c) = self.value(*a).shape();
                let da = Matrix::filled(r, c, g.at(0, 0));
                self.bump(adj, *a, &da)?;
            }
            Op::MeanAll(a) => {
                let (r, c) = self.value(*a).shape();
                let da = Matrix::filled(r, c, g.at(0, 0) / (r * c) as f64);
                self.bump(adj, *a, &da)?;
            }
            Op::SumCols(a) => {
                let (r, c) = self.value(*a).shape();
                let mut da = Matrix::zeros(r, c);
                for rr in 0..r {
                    da.row_mut(rr).copy_from_slice(g.row(0));
                }
                self.bump(adj, *a, &da)?;
            }
            Op::RowSoftmax(a) => {
                let p = &node.value;
                let mut da = Matrix::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    softmax_backward_slice(p.row(r), g.row(r), da.row_mut(r));
                }
                self.bump(adj, *a, &da)?;
            }
            Op::GroupSoftmax(a, groups) => {
                let p = &node.value;
                let mut da = Matrix::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    for (off, size) in groups.iter() {
                        softmax_backward_slice(
                            &p.row(r)[off..off + size],
                            &g.row(r)[off..off + size],
                            &mut da.row_mut(r)[off..off + size],
                        );
                    }
                }
                self.bump(adj, *a, &da)?;
            }
            Op::NllRows(probs, labels) => {
                let p = self.value(*probs);
                let gs = g.at(0, 0);
                let n = p.rows() as f64;
                let mut dp = Matrix::zeros(p.rows(), p.cols());
                for (r, &y) in labels.iter().enumerate() {
                    let pv = p.at(r, y);
                    if pv > PROB_FLOOR {
                        dp.set(r, y, -gs / (n * pv));
                    }
                }
                self.bump(adj, *probs, &dp)?;
            }
            Op::GroupNllBits {
                probs,
                target,
                groups,
            } => {
                let p = self.value(*probs);
                let gs = g.at(0, 0);
                let n_rows = p.rows() as f64;
                let n_feat = groups.count() as f64;
                let ln2 = std::f64::consts::LN_2;
                let mut dp = Matrix::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    for (off, size) in groups.iter() {
                        if size < 2 {
                            continue;
                        }
                        let w = 1.0 / (size as f64).log2();
                        for c in off..off + size {
                            if target.at(r, c) != 0.0 {
                                let pv = p.at(r, c);
                                if pv > PROB_FLOOR {
                                    let d = -gs * w / (n_rows * n_feat * pv * ln2);
                                    dp.set(r, c, dp.at(r, c) + d * target.at(r, c));
                                }
                            }
                        }
                    }
                }
                self.bump(adj, *probs, &dp)?;
            }
            Op::Ntk(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (da, db) = ntk_backward(va, vb, g);
                if self.ng(*a) {
                    self.bump(adj, *a, &da)?;
                }
                if self.ng(*b) {
                    self.bump(adj, *b, &db)?;
                }
            }
            Op::CholeskySolve(a, b) => {
                // x = A^{-1} b;  dL/db = A^{-1} g,  dL/dA = -(A^{-1} g) x^T
                let l = cholesky(self.value(*a))?;
                let db = cholesky_solve_factored(&l, g)?;
                if self.ng(*a) {
                    let x = &node.value;
                    let da = db.matmul(&x.transpose())?.scale(-1.0);
                    self.bump(adj, *a, &da)?;
                }
                if self.ng(*b) {
                    self.bump(adj, *b, &db)?;
                }
            }
            Op::CosineDistTo(a, target) => {
                let va = self.value(*a);
                let gs = g.at(0, 0);
                let na = va.frobenius_norm();
                let nt = target.frobenius_norm();
                let mut da = Matrix::zeros(va.rows(), va.cols());
                if na > 0.0 && nt > 0.0 {
                    let cosv = va.dot(target)? / (na * nt);
                    // d(1-cos)/da = cos * a/|a|^2 - t/(|a||t|)
                    da.add_scaled(va, gs * cosv / (na * na))?;
                    da.add_scaled(target, -gs / (na * nt))?;
                }
                self.bump(adj, *a, &da)?;
            }
        }
        Ok(())
    }
}

pub(crate) const PROB_FLOOR: f64 = 1e-12;

fn softmax_slice(xs: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

fn softmax_backward_slice(p: &[f64], g: &[f64], out: &mut [f64]) {
    let inner: f64 = p.iter().zip(g).map(|(pv, gv)| pv * gv).sum();
    for ((o, &pv), &gv) in out.iter_mut().zip(p).zip(g) {
        *o = pv * (gv - inner);
    }
}

/// Per-row reconstruction loss in bits. `target` must be one-hot per group;
/// groups of width 1 contribute zero (their softmax is identically 1).
pub(crate) fn row_group_nll_bits(
    probs: &[f64],
    target: &[f64],
    groups: &FeatureGroups,
) -> Result<f64> {
    let mut total = 0.0;
    for (gi, (off, size)) in groups.iter().enumerate() {
        if size < 2 {
            continue;
        }
        let mut hit = None;
        for c in off..off + size {
            if target[c] != 0.0 {
                if target[c] != 1.0 || hit.is_some() {
                    return Err(Error::Contract(format!(
                        "target row is not one-hot in group {gi}"
                    )));
                }
                hit = Some(c);
            }
        }
        let Some(c) = hit else {
            return Err(Error::Contract(format!("target row has empty group {gi}")));
        };
        let p = probs[c].max(PROB_FLOOR);
        total += -p.log2() / (size as f64).log2();
    }
    Ok(total / groups.count() as f64)
}

/// Analytic neural tangent kernel of a one-hidden-layer ReLU network in its
/// infinite-width limit, with inputs scaled by 1/sqrt(width).
///
/// For rows a, b with norms na, nb and angle gamma:
///   K = (na*nb/(pi*D)) * (sin g + 2*cos g*(pi - g))
/// which combines the function-space (NNGP) term and the weight-gradient term.
pub(crate) fn ntk_forward(a: &Matrix, b: &Matrix) -> Matrix {
    let d = a.cols() as f64;
    let na: Vec<f64> = (0..a.rows())
        .map(|i| a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let nb: Vec<f64> = (0..b.rows())
        .map(|j| b.row(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut k = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            if na[i] == 0.0 || nb[j] == 0.0 {
                continue; // zero-input limit of the recursion
            }
            let s: f64 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            let rho = (s / (na[i] * nb[j])).clamp(-1.0, 1.0);
            let v = if rho >= 1.0 - 1e-12 {
                // collinear limit, exact on the diagonal of a self-kernel
                2.0 * s / d
            } else {
                let gamma = rho.acos();
                (na[i] * nb[j] / (std::f64::consts::PI * d))
                    * (gamma.sin() + 2.0 * rho * (std::f64::consts::PI - gamma))
            };
            k.set(i, j, v);
        }
    }
    k
}

fn ntk_backward(a: &Matrix, b: &Matrix, g: &Matrix) -> (Matrix, Matrix) {
    let d = a.cols() as f64;
    let pi = std::f64::consts::PI;
    let mut da = Matrix::zeros(a.rows(), a.cols());
    let mut db = Matrix::zeros(b.rows(), b.cols());
    let na: Vec<f64> = (0..a.rows())
        .map(|i| a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let nb: Vec<f64> = (0..b.rows())
        .map(|j| b.row(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let gv = g.at(i, j);
            if gv == 0.0 || na[i] == 0.0 || nb[j] == 0.0 {
                continue;
            }
            let s: f64 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            let rho = (s / (na[i] * nb[j])).clamp(-1.0, 1.0);
            if rho >= 1.0 - 1e-12 {
                // collinear limit: K = 2 s / D along the cone
                let c = gv * 2.0 / d;
                for (x, &bv) in da.row_mut(i).iter_mut().zip(b.row(j)) {
                    *x += c * bv;
                }
                for (x, &av) in db.row_mut(j).iter_mut().zip(a.row(i)) {
                    *x += c * av;
                }
                continue;
            }
            let gamma = rho.acos();
            let sin_g = (1.0 - rho * rho).sqrt().max(1e-12);
            // K(s, na, nb) partials; see the forward comment for the form
            let dk_ds = (rho / sin_g + 2.0 * (pi - gamma)) / (pi * d);
            let dk_dna = (nb[j] / (pi * d)) * ((1.0 - 2.0 * rho * rho) / sin_g);
            let dk_dnb = (na[i] / (pi * d)) * ((1.0 - 2.0 * rho * rho) / sin_g);
            for (c, (x, (&av, &bv))) in da
                .row_mut(i)
                .iter_mut()
                .zip(a.row(i).iter().zip(b.row(j)))
                .enumerate()
            {
                let _ = c;
                *x += gv * (dk_ds * bv + dk_dna * av / na[i]);
            }
            for (x, (&av, &bv)) in db.row_mut(j).iter_mut().zip(a.row(i).iter().zip(b.row(j))) {
                *x += gv * (dk_ds * av + dk_dnb * bv / nb[j]);
            }
        }
    }
    (da, db)
}

/// 1 - cosine similarity over flattened matrices, with the zero-norm
/// convention used for gradient matching: both zero gives 0, one zero gives 1.
pub fn cosine_distance(a: &Matrix, b: &Matrix) -> f64 {
    let na = a.frobenius_norm();
    let nb = b.frobenius_norm();
    if na == 0.0 && nb == 0.0 {
        return 0.0;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let dot = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| x * y)
        .sum::<f64>();
    1.0 - dot / (na * nb)
}
