use std::cell::RefCell;
use std::rc::Rc;

use super::matrix::gemm;
use super::{Gradients, Matrix, ParamId, ParameterSet};
use crate::error::{domain, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Incoming-neighbour lists in compressed form, self-loops included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl Adjacency {
    /// Node `dst` attends to `src` for every arc `(src, dst)`; undirected
    /// edges contribute both arcs. Duplicates are removed.
    pub fn new(n: usize, arcs: &[(usize, usize)], undirected: bool) -> Self {
        let mut lists: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(s, d) in arcs {
            lists[d].push(s);
            if undirected {
                lists[s].push(d);
            }
        }
        let mut offsets = vec![0];
        let mut sources = Vec::new();
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            sources.extend(l);
            offsets.push(sources.len());
        }
        Self { offsets, sources }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.sources.len()
    }

    pub fn neighbours(&self, dst: usize) -> &[usize] {
        &self.sources[self.offsets[dst]..self.offsets[dst + 1]]
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    GatherPerRow(Var, Vec<usize>),
    RowBlockDot(Var, Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Matrix,
        inv_std: Vec<f64>,
    },
    LogSoftmax(Var, Vec<bool>),
    Softmax(Var, Vec<bool>),
    Sum(Var),
    RowSums(Var),
    Gat {
        h: Var,
        a_src: Var,
        a_dst: Var,
        adj: Rc<Adjacency>,
        heads: usize,
        slope: f64,
        /// Attention weights and pre-activation logits per (edge, head).
        alpha: Vec<f64>,
        logits: Vec<f64>,
    },
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
    grad: bool,
}

/// Records operations over parameters for reverse-mode differentiation.
///
/// A tape created with [`Tape::frozen`] treats parameters as constants; it
/// evaluates the same functions but records no backward information.
pub struct Tape<'p> {
    params: &'p ParameterSet,
    track: bool,
    nodes: RefCell<Vec<Node>>,
    param_vars: RefCell<Vec<Option<Var>>>,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
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

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Self::with_tracking(params, true)
    }

    pub fn frozen(params: &'p ParameterSet) -> Self {
        Self::with_tracking(params, false)
    }

    fn with_tracking(params: &'p ParameterSet, track: bool) -> Self {
        Self {
            params,
            track,
            nodes: RefCell::new(Vec::new()),
            param_vars: RefCell::new(vec![None; params.len()]),
        }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes held by recorded values, a proxy for peak activation memory.
    pub fn value_bytes(&self) -> usize {
        self.nodes.borrow().iter().map(|n| n.value.len() * 8).sum()
    }

    pub fn value(&self, v: Var) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        assert_eq!(value.shape(), (1, 1), "not a scalar");
        value.data()[0]
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].grad
    }

    fn push(&self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let grad = self.track && inputs.iter().any(|&v| self.needs_grad(v));
        let op = if grad { op } else { Op::Leaf };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            grad,
        });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// The parameter's value; recorded once per tape.
    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.borrow()[id.0] {
            return v;
        }
        let value = self.params.value(id).clone();
        let v = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                value: Rc::new(value),
                op: Op::Param(id),
                grad: self.track,
            });
            Var(nodes.len() - 1)
        };
        self.param_vars.borrow_mut()[id.0] = Some(v);
        v
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Matrix::zeros(va.rows(), vb.cols());
        gemm(1.0, &va, false, &vb, false, 0.0, &mut out);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T`.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Matrix::zeros(va.rows(), vb.rows());
        gemm(1.0, &va, false, &vb, true, 0.0, &mut out);
        self.push(out, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(&self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(&self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(&self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// Adds the `1 x c` row `r` to every row of `x`.
    pub fn add_row(&self, x: Var, r: Var) -> Var {
        let (vx, vr) = (self.value(x), self.value(r));
        assert_eq!((1, vx.cols()), vr.shape(), "add_row shape mismatch");
        let mut out = (*vx).clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(vr.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, r), &[x, r])
    }

    pub fn scale(&self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn neg(&self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn relu(&self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| leaky(v, slope));
        self.push(out, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn softplus(&self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        self.push(out, Op::Softplus(x), &[x])
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let values: Vec<Rc<Matrix>> = parts.iter().map(|&p| self.value(p)).collect();
        let rows = values[0].rows();
        assert!(values.iter().all(|v| v.rows() == rows), "concat_cols row mismatch");
        let cols: usize = values.iter().map(|v| v.cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for v in &values {
                out.row_mut(r)[c0..c0 + v.cols()].copy_from_slice(v.row(r));
                c0 += v.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        let values: Vec<Rc<Matrix>> = parts.iter().map(|&p| self.value(p)).collect();
        let cols = values[0].cols();
        assert!(values.iter().all(|v| v.cols() == cols), "concat_rows column mismatch");
        let rows: usize = values.iter().map(|v| v.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for v in &values {
            data.extend_from_slice(v.data());
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&self, x: Var, start: usize, width: usize) -> Var {
        let vx = self.value(x);
        assert!(start + width <= vx.cols(), "slice_cols out of range");
        let mut out = Matrix::zeros(vx.rows(), width);
        for r in 0..vx.rows() {
            out.row_mut(r).copy_from_slice(&vx.row(r)[start..start + width]);
        }
        self.push(out, Op::SliceCols(x, start), &[x])
    }

    pub fn slice_rows(&self, x: Var, start: usize, count: usize) -> Var {
        let vx = self.value(x);
        assert!(start + count <= vx.rows(), "slice_rows out of range");
        let c = vx.cols();
        let out = Matrix::from_vec(count, c, vx.data()[start * c..(start + count) * c].to_vec());
        self.push(out, Op::SliceRows(x, start), &[x])
    }

    /// Output row `i` is row `idx[i]` of `x`.
    pub fn gather_rows(&self, x: Var, idx: &[usize]) -> Var {
        let vx = self.value(x);
        let c = vx.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(vx.row(i));
        }
        self.push(Matrix::from_vec(idx.len(), c, data), Op::GatherRows(x, idx.to_vec()), &[x])
    }

    /// `out[b][j] = x[b][idx[b * width + j]]` with `width = idx.len() / rows`.
    pub fn gather_per_row(&self, x: Var, idx: &[usize]) -> Var {
        let vx = self.value(x);
        let rows = vx.rows();
        assert_eq!(idx.len() % rows.max(1), 0, "index count not a multiple of rows");
        let width = if rows == 0 { 0 } else { idx.len() / rows };
        let mut out = Matrix::zeros(rows, width);
        for b in 0..rows {
            for j in 0..width {
                out.set(b, j, vx.get(b, idx[b * width + j]));
            }
        }
        self.push(out, Op::GatherPerRow(x, idx.to_vec()), &[x])
    }

    /// `out[b][i] = q[b] . k[b * n + i]` for `q: B x d`, `k: (B n) x d`.
    pub fn row_block_dot(&self, q: Var, k: Var, n: usize) -> Var {
        let (vq, vk) = (self.value(q), self.value(k));
        assert_eq!(vq.rows() * n, vk.rows(), "row_block_dot row mismatch");
        assert_eq!(vq.cols(), vk.cols(), "row_block_dot width mismatch");
        let mut out = Matrix::zeros(vq.rows(), n);
        for b in 0..vq.rows() {
            let qb = vq.row(b);
            for i in 0..n {
                out.set(b, i, qb.iter().zip(vk.row(b * n + i)).map(|(x, y)| x * y).sum());
            }
        }
        self.push(out, Op::RowBlockDot(q, k, n), &[q, k])
    }

    /// Per-row normalisation to zero mean and unit variance, then `gain`
    /// and `bias` rows applied.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var) -> Var {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let d = vx.cols();
        assert_eq!(vg.shape(), (1, d));
        assert_eq!(vb.shape(), (1, d));
        let mut normed = Matrix::zeros(vx.rows(), d);
        let mut out = Matrix::zeros(vx.rows(), d);
        let mut inv_std = Vec::with_capacity(vx.rows());
        for r in 0..vx.rows() {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for c in 0..d {
                let n = (row[c] - mean) * is;
                normed.set(r, c, n);
                out.set(r, c, n * vg.data()[c] + vb.data()[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    fn check_rows(&self, v: &Matrix, mask: &[bool]) -> Result<()> {
        if mask.len() != v.len() {
            return domain("mask shape does not match logits");
        }
        for r in 0..v.rows() {
            if !mask[r * v.cols()..(r + 1) * v.cols()].iter().any(|&m| m) {
                return domain(format!("row {r} has no feasible entry"));
            }
        }
        Ok(())
    }

    /// Row-wise log-softmax over unmasked entries; masked entries are `-inf`.
    pub fn log_softmax(&self, x: Var, mask: &[bool]) -> Result<Var> {
        let vx = self.value(x);
        self.check_rows(&vx, mask)?;
        let c = vx.cols();
        let mut out = Matrix::filled(vx.rows(), c, f64::NEG_INFINITY);
        for r in 0..vx.rows() {
            let m = &mask[r * c..(r + 1) * c];
            let row = vx.row(r);
            let max = (0..c).filter(|&j| m[j]).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..c).filter(|&j| m[j]).map(|j| (row[j] - max).exp()).sum::<f64>().ln();
            for j in (0..c).filter(|&j| m[j]) {
                out.set(r, j, row[j] - lse);
            }
        }
        Ok(self.push(out, Op::LogSoftmax(x, mask.to_vec()), &[x]))
    }

    /// Row-wise softmax over unmasked entries; masked entries are exactly 0.
    pub fn softmax(&self, x: Var, mask: &[bool]) -> Result<Var> {
        let vx = self.value(x);
        self.check_rows(&vx, mask)?;
        let c = vx.cols();
        let mut out = Matrix::zeros(vx.rows(), c);
        for r in 0..vx.rows() {
            let m = &mask[r * c..(r + 1) * c];
            let row = vx.row(r);
            let max = (0..c).filter(|&j| m[j]).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in (0..c).filter(|&j| m[j]) {
                let e = (row[j] - max).exp();
                out.set(r, j, e);
                total += e;
            }
            for v in out.row_mut(r) {
                *v /= total;
            }
        }
        Ok(self.push(out, Op::Softmax(x, mask.to_vec()), &[x]))
    }

    pub fn sum(&self, x: Var) -> Var {
        let out = Matrix::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// `r x 1` column of row sums.
    pub fn row_sums(&self, x: Var) -> Var {
        let vx = self.value(x);
        let data = (0..vx.rows()).map(|r| vx.row(r).iter().sum()).collect();
        self.push(Matrix::from_vec(vx.rows(), 1, data), Op::RowSums(x), &[x])
    }

    /// Graph attention over `adj` for projected features `h` (`N x heads*d`).
    /// Each head attends with logits `leaky(a_dst . h_i + a_src . h_j)`; the
    /// heads' outputs are concatenated.
    pub fn gat(&self, h: Var, a_src: Var, a_dst: Var, adj: &Rc<Adjacency>, heads: usize, slope: f64) -> Var {
        let (vh, vs, vd) = (self.value(h), self.value(a_src), self.value(a_dst));
        let (n, width) = vh.shape();
        assert_eq!(adj.node_count(), n, "graph size does not match feature rows");
        assert_eq!(width % heads, 0, "width not divisible by heads");
        assert_eq!(vs.shape(), (1, width));
        assert_eq!(vd.shape(), (1, width));
        let d = width / heads;
        let edges = adj.edge_count();
        let mut alpha = vec![0.0; edges * heads];
        let mut logits = vec![0.0; edges * heads];
        let mut out = Matrix::zeros(n, width);
        for head in 0..heads {
            let cols = head * d..(head + 1) * d;
            let dot = |row: &[f64], a: &[f64]| -> f64 { row[cols.clone()].iter().zip(&a[cols.clone()]).map(|(x, y)| x * y).sum() };
            let src: Vec<f64> = (0..n).map(|j| dot(vh.row(j), vs.data())).collect();
            let dst: Vec<f64> = (0..n).map(|i| dot(vh.row(i), vd.data())).collect();
            for i in 0..n {
                let span = adj.offsets[i]..adj.offsets[i + 1];
                let mut max = f64::NEG_INFINITY;
                for e in span.clone() {
                    let u = dst[i] + src[adj.sources[e]];
                    logits[e * heads + head] = u;
                    max = max.max(leaky(u, slope));
                }
                let mut total = 0.0;
                for e in span.clone() {
                    let w = (leaky(logits[e * heads + head], slope) - max).exp();
                    alpha[e * heads + head] = w;
                    total += w;
                }
                for e in span {
                    alpha[e * heads + head] /= total;
                    let a = alpha[e * heads + head];
                    let j = adj.sources[e];
                    for c in cols.clone() {
                        let v = out.get(i, c) + a * vh.get(j, c);
                        out.set(i, c, v);
                    }
                }
            }
        }
        self.push(
            out,
            Op::Gat {
                h,
                a_src,
                a_dst,
                adj: Rc::clone(adj),
                heads,
                slope,
                alpha,
                logits,
            },
            &[h, a_src, a_dst],
        )
    }

    /// Reverse sweep from the scalar `loss`; returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.shape(), (1, 1), "loss must be a scalar");
        let mut out = Gradients::zeros_like(self.params);
        if !nodes[loss.0].grad {
            return out;
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        fn acc(nodes: &[Node], grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            if !nodes[v.0].grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            let y = &node.value;
            let val = |v: Var| Rc::clone(&nodes[v.0].value);
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.0[id.0].add_assign(&g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    if nodes[a.0].grad {
                        let mut ga = Matrix::zeros(va.rows(), va.cols());
                        gemm(1.0, &g, false, &vb, true, 0.0, &mut ga);
                        acc(&nodes, &mut grads, *a, ga);
                    }
                    if nodes[b.0].grad {
                        let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                        gemm(1.0, &va, true, &g, false, 0.0, &mut gb);
                        acc(&nodes, &mut grads, *b, gb);
                    }
                }
                Op::MatMulNt(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    if nodes[a.0].grad {
                        let mut ga = Matrix::zeros(va.rows(), va.cols());
                        gemm(1.0, &g, false, &vb, false, 0.0, &mut ga);
                        acc(&nodes, &mut grads, *a, ga);
                    }
                    if nodes[b.0].grad {
                        let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                        gemm(1.0, &g, true, &va, false, 0.0, &mut gb);
                        acc(&nodes, &mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    acc(&nodes, &mut grads, *b, g.clone());
                    acc(&nodes, &mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&nodes, &mut grads, *b, g.map(|v| -v));
                    acc(&nodes, &mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    acc(&nodes, &mut grads, *a, g.zip_map(&vb, |x, y| x * y));
                    acc(&nodes, &mut grads, *b, g.zip_map(&va, |x, y| x * y));
                }
                Op::AddRow(x, r) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, v) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(&nodes, &mut grads, *r, gr);
                    acc(&nodes, &mut grads, *x, g);
                }
                Op::Scale(x, s) => acc(&nodes, &mut grads, *x, g.map(|v| v * s)),
                Op::Relu(x) => {
                    let gx = g.zip_map(y, |gv, yv| if yv > 0.0 { gv } else { 0.0 });
                    acc(&nodes, &mut grads, *x, gx);
                }
                Op::LeakyRelu(x, slope) => {
                    let gx = g.zip_map(&val(*x), |gv, xv| if xv > 0.0 { gv } else { gv * slope });
                    acc(&nodes, &mut grads, *x, gx);
                }
                Op::Sigmoid(x) => acc(&nodes, &mut grads, *x, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv))),
                Op::Tanh(x) => acc(&nodes, &mut grads, *x, g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv))),
                Op::Softplus(x) => acc(&nodes, &mut grads, *x, g.zip_map(&val(*x), |gv, xv| gv * sigmoid(xv))),
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let w = nodes[p.0].value.cols();
                        if nodes[p.0].grad {
                            let mut gp = Matrix::zeros(g.rows(), w);
                            for r in 0..g.rows() {
                                gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + w]);
                            }
                            acc(&nodes, &mut grads, *p, gp);
                        }
                        c0 += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    let c = g.cols();
                    for p in parts {
                        let h = nodes[p.0].value.rows();
                        if nodes[p.0].grad {
                            let gp = Matrix::from_vec(h, c, g.data()[r0 * c..(r0 + h) * c].to_vec());
                            acc(&nodes, &mut grads, *p, gp);
                        }
                        r0 += h;
                    }
                }
                Op::SliceCols(x, start) => {
                    let (rows, cols) = nodes[x.0].value.shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&nodes, &mut grads, *x, gx);
                }
                Op::SliceRows(x, start) => {
                    let (rows, cols) = nodes[x.0].value.shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    gx.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                    acc(&nodes, &mut grads, *x, gx);
                }
                Op::GatherRows(x, idx) => {
                    let (rows, cols) = nodes[x.0].value.shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    for (i, &src) in idx.iter().enumerate() {
                        for (o, v) in gx.row_mut(src).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(&nodes, &mut grads, *x, gx);
                }
                Op::GatherPerRow(x, idx) => {
                    let (rows, cols) = nodes[x.0].value.shape();
                    let width = g.cols();
                    let mut gx = Matrix::zeros(rows, cols);
                    for b in 0..rows {
                        for j in 0..width {
                            let c = idx[b * width + j];
                            let v = gx.get(b, c) + g.get(b, j);
                            gx.set(b, c, v);
                        }
                    }
                    acc(&nodes, &mut grads, *x, gx);
                }
                Op::RowBlockDot(q, k, n) => {
                    let (vq, vk) = (val(*q), val(*k));
                    let d = vq.cols();
                    let mut gq = Matrix::zeros(vq.rows(), d);
                    let mut gk = Matrix::zeros(vk.rows(), d);
                    for b in 0..vq.rows() {
                        for i in 0..*n {
                            let gv = g.get(b, i);
                            if gv == 0.0 {
                                continue;
                            }
                            let kr = vk.row(b * n + i).to_vec();
                            for (o, kv) in gq.row_mut(b).iter_mut().zip(&kr) {
                                *o += gv * kv;
                            }
                            let qb = vq.row(b);
                            for (o, qv) in gk.row_mut(b * n + i).iter_mut().zip(qb) {
                                *o += gv * qv;
                            }
                        }
                    }
                    acc(&nodes, &mut grads, *q, gq);
                    acc(&nodes, &mut grads, *k, gk);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let vg = val(*gain);
                    let (rows, d) = normed.shape();
                    let mut gg = Matrix::zeros(1, d);
                    let mut gb = Matrix::zeros(1, d);
                    let mut gx = Matrix::zeros(rows, d);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let nr = normed.row(r);
                        let mut mean_dn = 0.0;
                        let mut mean_dn_n = 0.0;
                        for c in 0..d {
                            gg.data_mut()[c] += gr[c] * nr[c];
                            gb.data_mut()[c] += gr[c];
                            let dn = gr[c] * vg.data()[c];
                            mean_dn += dn;
                            mean_dn_n += dn * nr[c];
                        }
                        mean_dn /= d as f64;
                        mean_dn_n /= d as f64;
                        for c in 0..d {
                            let dn = gr[c] * vg.data()[c];
                            gx.set(r, c, inv_std[r] * (dn - mean_dn - nr[c] * mean_dn_n));
                        }
                    }
                    acc(&nodes, &mut grads, *gain, gg);
                    acc(&nodes, &mut grads, *bias, gb);
                    acc(&nodes, &mut grads, *x, gx);
                }
                Op::LogSoftmax(x, mask) => {
                    let c = g.cols();
                    let mut gx = Matrix::zeros(g.rows(), c);
                    for r in 0..g.rows() {
                        let m = &mask[r * c..(r + 1) * c];
                        let total: f64 = (0..c).filter(|&j| m[j]).map(|j| g.get(r, j)).sum();
                        for j in (0..c).filter(|&j| m[j]) {
                            gx.set(r, j, g.get(r, j) - y.get(r, j).exp() * total);
                        }
                    }
                    acc(&nodes, &mut grads, *x, gx);
                }
                Op::Softmax(x, mask) => {
                    let c = g.cols();
                    let mut gx = Matrix::zeros(g.rows(), c);
                    for r in 0..g.rows() {
                        let m = &mask[r * c..(r + 1) * c];
                        let dot: f64 = (0..c).filter(|&j| m[j]).map(|j| g.get(r, j) * y.get(r, j)).sum();
                        for j in (0..c).filter(|&j| m[j]) {
                            gx.set(r, j, y.get(r, j) * (g.get(r, j) - dot));
                        }
                    }
                    acc(&nodes, &mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let (rows, cols) = nodes[x.0].value.shape();
                    acc(&nodes, &mut grads, *x, Matrix::filled(rows, cols, g.data()[0]));
                }
                Op::RowSums(x) => {
                    let (rows, cols) = nodes[x.0].value.shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        gx.row_mut(r).fill(g.get(r, 0));
                    }
                    acc(&nodes, &mut grads, *x, gx);
                }
                Op::Gat {
                    h,
                    a_src,
                    a_dst,
                    adj,
                    heads,
                    slope,
                    alpha,
                    logits,
                } => {
                    let (vh, vs, vd) = (val(*h), val(*a_src), val(*a_dst));
                    let (n, width) = vh.shape();
                    let heads = *heads;
                    let d = width / heads;
                    let mut gh = Matrix::zeros(n, width);
                    let mut gs = Matrix::zeros(1, width);
                    let mut gd = Matrix::zeros(1, width);
                    for head in 0..heads {
                        let cols = head * d..(head + 1) * d;
                        let mut g_src = vec![0.0; n];
                        let mut g_dst = vec![0.0; n];
                        for i in 0..n {
                            let span = adj.offsets[i]..adj.offsets[i + 1];
                            let gi = &g.row(i)[cols.clone()];
                            // d alpha_ij = G_i . h_j
                            let mut dalpha = Vec::with_capacity(span.len());
                            let mut weighted = 0.0;
                            for e in span.clone() {
                                let j = adj.sources[e];
                                let a = alpha[e * heads + head];
                                let hj = &vh.row(j)[cols.clone()];
                                let da: f64 = gi.iter().zip(hj).map(|(x, y)| x * y).sum();
                                dalpha.push(da);
                                weighted += a * da;
                                for (c, gv) in cols.clone().zip(gi) {
                                    let v = gh.get(j, c) + a * gv;
                                    gh.set(j, c, v);
                                }
                            }
                            for (k, e) in span.enumerate() {
                                let a = alpha[e * heads + head];
                                let de = a * (dalpha[k] - weighted);
                                let du = if logits[e * heads + head] > 0.0 { de } else { de * slope };
                                g_dst[i] += du;
                                g_src[adj.sources[e]] += du;
                            }
                        }
                        for j in 0..n {
                            for c in cols.clone() {
                                let hv = vh.get(j, c);
                                let v = gh.get(j, c) + g_dst[j] * vd.data()[c] + g_src[j] * vs.data()[c];
                                gh.set(j, c, v);
                                gd.data_mut()[c] += g_dst[j] * hv;
                                gs.data_mut()[c] += g_src[j] * hv;
                            }
                        }
                    }
                    acc(&nodes, &mut grads, *h, gh);
                    acc(&nodes, &mut grads, *a_src, gs);
                    acc(&nodes, &mut grads, *a_dst, gd);
                }
            }
        }
        out
    }
}
