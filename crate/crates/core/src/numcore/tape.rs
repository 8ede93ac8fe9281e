//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! Every primitive appends one node to the [`Tape`] and returns a [`Var`]
//! handle. Nodes are only ever appended, so the tape is in topological
//! order by construction and [`Tape::backward`] is a single reverse sweep
//! that visits each node once. Gradients accumulate additively, which makes
//! fan-out (a value used several times) come out right without any
//! bookkeeping at the call site.
//!
//! Leaves are either parameters ([`Tape::param`], gradients tracked) or
//! constants ([`Tape::constant`]). A node tracks gradients iff one of its
//! parents does; untracked subgraphs are skipped during the sweep.

use crate::error::{Error, Result};

use super::matrix::{gemm, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Per-row attention layout shared by the fused attention primitive.
#[derive(Clone, Debug)]
pub struct AttentionSpec {
    /// Number of independent sequences stacked in the input.
    pub batch: usize,
    /// Capacity of each sequence; the input has `batch * seq` rows.
    pub seq: usize,
    pub heads: usize,
    /// Multiplier applied to each key position's softmax weight,
    /// `batch * seq` entries.
    pub key_weights: Vec<f64>,
    /// Unpadded length of each sequence; keys at or past it are masked.
    pub lengths: Vec<usize>,
    pub causal: bool,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_a: bool, trans_b: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    ScaleCols { a: Var, weights: Vec<f64> },
    ConcatCols(Vec<Var>),
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    StackSteps(Vec<Var>),
    GatherRows { src: Var, idx: Vec<Option<usize>> },
    PickCols { a: Var, idx: Vec<usize> },
    Reshape(Var),
    Sum(Var),
    Bce { pred: Var, targets: Vec<f64>, mask: Vec<bool> },
    RowVecMat { h: Var, w: Var, d_out: usize, group: usize },
    Attention { x: Var, spec: Box<AttentionSpec>, probs: Vec<f64> },
}

struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    op: Op,
    tracked: bool,
}

/// Lower and upper probability bound used by [`Tape::bce`].
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parents of a node, in recording order.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. }
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::RowVecMat { h: a, w: b, .. } => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::SoftmaxRows(a)
            | Op::ScaleCols { a, .. }
            | Op::SliceCols { a, .. }
            | Op::SliceRows { a, .. }
            | Op::GatherRows { src: a, .. }
            | Op::PickCols { a, .. }
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Bce { pred: a, .. }
            | Op::Attention { x: a, .. } => vec![*a],
            Op::ConcatCols(vs) | Op::StackSteps(vs) => vs.clone(),
        }
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward root w.r.t. `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul_ex(&mut self, a: Var, trans_a: bool, b: Var, trans_b: bool) -> Result<Var> {
        let (ma, mb) = (self.value(a), self.value(b));
        let (m, k) = if trans_a { (ma.cols(), ma.rows()) } else { ma.shape() };
        let (kb, n) = if trans_b { (mb.cols(), mb.rows()) } else { mb.shape() };
        if k != kb {
            return Err(Error::dim(
                "matmul",
                format!(
                    "{:?}{} x {:?}{}",
                    ma.shape(),
                    if trans_a { "ᵀ" } else { "" },
                    mb.shape(),
                    if trans_b { "ᵀ" } else { "" }
                ),
            ));
        }
        let mut out = Matrix::zeros(m, n);
        gemm(1.0, ma, trans_a, mb, trans_b, 0.0, &mut out);
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(out, Op::MatMul { a, b, trans_a, trans_b }, tracked))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, false, b, false)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, false, b, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), tracked))
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ma, mr) = (self.value(a), self.value(row));
        if mr.rows() != 1 || mr.cols() != ma.cols() {
            return Err(Error::dim(
                "add_row",
                format!("{:?} + row {:?}", ma.shape(), mr.shape()),
            ));
        }
        let mut out = ma.clone();
        let r = mr.as_slice().to_vec();
        for i in 0..out.rows() {
            for (x, b) in out.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        let tracked = self.tracked_any(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (ma, mb) = (self.value(a), self.value(b));
        let data = ma.as_slice().iter().zip(mb.as_slice()).map(|(x, y)| x - y).collect();
        let out = Matrix::from_vec(ma.rows(), ma.cols(), data)?;
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), tracked))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (ma, mb) = (self.value(a), self.value(b));
        let data = ma.as_slice().iter().zip(mb.as_slice()).map(|(x, y)| x * y).collect();
        let out = Matrix::from_vec(ma.rows(), ma.cols(), data)?;
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let tracked = self.tracked_any(&[a]);
        self.push(out, Op::Scale(a, factor), tracked)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let tracked = self.tracked_any(&[a]);
        self.push(out, Op::Tanh(a), tracked)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let tracked = self.tracked_any(&[a]);
        self.push(out, Op::Sigmoid(a), tracked)
    }

    /// Row-wise softmax with max subtraction. With `causal`, entry (i, j)
    /// for j > i is excluded and receives probability 0.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let ma = self.value(a);
        let mut out = Matrix::zeros(ma.rows(), ma.cols());
        for i in 0..ma.rows() {
            let end = if causal { (i + 1).min(ma.cols()) } else { ma.cols() };
            softmax_into(&ma.row(i)[..end], &mut out.row_mut(i)[..end]);
        }
        let tracked = self.tracked_any(&[a]);
        self.push(out, Op::SoftmaxRows(a), tracked)
    }

    /// Multiplies column j by the constant `weights[j]`.
    pub fn scale_cols(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let ma = self.value(a);
        if weights.len() != ma.cols() {
            return Err(Error::dim(
                "scale_cols",
                format!("{} weights for {:?}", weights.len(), ma.shape()),
            ));
        }
        let mut out = ma.clone();
        for i in 0..out.rows() {
            for (x, w) in out.row_mut(i).iter_mut().zip(&weights) {
                *x *= w;
            }
        }
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(out, Op::ScaleCols { a, weights }, tracked))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|v| self.value(*v).rows())
            .ok_or_else(|| Error::dim("concat_cols", "no operands"))?;
        let mut cols = 0;
        for v in parts {
            let m = self.value(*v);
            if m.rows() != rows {
                return Err(Error::dim(
                    "concat_cols",
                    format!("row counts {rows} vs {}", m.rows()),
                ));
            }
            cols += m.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for v in parts {
            let m = self.value(*v);
            for i in 0..rows {
                out.row_mut(i)[offset..offset + m.cols()].copy_from_slice(m.row(i));
            }
            offset += m.cols();
        }
        let tracked = self.tracked_any(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), tracked))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ma = self.value(a);
        if start + len > ma.cols() {
            return Err(Error::dim(
                "slice_cols",
                format!("[{start}, {}) of {:?}", start + len, ma.shape()),
            ));
        }
        let out = Matrix::from_fn(ma.rows(), len, |i, j| ma.get(i, start + j));
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(out, Op::SliceCols { a, start }, tracked))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ma = self.value(a);
        if start + len > ma.rows() {
            return Err(Error::dim(
                "slice_rows",
                format!("[{start}, {}) of {:?}", start + len, ma.shape()),
            ));
        }
        let c = ma.cols();
        let data = ma.as_slice()[start * c..(start + len) * c].to_vec();
        let out = Matrix::from_vec(len, c, data)?;
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(out, Op::SliceRows { a, start }, tracked))
    }

    /// Interleaves per-step batch matrices (each `B×c`) into a `(B·T)×c`
    /// matrix whose row `b·T + t` is row `b` of step `t`.
    pub fn stack_steps(&mut self, steps: &[Var]) -> Result<Var> {
        let first = steps
            .first()
            .map(|v| self.value(*v).shape())
            .ok_or_else(|| Error::dim("stack_steps", "no steps"))?;
        for v in steps {
            if self.value(*v).shape() != first {
                return Err(Error::dim(
                    "stack_steps",
                    format!("{first:?} vs {:?}", self.value(*v).shape()),
                ));
            }
        }
        let (b, c) = first;
        let t = steps.len();
        let mut out = Matrix::zeros(b * t, c);
        for (ti, v) in steps.iter().enumerate() {
            let m = self.value(*v);
            for bi in 0..b {
                out.row_mut(bi * t + ti).copy_from_slice(m.row(bi));
            }
        }
        let tracked = self.tracked_any(steps);
        Ok(self.push(out, Op::StackSteps(steps.to_vec()), tracked))
    }

    /// Row lookup; `None` yields a zero row. This is the embedding primitive.
    pub fn gather_rows(&mut self, src: Var, idx: Vec<Option<usize>>) -> Result<Var> {
        let ms = self.value(src);
        if let Some(bad) = idx.iter().flatten().find(|&&i| i >= ms.rows()) {
            return Err(Error::Index(format!(
                "gather_rows: row {bad} of a {}-row table",
                ms.rows()
            )));
        }
        let mut out = Matrix::zeros(idx.len(), ms.cols());
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = i {
                out.row_mut(r).copy_from_slice(ms.row(*i));
            }
        }
        let tracked = self.tracked_any(&[src]);
        Ok(self.push(out, Op::GatherRows { src, idx }, tracked))
    }

    /// Picks entry `(r, idx[r])` from each row, giving an `R×1` column.
    pub fn pick_cols(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let ma = self.value(a);
        if idx.len() != ma.rows() {
            return Err(Error::dim(
                "pick_cols",
                format!("{} indices for {:?}", idx.len(), ma.shape()),
            ));
        }
        if let Some(bad) = idx.iter().find(|&&c| c >= ma.cols()) {
            return Err(Error::Index(format!(
                "pick_cols: column {bad} of {}",
                ma.cols()
            )));
        }
        let data = idx.iter().enumerate().map(|(r, &c)| ma.get(r, c)).collect();
        let out = Matrix::from_vec(idx.len(), 1, data)?;
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(out, Op::PickCols { a, idx }, tracked))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).clone().reshaped(rows, cols)?;
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(out, Op::Reshape(a), tracked))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        let tracked = self.tracked_any(&[a]);
        self.push(out, Op::Sum(a), tracked)
    }

    /// Summed binary cross-entropy over unmasked entries of a probability
    /// column. Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn bce(&mut self, pred: Var, targets: Vec<f64>, mask: Vec<bool>) -> Result<Var> {
        let mp = self.value(pred);
        if targets.len() != mp.len() || mask.len() != mp.len() {
            return Err(Error::dim(
                "bce",
                format!(
                    "{} targets / {} mask for {:?}",
                    targets.len(),
                    mask.len(),
                    mp.shape()
                ),
            ));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Degenerate("bce over an all-masked window".into()));
        }
        let loss = bce_sum(mp.as_slice(), &targets, &mask);
        let tracked = self.tracked_any(&[pred]);
        Ok(self.push(Matrix::scalar(loss), Op::Bce { pred, targets, mask }, tracked))
    }

    /// Per-row vector-matrix product with a row-specific matrix:
    /// `out[r, j] = Σ_i h[r, i] · w[r / group, i·d_out + j]`.
    ///
    /// Consecutive blocks of `group` rows of `h` share one row of `w`, so
    /// `h` has `group · w.rows()` rows.
    pub fn row_vec_mat(&mut self, h: Var, w: Var, d_out: usize, group: usize) -> Result<Var> {
        let (mh, mw) = (self.value(h), self.value(w));
        let d_in = mh.cols();
        if group == 0 || mh.rows() != mw.rows() * group || mw.cols() != d_in * d_out {
            return Err(Error::dim(
                "row_vec_mat",
                format!(
                    "h {:?}, w {:?}, d_out {d_out}, group {group}",
                    mh.shape(),
                    mw.shape()
                ),
            ));
        }
        let mut out = Matrix::zeros(mh.rows(), d_out);
        for r in 0..mh.rows() {
            let hr = mh.row(r);
            let wr = mw.row(r / group);
            let or = out.row_mut(r);
            for (i, &hv) in hr.iter().enumerate() {
                if hv == 0.0 {
                    continue;
                }
                let wrow = &wr[i * d_out..(i + 1) * d_out];
                for (o, &wv) in or.iter_mut().zip(wrow) {
                    *o += hv * wv;
                }
            }
        }
        let tracked = self.tracked_any(&[h, w]);
        Ok(self.push(out, Op::RowVecMat { h, w, d_out, group }, tracked))
    }

    /// Multi-head self-attention over `spec.batch` stacked sequences, with
    /// queries, keys and values all equal to the per-head column block of
    /// `x`. Each head's softmax weights at key position j are multiplied by
    /// `key_weights[j]` after normalization. Returns the concatenated heads
    /// (no output projection).
    pub fn attention(&mut self, x: Var, spec: AttentionSpec) -> Result<Var> {
        let mx = self.value(x);
        let (rows, width) = mx.shape();
        if spec.heads == 0 || width % spec.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide width {width}",
                spec.heads
            )));
        }
        if rows != spec.batch * spec.seq
            || spec.key_weights.len() != rows
            || spec.lengths.len() != spec.batch
        {
            return Err(Error::dim(
                "attention",
                format!(
                    "input {:?}, batch {}, seq {}, {} key weights, {} lengths",
                    mx.shape(),
                    spec.batch,
                    spec.seq,
                    spec.key_weights.len(),
                    spec.lengths.len()
                ),
            ));
        }
        let (out, probs) = attention_forward(mx, &spec);
        let tracked = self.tracked_any(&[x]);
        Ok(self.push(
            out,
            Op::Attention {
                x,
                spec: Box::new(spec),
                probs,
            },
            tracked,
        ))
    }

    /// Reverse sweep from a scalar root. Afterwards [`Tape::grad`] returns
    /// d(root)/d(node) for every tracked node the root depends on.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {:?}",
                self.value(root).shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[root.0].grad = Some(Matrix::scalar(1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.propagate(i, &op, &g);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Matrix) {
        let node = &mut self.nodes[v.0];
        if !node.tracked {
            return;
        }
        match &mut node.grad {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(&mut self, v: Var, f: impl FnOnce(&mut Matrix)) {
        let node = &mut self.nodes[v.0];
        if !node.tracked {
            return;
        }
        let (r, c) = node.value.shape();
        f(node.grad.get_or_insert_with(|| Matrix::zeros(r, c)));
    }

    fn propagate(&mut self, i: usize, op: &Op, g: &Matrix) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_a, trans_b } => {
                let (a, b, ta, tb) = (*a, *b, *trans_a, *trans_b);
                if self.is_tracked(a) {
                    // C = op(A)·op(B): dop(A) = G·op(B)ᵀ
                    let bv = self.nodes[b.0].value.clone();
                    self.accumulate_with(a, |ga| {
                        if ta {
                            gemm(1.0, &bv, tb, g, true, 1.0, ga);
                        } else {
                            gemm(1.0, g, false, &bv, !tb, 1.0, ga);
                        }
                    });
                }
                if self.is_tracked(b) {
                    let av = self.nodes[a.0].value.clone();
                    self.accumulate_with(b, |gb| {
                        if tb {
                            gemm(1.0, g, true, &av, ta, 1.0, gb);
                        } else {
                            gemm(1.0, &av, !ta, g, false, 1.0, gb);
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(*a, g.clone());
                self.accumulate_with(*row, |gr| {
                    for r in 0..g.rows() {
                        for (x, y) in gr.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                });
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.is_tracked(a) {
                    let bv = &self.nodes[b.0].value;
                    let d = elementwise(g, bv, |x, y| x * y);
                    self.accumulate(a, d);
                }
                if self.is_tracked(b) {
                    let av = &self.nodes[a.0].value;
                    let d = elementwise(g, av, |x, y| x * y);
                    self.accumulate(b, d);
                }
            }
            Op::Scale(a, f) => self.accumulate(*a, g.map(|x| x * f)),
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let d = elementwise(g, y, |gv, yv| gv * (1.0 - yv * yv));
                self.accumulate(*a, d);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let d = elementwise(g, y, |gv, yv| gv * yv * (1.0 - yv));
                self.accumulate(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let p = &self.nodes[i].value;
                let mut d = Matrix::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    softmax_backward(p.row(r), g.row(r), d.row_mut(r));
                }
                self.accumulate(*a, d);
            }
            Op::ScaleCols { a, weights } => {
                let mut d = g.clone();
                for r in 0..d.rows() {
                    for (x, w) in d.row_mut(r).iter_mut().zip(weights) {
                        *x *= w;
                    }
                }
                self.accumulate(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for v in parts {
                    let c = self.nodes[v.0].value.cols();
                    let d = Matrix::from_fn(g.rows(), c, |r, j| g.get(r, offset + j));
                    self.accumulate(*v, d);
                    offset += c;
                }
            }
            Op::SliceCols { a, start } => {
                let start = *start;
                self.accumulate_with(*a, |ga| {
                    for r in 0..g.rows() {
                        for (x, y) in ga.row_mut(r)[start..start + g.cols()].iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                });
            }
            Op::SliceRows { a, start } => {
                let start = *start;
                self.accumulate_with(*a, |ga| {
                    for r in 0..g.rows() {
                        for (x, y) in ga.row_mut(start + r).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                });
            }
            Op::StackSteps(steps) => {
                let t = steps.len();
                for (ti, v) in steps.iter().enumerate() {
                    if !self.is_tracked(*v) {
                        continue;
                    }
                    let (b, c) = self.nodes[v.0].value.shape();
                    let d = Matrix::from_fn(b, c, |bi, j| g.get(bi * t + ti, j));
                    self.accumulate(*v, d);
                }
            }
            Op::GatherRows { src, idx } => {
                self.accumulate_with(*src, |gs| {
                    for (r, ix) in idx.iter().enumerate() {
                        if let Some(ix) = ix {
                            for (x, y) in gs.row_mut(*ix).iter_mut().zip(g.row(r)) {
                                *x += y;
                            }
                        }
                    }
                });
            }
            Op::PickCols { a, idx } => {
                self.accumulate_with(*a, |ga| {
                    for (r, &c) in idx.iter().enumerate() {
                        let v = ga.get(r, c) + g.get(r, 0);
                        ga.set(r, c, v);
                    }
                });
            }
            Op::Reshape(a) => {
                let (r, c) = self.nodes[a.0].value.shape();
                let d = g.clone().reshaped(r, c).expect("reshape preserves size");
                self.accumulate(*a, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.nodes[a.0].value.shape();
                self.accumulate(*a, Matrix::filled(r, c, g.as_slice()[0]));
            }
            Op::Bce { pred, targets, mask } => {
                let p = &self.nodes[pred.0].value;
                let scale = g.as_slice()[0];
                let data = p
                    .as_slice()
                    .iter()
                    .zip(targets)
                    .zip(mask)
                    .map(|((&pv, &t), &m)| {
                        if !m || pv <= PROB_CLAMP || pv >= 1.0 - PROB_CLAMP {
                            0.0
                        } else {
                            scale * (-(t / pv) + (1.0 - t) / (1.0 - pv))
                        }
                    })
                    .collect();
                let d = Matrix::from_vec(p.rows(), p.cols(), data).expect("shape");
                self.accumulate(*pred, d);
            }
            Op::RowVecMat { h, w, d_out, group } => {
                let (h, w, d_out, group) = (*h, *w, *d_out, *group);
                if self.is_tracked(h) {
                    let wv = &self.nodes[w.0].value;
                    let d_in = self.nodes[h.0].value.cols();
                    let d = Matrix::from_fn(g.rows(), d_in, |r, i| {
                        let wrow = &wv.row(r / group)[i * d_out..(i + 1) * d_out];
                        wrow.iter().zip(g.row(r)).map(|(x, y)| x * y).sum()
                    });
                    self.accumulate(h, d);
                }
                if self.is_tracked(w) {
                    let hv = self.nodes[h.0].value.clone();
                    self.accumulate_with(w, |gw| {
                        for r in 0..g.rows() {
                            let gr = g.row(r);
                            let hr = hv.row(r);
                            let wr = gw.row_mut(r / group);
                            for (i, &hvi) in hr.iter().enumerate() {
                                if hvi == 0.0 {
                                    continue;
                                }
                                for (x, gy) in wr[i * d_out..(i + 1) * d_out].iter_mut().zip(gr) {
                                    *x += hvi * gy;
                                }
                            }
                        }
                    });
                }
            }
            Op::Attention { x, spec, probs } => {
                let xv = &self.nodes[x.0].value;
                let d = attention_backward(xv, spec, probs, g);
                self.accumulate(*x, d);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("shapes checked at record time")
}

/// Summed BCE over unmasked entries with probability clamping.
pub fn bce_sum(pred: &[f64], targets: &[f64], mask: &[bool]) -> f64 {
    pred.iter()
        .zip(targets)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &t), _)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum()
}

fn softmax_into(input: &[f64], out: &mut [f64]) {
    if input.is_empty() {
        return;
    }
    let max = input.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(input) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn softmax_backward(p: &[f64], g: &[f64], d: &mut [f64]) {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((dv, &pv), &gv) in d.iter_mut().zip(p).zip(g) {
        *dv = pv * (gv - dot);
    }
}

#[inline]
fn key_allowed(spec: &AttentionSpec, len: usize, i: usize, j: usize) -> bool {
    j < len && (!spec.causal || j <= i)
}

/// Returns the concatenated head outputs and the per-(sequence, head)
/// softmax matrices (before key weighting), flattened.
fn attention_forward(x: &Matrix, spec: &AttentionSpec) -> (Matrix, Vec<f64>) {
    let (t, h) = (spec.seq, spec.heads);
    let dh = x.cols() / h;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut probs = vec![0.0; spec.batch * h * t * t];
    let mut logits = vec![0.0; t];
    for b in 0..spec.batch {
        let len = spec.lengths[b].min(t);
        let base = b * t;
        for head in 0..h {
            let c0 = head * dh;
            let pblock = &mut probs[(b * h + head) * t * t..(b * h + head + 1) * t * t];
            for i in 0..t {
                let qi = &x.row(base + i)[c0..c0 + dh];
                let allowed: Vec<usize> = (0..t).filter(|&j| key_allowed(spec, len, i, j)).collect();
                if allowed.is_empty() {
                    continue;
                }
                for &j in &allowed {
                    let kj = &x.row(base + j)[c0..c0 + dh];
                    logits[j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt;
                }
                let max = allowed.iter().map(|&j| logits[j]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for &j in &allowed {
                    let e = (logits[j] - max).exp();
                    pblock[i * t + j] = e;
                    total += e;
                }
                for &j in &allowed {
                    pblock[i * t + j] /= total;
                }
                let orow = &mut out.row_mut(base + i)[c0..c0 + dh];
                for &j in &allowed {
                    let a = pblock[i * t + j] * spec.key_weights[base + j];
                    if a == 0.0 {
                        continue;
                    }
                    let vj = &x.row(base + j)[c0..c0 + dh];
                    for (o, v) in orow.iter_mut().zip(vj) {
                        *o += a * v;
                    }
                }
            }
        }
    }
    (out, probs)
}

fn attention_backward(x: &Matrix, spec: &AttentionSpec, probs: &[f64], g: &Matrix) -> Matrix {
    let (t, h) = (spec.seq, spec.heads);
    let dh = x.cols() / h;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let mut dp = vec![0.0; t];
    for b in 0..spec.batch {
        let len = spec.lengths[b].min(t);
        let base = b * t;
        for head in 0..h {
            let c0 = head * dh;
            let pblock = &probs[(b * h + head) * t * t..(b * h + head + 1) * t * t];
            for i in 0..t {
                let gi: Vec<f64> = g.row(base + i)[c0..c0 + dh].to_vec();
                if gi.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let allowed: Vec<usize> = (0..t).filter(|&j| key_allowed(spec, len, i, j)).collect();
                if allowed.is_empty() {
                    continue;
                }
                // O_i = Σ_j w_j P_ij V_j
                for &j in &allowed {
                    let w = spec.key_weights[base + j];
                    let vj = &x.row(base + j)[c0..c0 + dh];
                    dp[j] = w * gi.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                    let a = w * pblock[i * t + j];
                    if a != 0.0 {
                        let dvj = &mut dx.row_mut(base + j)[c0..c0 + dh];
                        for (d, gv) in dvj.iter_mut().zip(&gi) {
                            *d += a * gv;
                        }
                    }
                }
                let dot: f64 = allowed.iter().map(|&j| dp[j] * pblock[i * t + j]).sum();
                // dS_ij = P_ij (dP_ij - Σ_l dP_il P_il), S_ij = q_i·k_j / √dh
                let qi: Vec<f64> = x.row(base + i)[c0..c0 + dh].to_vec();
                let mut dqi = vec![0.0; dh];
                for &j in &allowed {
                    let ds = pblock[i * t + j] * (dp[j] - dot) * inv_sqrt;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj: Vec<f64> = x.row(base + j)[c0..c0 + dh].to_vec();
                    for (d, k) in dqi.iter_mut().zip(&kj) {
                        *d += ds * k;
                    }
                    let dkj = &mut dx.row_mut(base + j)[c0..c0 + dh];
                    for (d, q) in dkj.iter_mut().zip(&qi) {
                        *d += ds * q;
                    }
                }
                for (d, v) in dx.row_mut(base + i)[c0..c0 + dh].iter_mut().zip(&dqi) {
                    *d += v;
                }
            }
        }
    }
    dx
}
