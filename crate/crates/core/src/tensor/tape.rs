// Reverse-mode AD over a linear (Wengert) tape.
//
// Nodes are appended in execution order, so inputs always precede their
// consumers and a single reverse sweep visits every node exactly once.
// Intermediate values are kept on the tape; nothing is recomputed in backward.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{concat_cols, EdgeIndex, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`GradientTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    LeakyRelu(usize, f64),
    Elu(usize, f64),
    Exp(usize),
    Log(usize),
    ConcatCols(Vec<usize>),
    SliceRows { input: usize, start: usize },
    SumAll(usize),
    SegmentMean { input: usize, offsets: Vec<usize> },
    SoftmaxRows(usize),
    SoftmaxMasked { input: usize },
    EdgeScores { src: usize, dst: usize, edges: Arc<EdgeIndex> },
    SegmentSoftmax { input: usize, edges: Arc<EdgeIndex> },
    SegmentRenormalize { input: usize, keep: Vec<bool>, edges: Arc<EdgeIndex> },
    EdgeAggregate { alpha: usize, values: usize, edges: Arc<EdgeIndex> },
    MaskMul { input: usize, mask: Vec<f64> },
    NllFromProbs { probs: usize, labels: Vec<usize>, floor: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations on [`Tensor`] values for a single forward pass.
///
/// Single-threaded. Independent tapes may run on different threads.
#[derive(Debug)]
pub struct GradientTape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for GradientTape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`GradientTape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` if `var` does not
    /// require gradients or the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but returns zeros shaped like `like` when absent.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

impl GradientTape {
    pub fn new() -> Self {
        GradientTape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, var: Var) -> &Tensor {
        self.idx(var).map(|i| &self.nodes[i].value).expect("var from a different tape")
    }

    fn idx(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::Tape(format!(
                "variable {:?} is not recorded on the active tape",
                var
            )));
        }
        Ok(var.index)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let out = self.val(a).matmul(self.val(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let out = self.val(a).add(self.val(b))?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let out = self.val(a).sub(self.val(b))?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let out = self.val(a).mul(self.val(b))?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let a = self.idx(a)?;
        let out = self.val(a).scale(factor);
        self.push("scale", out, Op::Scale(a, factor), &[a])
    }

    /// `a + row` with `row` (1 x cols) broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (a, row) = (self.idx(a)?, self.idx(row)?);
        let out = self.val(a).add_row(self.val(row))?;
        self.push("add_row", out, Op::AddRow(a, row), &[a, row])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let a = self.idx(a)?;
        let out = self.val(a).leaky_relu(slope)?;
        self.push("leaky_relu", out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Result<Var> {
        let a = self.idx(a)?;
        let out = self.val(a).elu(alpha)?;
        self.push("elu", out, Op::Elu(a, alpha), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let out = self.val(a).exp();
        self.push("exp", out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let out = self.val(a).log()?;
        self.push("log", out, Op::Log(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let values: Vec<&Tensor> = idx.iter().map(|&i| self.val(i)).collect();
        let out = concat_cols(&values)?;
        self.push("concat_cols", out, Op::ConcatCols(idx.clone()), &idx)
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let a = self.idx(a)?;
        let src = self.val(a);
        if start + len > src.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {}", start + len, src.rows()),
            ));
        }
        let cols = src.cols();
        let data = src.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::new(len, cols, data)?;
        self.push("slice_rows", out, Op::SliceRows { input: a, start }, &[a])
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let out = Tensor::scalar(self.val(a).sum());
        self.push("sum", out, Op::SumAll(a), &[a])
    }

    /// Mean of each row block; `offsets` are block start rows (first must be 0).
    pub fn segment_mean(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let a = self.idx(a)?;
        let src = self.val(a);
        let n = src.rows();
        if offsets.first() != Some(&0) || offsets.windows(2).any(|w| w[0] >= w[1]) || offsets.last().is_some_and(|&l| l >= n) {
            return Err(Error::shape(
                "segment_mean",
                format!("offsets {offsets:?} do not partition {n} rows into non-empty blocks"),
            ));
        }
        let cols = src.cols();
        let mut out = Tensor::zeros(offsets.len(), cols);
        for (g, range) in block_ranges(offsets, n).enumerate() {
            let count = range.len() as f64;
            let dst = out.row_mut(g);
            for r in range {
                for (o, v) in dst.iter_mut().zip(src.row(r)) {
                    *o += v;
                }
            }
            for o in dst.iter_mut() {
                *o /= count;
            }
        }
        let offsets = offsets.to_vec();
        self.push("segment_mean", out, Op::SegmentMean { input: a, offsets }, &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let out = self.val(a).softmax_rows();
        self.push("softmax_rows", out, Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise softmax restricted to entries where `mask` (row-major, same
    /// shape as `a`) is true; masked outputs are exactly zero.
    pub fn softmax_masked(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let a = self.idx(a)?;
        let src = self.val(a);
        if mask.len() != src.len() {
            return Err(Error::shape(
                "softmax_masked",
                format!("mask of {} for {} entries", mask.len(), src.len()),
            ));
        }
        let cols = src.cols();
        let mut out = Tensor::zeros(src.rows(), cols);
        for r in 0..src.rows() {
            let row = super::softmax_masked(src.row(r), &mask[r * cols..(r + 1) * cols])
                .map_err(|_| Error::AllMasked { row: r })?;
            out.row_mut(r).copy_from_slice(&row);
        }
        self.push("softmax_masked", out, Op::SoftmaxMasked { input: a }, &[a])
    }

    /// Per-edge `src[i] + dst[j]` for every edge `i -> j`; inputs are `n x 1`.
    pub fn edge_scores(&mut self, src: Var, dst: Var, edges: &Arc<EdgeIndex>) -> Result<Var> {
        let (s, d) = (self.idx(src)?, self.idx(dst)?);
        let n = edges.num_nodes();
        for (name, i) in [("source", s), ("target", d)] {
            if self.val(i).shape() != (n, 1) {
                return Err(Error::shape(
                    "edge_scores",
                    format!("{name} scores {:?}, expected ({n}, 1)", self.val(i).shape()),
                ));
            }
        }
        let (sv, dv) = (self.val(s).data(), self.val(d).data());
        let data = edges.iter().map(|(_, i, j)| sv[i] + dv[j]).collect();
        let out = Tensor::new(edges.num_edges(), 1, data)?;
        let op = Op::EdgeScores { src: s, dst: d, edges: Arc::clone(edges) };
        self.push("edge_scores", out, op, &[s, d])
    }

    /// Softmax of per-edge logits within each source node's segment.
    pub fn segment_softmax(&mut self, logits: Var, edges: &Arc<EdgeIndex>) -> Result<Var> {
        let a = self.idx(logits)?;
        self.check_edge_column("segment_softmax", a, edges)?;
        let mut out = self.val(a).clone();
        for i in 0..edges.num_nodes() {
            let seg = edges.segment(i);
            if !seg.is_empty() {
                super::softmax_in_place(&mut out.data_mut()[seg]);
            }
        }
        let op = Op::SegmentSoftmax { input: a, edges: Arc::clone(edges) };
        self.push("segment_softmax", out, op, &[a])
    }

    /// Zeroes edges with `keep[e] == false` and rescales each segment's
    /// survivors to sum to one. The selection is constant under
    /// differentiation.
    pub fn segment_renormalize(&mut self, weights: Var, keep: Vec<bool>, edges: &Arc<EdgeIndex>) -> Result<Var> {
        let a = self.idx(weights)?;
        self.check_edge_column("segment_renormalize", a, edges)?;
        if keep.len() != edges.num_edges() {
            return Err(Error::shape(
                "segment_renormalize",
                format!("{} keep flags for {} edges", keep.len(), edges.num_edges()),
            ));
        }
        let src = self.val(a).data();
        let mut out = vec![0.0; src.len()];
        for i in 0..edges.num_nodes() {
            let seg = edges.segment(i);
            if seg.is_empty() {
                continue;
            }
            let total: f64 = seg.clone().filter(|&e| keep[e]).map(|e| src[e]).sum();
            if total <= 0.0 {
                return Err(Error::NonFinite { op: "segment_renormalize" });
            }
            for e in seg.filter(|&e| keep[e]) {
                out[e] = src[e] / total;
            }
        }
        let out = Tensor::new(src.len(), 1, out)?;
        let op = Op::SegmentRenormalize { input: a, keep, edges: Arc::clone(edges) };
        self.push("segment_renormalize", out, op, &[a])
    }

    /// `out[i] = sum over edges i -> j of alpha[e] * values[j]`.
    pub fn edge_aggregate(&mut self, alpha: Var, values: Var, edges: &Arc<EdgeIndex>) -> Result<Var> {
        let (a, v) = (self.idx(alpha)?, self.idx(values)?);
        self.check_edge_column("edge_aggregate", a, edges)?;
        let vals = self.val(v);
        if vals.rows() != edges.num_nodes() {
            return Err(Error::shape(
                "edge_aggregate",
                format!("{} value rows for {} nodes", vals.rows(), edges.num_nodes()),
            ));
        }
        let weights = self.val(a).data();
        let mut out = Tensor::zeros(vals.rows(), vals.cols());
        for (e, i, j) in edges.iter() {
            let w = weights[e];
            let src = vals.row(j);
            for (o, x) in out.row_mut(i).iter_mut().zip(src) {
                *o += w * x;
            }
        }
        let op = Op::EdgeAggregate { alpha: a, values: v, edges: Arc::clone(edges) };
        self.push("edge_aggregate", out, op, &[a, v])
    }

    /// Entry-wise product with a constant multiplier (dropout masks).
    pub fn mask_mul(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let a = self.idx(a)?;
        let src = self.val(a);
        if mask.len() != src.len() {
            return Err(Error::shape(
                "mask_mul",
                format!("mask of {} for {} entries", mask.len(), src.len()),
            ));
        }
        let data = src.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(src.rows(), src.cols(), data)?;
        self.push("mask_mul", out, Op::MaskMul { input: a, mask }, &[a])
    }

    /// Mean negative log-likelihood of `labels` under row probabilities,
    /// with probabilities floored at `floor` before the log.
    pub fn nll_from_probs(&mut self, probs: Var, labels: &[usize], floor: f64) -> Result<Var> {
        let p = self.idx(probs)?;
        let src = self.val(p);
        if labels.len() != src.rows() || labels.is_empty() {
            return Err(Error::shape(
                "nll_from_probs",
                format!("{} labels for {} probability rows", labels.len(), src.rows()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= src.cols()) {
            return Err(Error::shape(
                "nll_from_probs",
                format!("label {bad} outside {} classes", src.cols()),
            ));
        }
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(g, &y)| -src.get(g, y).max(floor).ln())
            .sum();
        let out = Tensor::scalar(total / labels.len() as f64);
        let op = Op::NllFromProbs { probs: p, labels: labels.to_vec(), floor };
        self.push("nll_from_probs", out, op, &[p])
    }

    fn check_edge_column(&self, op: &'static str, i: usize, edges: &EdgeIndex) -> Result<()> {
        let shape = self.val(i).shape();
        if shape != (edges.num_edges(), 1) {
            return Err(Error::shape(
                op,
                format!("per-edge input {shape:?}, expected ({}, 1)", edges.num_edges()),
            ));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let root = self.idx(loss)?;
        if self.nodes[root].value.shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {:?}", self.nodes[root].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root] = Some(Tensor::scalar(1.0));

        for k in (0..=root).rev() {
            let node = &self.nodes[k];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[k].take() else { continue };
            let needs = |i: usize| self.nodes[i].requires_grad;
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[k] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if needs(*a) {
                        let da = g.matmul(&self.nodes[*b].value.transpose())?;
                        accumulate(&mut grads[*a], da);
                    }
                    if needs(*b) {
                        let db = self.nodes[*a].value.transpose().matmul(&g)?;
                        accumulate(&mut grads[*b], db);
                    }
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads[*a], g.clone());
                    }
                    if needs(*b) {
                        accumulate(&mut grads[*b], g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads[*a], g.clone());
                    }
                    if needs(*b) {
                        accumulate(&mut grads[*b], g.scale(-1.0));
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads[*a], g.mul(&self.nodes[*b].value)?);
                    }
                    if needs(*b) {
                        accumulate(&mut grads[*b], g.mul(&self.nodes[*a].value)?);
                    }
                }
                Op::Scale(a, factor) => {
                    accumulate(&mut grads[*a], g.scale(*factor));
                }
                Op::AddRow(a, row) => {
                    if needs(*row) {
                        let mut db = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (d, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                                *d += x;
                            }
                        }
                        accumulate(&mut grads[*row], db);
                    }
                    if needs(*a) {
                        accumulate(&mut grads[*a], g);
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let x = &self.nodes[*a].value;
                    let mut d = g;
                    for (gv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                        if xv < 0.0 {
                            *gv *= slope;
                        }
                    }
                    accumulate(&mut grads[*a], d);
                }
                Op::Elu(a, alpha) => {
                    let x = &self.nodes[*a].value;
                    let mut d = g;
                    for ((gv, &xv), &yv) in d.data_mut().iter_mut().zip(x.data()).zip(out.data()) {
                        if xv < 0.0 {
                            *gv *= yv + alpha;
                        }
                    }
                    accumulate(&mut grads[*a], d);
                }
                Op::Exp(a) => {
                    accumulate(&mut grads[*a], g.mul(out)?);
                }
                Op::Log(a) => {
                    let x = &self.nodes[*a].value;
                    let d = Tensor::new(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(x.data()).map(|(gv, xv)| gv / xv).collect(),
                    )?;
                    accumulate(&mut grads[*a], d);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let width = self.nodes[p].value.cols();
                        if needs(p) {
                            let mut d = Tensor::zeros(g.rows(), width);
                            for r in 0..g.rows() {
                                d.row_mut(r).copy_from_slice(&g.row(r)[col..col + width]);
                            }
                            accumulate(&mut grads[p], d);
                        }
                        col += width;
                    }
                }
                Op::SliceRows { input, start } => {
                    let src = &self.nodes[*input].value;
                    let mut d = Tensor::zeros(src.rows(), src.cols());
                    let cols = src.cols();
                    d.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads[*input], d);
                }
                Op::SumAll(a) => {
                    let src = &self.nodes[*a].value;
                    accumulate(&mut grads[*a], Tensor::filled(src.rows(), src.cols(), g.data()[0]));
                }
                Op::SegmentMean { input, offsets } => {
                    let src = &self.nodes[*input].value;
                    let mut d = Tensor::zeros(src.rows(), src.cols());
                    for (b, range) in block_ranges(offsets, src.rows()).enumerate() {
                        let inv = 1.0 / range.len() as f64;
                        for r in range {
                            for (dv, gv) in d.row_mut(r).iter_mut().zip(g.row(b)) {
                                *dv = gv * inv;
                            }
                        }
                    }
                    accumulate(&mut grads[*input], d);
                }
                Op::SoftmaxRows(a) | Op::SoftmaxMasked { input: a } => {
                    let mut d = Tensor::zeros(out.rows(), out.cols());
                    for r in 0..out.rows() {
                        softmax_backward(out.row(r), g.row(r), d.row_mut(r));
                    }
                    accumulate(&mut grads[*a], d);
                }
                Op::EdgeScores { src, dst, edges } => {
                    let n = edges.num_nodes();
                    let mut ds = vec![0.0; n];
                    let mut dd = vec![0.0; n];
                    for (e, i, j) in edges.iter() {
                        ds[i] += g.data()[e];
                        dd[j] += g.data()[e];
                    }
                    if needs(*src) {
                        accumulate(&mut grads[*src], Tensor::column(&ds));
                    }
                    if needs(*dst) {
                        accumulate(&mut grads[*dst], Tensor::column(&dd));
                    }
                }
                Op::SegmentSoftmax { input, edges } => {
                    let mut d = vec![0.0; out.len()];
                    for i in 0..edges.num_nodes() {
                        let seg = edges.segment(i);
                        softmax_backward(&out.data()[seg.clone()], &g.data()[seg.clone()], &mut d[seg]);
                    }
                    accumulate(&mut grads[*input], Tensor::column(&d));
                }
                Op::SegmentRenormalize { input, keep, edges } => {
                    let src = self.nodes[*input].value.data();
                    let mut d = vec![0.0; out.len()];
                    for i in 0..edges.num_nodes() {
                        let seg = edges.segment(i);
                        let total: f64 = seg.clone().filter(|&e| keep[e]).map(|e| src[e]).sum();
                        let dot: f64 = seg.clone().map(|e| out.data()[e] * g.data()[e]).sum();
                        for e in seg.filter(|&e| keep[e]) {
                            d[e] = (g.data()[e] - dot) / total;
                        }
                    }
                    accumulate(&mut grads[*input], Tensor::column(&d));
                }
                Op::EdgeAggregate { alpha, values, edges } => {
                    let vals = &self.nodes[*values].value;
                    let weights = self.nodes[*alpha].value.data();
                    if needs(*alpha) {
                        let da: Vec<f64> = edges
                            .iter()
                            .map(|(_, i, j)| g.row(i).iter().zip(vals.row(j)).map(|(a, b)| a * b).sum())
                            .collect();
                        accumulate(&mut grads[*alpha], Tensor::column(&da));
                    }
                    if needs(*values) {
                        let mut dv = Tensor::zeros(vals.rows(), vals.cols());
                        for (e, i, j) in edges.iter() {
                            let w = weights[e];
                            let gi = g.row(i).to_vec();
                            for (d, x) in dv.row_mut(j).iter_mut().zip(&gi) {
                                *d += w * x;
                            }
                        }
                        accumulate(&mut grads[*values], dv);
                    }
                }
                Op::MaskMul { input, mask } => {
                    let data = g.data().iter().zip(mask).map(|(a, b)| a * b).collect();
                    accumulate(&mut grads[*input], Tensor::new(g.rows(), g.cols(), data)?);
                }
                Op::NllFromProbs { probs, labels, floor } => {
                    let p = &self.nodes[*probs].value;
                    let mut d = Tensor::zeros(p.rows(), p.cols());
                    let scale = g.data()[0] / labels.len() as f64;
                    for (r, &y) in labels.iter().enumerate() {
                        let pv = p.get(r, y);
                        if pv > *floor {
                            d.set(r, y, -scale / pv);
                        }
                    }
                    accumulate(&mut grads[*probs], d);
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

fn block_ranges(offsets: &[usize], total: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
    offsets
        .iter()
        .enumerate()
        .map(move |(b, &start)| start..offsets.get(b + 1).copied().unwrap_or(total))
}

fn softmax_backward(y: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &yv), &gv) in out.iter_mut().zip(y).zip(g) {
        *o = yv * (gv - dot);
    }
}
