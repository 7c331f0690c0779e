//! Multi-head graph attention with top-k coefficient pooling.
//!
//! One layer, per head `k`:
//!
//! ```text
//! z     = h W_k
//! e_ij  = LeakyReLU(a_k[..d]·z_i + a_k[d..]·z_j)        for every edge i -> j
//! α_i·  = softmax over i's edges, then top-k mask + renormalize
//! m_i   = Σ_j α_ij z_j
//! ```
//!
//! Heads are concatenated (hidden layers) or averaged (final layer), then
//! passed through ELU. Dropout hits the layer input and the coefficients.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::tensor::{EdgeIndex, GradientTape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Concat,
    Mean,
}

/// What the top-k pooling ranks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopkMode {
    /// Per node, keep the largest `ceil(ρ·|N_i|)` outgoing coefficients.
    Coefficient,
    /// Per graph, keep the `ceil(ρ·|V|)` nodes receiving the most attention;
    /// edges into dropped nodes are removed (self-loops always stay).
    Node,
}

impl std::str::FromStr for TopkMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coefficient" => Ok(TopkMode::Coefficient),
            "node" => Ok(TopkMode::Node),
            _ => Err(Error::Config(format!(
                "unknown top-k mode {s:?} (expected coefficient or node)"
            ))),
        }
    }
}

impl std::fmt::Display for TopkMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TopkMode::Coefficient => "coefficient",
            TopkMode::Node => "node",
        })
    }
}

/// Per-head parameters: `w` is `d_in x d_head`, `a` is `2·d_head x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub w: Tensor,
    pub a: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatLayerParams {
    pub heads: Vec<HeadParams>,
    pub aggregation: Aggregation,
}

/// Hyperparameters shared by every layer of a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionOptions {
    pub leaky_slope: f64,
    pub topk_ratio: f64,
    pub topk_mode: TopkMode,
    pub dropout: f64,
}

impl Default for AttentionOptions {
    fn default() -> Self {
        AttentionOptions {
            leaky_slope: 0.2,
            topk_ratio: 0.8,
            topk_mode: TopkMode::Coefficient,
            dropout: 0.2,
        }
    }
}

impl AttentionOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.leaky_slope.is_finite() && self.leaky_slope > 0.0) {
            return Err(Error::Config(format!("leaky_slope {} must be positive", self.leaky_slope)));
        }
        if !(self.topk_ratio > 0.0 && self.topk_ratio <= 1.0) {
            return Err(Error::Config(format!("topk_ratio {} must lie in (0, 1]", self.topk_ratio)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Uniform Glorot initialization for a `fan_in x fan_out` matrix.
pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(fan_in, fan_out, data).expect("length matches shape")
}

impl GatLayerParams {
    pub fn glorot<R: Rng + ?Sized>(
        d_in: usize,
        d_head: usize,
        heads: usize,
        aggregation: Aggregation,
        rng: &mut R,
    ) -> Result<Self> {
        if d_in == 0 || d_head == 0 || heads == 0 {
            return Err(Error::Invalid(format!(
                "layer needs positive sizes, got d_in {d_in}, d_head {d_head}, heads {heads}"
            )));
        }
        let heads = (0..heads)
            .map(|_| HeadParams {
                w: glorot(d_in, d_head, rng),
                a: glorot(2 * d_head, 1, rng),
            })
            .collect();
        Ok(GatLayerParams { heads, aggregation })
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn input_dim(&self) -> usize {
        self.heads[0].w.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.heads[0].w.cols()
    }

    pub fn output_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::Concat => self.head_dim() * self.num_heads(),
            Aggregation::Mean => self.head_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d_in, d) = (self.input_dim(), self.head_dim());
        for (k, h) in self.heads.iter().enumerate() {
            if h.w.shape() != (d_in, d) || h.a.shape() != (2 * d, 1) {
                return Err(Error::shape(
                    "GatLayerParams",
                    format!(
                        "head {k}: W {:?}, a {:?}, expected ({d_in}, {d}) and ({}, 1)",
                        h.w.shape(),
                        h.a.shape(),
                        2 * d
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Tape handles for one layer's parameters, head by head.
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub heads: Vec<(Var, Var)>,
    pub aggregation: Aggregation,
}

impl LayerVars {
    pub fn bind(tape: &mut GradientTape, params: &GatLayerParams, trainable: bool) -> Self {
        let heads = params
            .heads
            .iter()
            .map(|h| {
                if trainable {
                    (tape.param(h.w.clone()), tape.param(h.a.clone()))
                } else {
                    (tape.constant(h.w.clone()), tape.constant(h.a.clone()))
                }
            })
            .collect();
        LayerVars {
            heads,
            aggregation: params.aggregation,
        }
    }
}

/// Edge structure of a (batched) graph plus the tie-break ranks.
#[derive(Clone, Debug)]
pub struct GraphContext {
    pub edges: Arc<EdgeIndex>,
    pub ranks: Vec<u32>,
    pub offsets: Vec<usize>,
}

impl GraphContext {
    pub fn from_batch(batch: &GraphBatch) -> Self {
        GraphContext {
            edges: Arc::clone(batch.edges()),
            ranks: batch.ranks.clone(),
            offsets: batch.offsets.clone(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.edges.num_nodes()
    }

    fn graph_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let n = self.num_nodes();
        self.offsets
            .iter()
            .enumerate()
            .map(move |(g, &s)| s..self.offsets.get(g + 1).copied().unwrap_or(n))
    }
}

/// Number of survivors out of `n` at ratio `ratio` (at least one).
pub fn topk_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1.min(n), n)
}

/// Keep flags per edge for the top-k pooling. Ties go to the lower rank,
/// then the lower node index.
pub fn topk_keep(alpha: &[f64], ctx: &GraphContext, ratio: f64, mode: TopkMode) -> Vec<bool> {
    let edges = &ctx.edges;
    let order = |a: &(f64, usize), b: &(f64, usize)| {
        b.0.total_cmp(&a.0)
            .then(ctx.ranks[a.1].cmp(&ctx.ranks[b.1]))
            .then(a.1.cmp(&b.1))
    };
    let mut keep = vec![false; edges.num_edges()];
    match mode {
        TopkMode::Coefficient => {
            for i in 0..edges.num_nodes() {
                let seg = edges.segment(i);
                let k = topk_count(seg.len(), ratio);
                let mut cand: Vec<(f64, usize, usize)> =
                    seg.map(|e| (alpha[e], edges.target(e), e)).collect();
                cand.sort_by(|a, b| order(&(a.0, a.1), &(b.0, b.1)));
                for &(_, _, e) in &cand[..k] {
                    keep[e] = true;
                }
            }
        }
        TopkMode::Node => {
            let mut received = vec![0.0; edges.num_nodes()];
            for (e, _, j) in edges.iter() {
                received[j] += alpha[e];
            }
            let mut kept_node = vec![false; edges.num_nodes()];
            for range in ctx.graph_ranges() {
                let k = topk_count(range.len(), ratio);
                let mut cand: Vec<(f64, usize)> = range.map(|j| (received[j], j)).collect();
                cand.sort_by(order);
                for &(_, j) in &cand[..k] {
                    kept_node[j] = true;
                }
            }
            for (e, i, j) in edges.iter() {
                keep[e] = kept_node[j] || i == j;
            }
        }
    }
    keep
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
        .collect()
}

pub fn apply_dropout<R: Rng + ?Sized>(t: &Tensor, rate: f64, rng: &mut R, training: bool) -> Tensor {
    if !training || rate == 0.0 {
        return t.clone();
    }
    let mask = dropout_mask(t.len(), rate, rng);
    let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Tensor::new(t.rows(), t.cols(), data).expect("same shape")
}

fn maybe_dropout<R: Rng + ?Sized>(tape: &mut GradientTape, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let mask = dropout_mask(tape.value(x).len(), rate, rng);
            tape.mask_mul(x, mask)
        }
        _ => Ok(x),
    }
}

/// Raw per-edge logits `e_ij` for one head, in edge-storage order.
pub fn head_logits(
    tape: &mut GradientTape,
    z: Var,
    a: Var,
    ctx: &GraphContext,
    slope: f64,
) -> Result<Var> {
    let d = tape.value(z).cols();
    if tape.value(a).shape() != (2 * d, 1) {
        return Err(Error::shape(
            "attention",
            format!("attention vector {:?} for head dim {d}", tape.value(a).shape()),
        ));
    }
    let a_src = tape.slice_rows(a, 0, d)?;
    let a_dst = tape.slice_rows(a, d, d)?;
    let s = tape.matmul(z, a_src)?;
    let t = tape.matmul(z, a_dst)?;
    let e = tape.edge_scores(s, t, &ctx.edges)?;
    tape.leaky_relu(e, slope)
}

/// One GAT layer on the tape. `rng` enables dropout (training mode).
pub fn layer_forward<R: Rng + ?Sized>(
    tape: &mut GradientTape,
    h: Var,
    layer: &LayerVars,
    ctx: &GraphContext,
    opts: &AttentionOptions,
    apply_topk: bool,
    mut rng: Option<&mut R>,
) -> Result<Var> {
    let (rows, d_in) = tape.value(h).shape();
    if rows != ctx.num_nodes() {
        return Err(Error::shape(
            "gat_layer",
            format!("{rows} feature rows for {} nodes", ctx.num_nodes()),
        ));
    }
    let h = maybe_dropout(tape, h, opts.dropout, rng.as_deref_mut())?;
    let mut messages = Vec::with_capacity(layer.heads.len());
    for &(w, a) in &layer.heads {
        if tape.value(w).rows() != d_in {
            return Err(Error::shape(
                "gat_layer",
                format!("W has {} rows, features have {d_in} columns", tape.value(w).rows()),
            ));
        }
        let z = tape.matmul(h, w)?;
        let e = head_logits(tape, z, a, ctx, opts.leaky_slope)?;
        let mut alpha = tape.segment_softmax(e, &ctx.edges)?;
        if apply_topk && opts.topk_ratio < 1.0 {
            let keep = topk_keep(tape.value(alpha).data(), ctx, opts.topk_ratio, opts.topk_mode);
            alpha = tape.segment_renormalize(alpha, keep, &ctx.edges)?;
        }
        let alpha = maybe_dropout(tape, alpha, opts.dropout, rng.as_deref_mut())?;
        messages.push(tape.edge_aggregate(alpha, z, &ctx.edges)?);
    }
    let combined = match layer.aggregation {
        Aggregation::Concat => tape.concat_cols(&messages)?,
        Aggregation::Mean => {
            let mut acc = messages[0];
            for &m in &messages[1..] {
                acc = tape.add(acc, m)?;
            }
            tape.scale(acc, 1.0 / messages.len() as f64)?
        }
    };
    tape.elu(combined, 1.0)
}

// Untraced conveniences over the same code path.

fn no_rng() -> Option<&'static mut rand_chacha::ChaCha8Rng> {
    None
}

/// Per-edge logits of every head (edge-storage order), for inspection.
pub fn attention_logits(h: &Tensor, params: &GatLayerParams, ctx: &GraphContext, slope: f64) -> Result<Vec<Tensor>> {
    params
        .heads
        .iter()
        .map(|head| {
            let mut tape = GradientTape::new();
            let (hv, w, a) = (
                tape.constant(h.clone()),
                tape.constant(head.w.clone()),
                tape.constant(head.a.clone()),
            );
            let z = tape.matmul(hv, w)?;
            let e = head_logits(&mut tape, z, a, ctx, slope)?;
            Ok(tape.value(e).clone())
        })
        .collect()
}

/// Neighborhood softmax of per-edge logits.
pub fn normalize_attention(logits: &Tensor, ctx: &GraphContext) -> Result<Tensor> {
    let mut tape = GradientTape::new();
    let e = tape.constant(logits.clone());
    let a = tape.segment_softmax(e, &ctx.edges)?;
    Ok(tape.value(a).clone())
}

/// Top-k masking followed by survivor renormalization.
pub fn topk_mask(alpha: &Tensor, ctx: &GraphContext, ratio: f64, mode: TopkMode) -> Result<Tensor> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Invalid(format!("top-k ratio {ratio} must lie in (0, 1]")));
    }
    if ratio == 1.0 {
        return Ok(alpha.clone());
    }
    let keep = topk_keep(alpha.data(), ctx, ratio, mode);
    let mut tape = GradientTape::new();
    let a = tape.constant(alpha.clone());
    let out = tape.segment_renormalize(a, keep, &ctx.edges)?;
    Ok(tape.value(out).clone())
}

/// Full layer output without dropout.
pub fn layer_output(h: &Tensor, params: &GatLayerParams, ctx: &GraphContext, opts: &AttentionOptions, apply_topk: bool) -> Result<Tensor> {
    params.validate()?;
    let mut tape = GradientTape::new();
    let hv = tape.constant(h.clone());
    let vars = LayerVars::bind(&mut tape, params, false);
    let out = layer_forward(&mut tape, hv, &vars, ctx, opts, apply_topk, no_rng())?;
    Ok(tape.value(out).clone())
}
