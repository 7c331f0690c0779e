//! The residual GAT stack, mean-pool readout and softmax classifier.
//!
//! ```text
//! h0  = x W_in + b_in
//! G1  = F1(h0)
//! Gm  = G(m-1) + Fm(G(m-1))         m = 2..n   (plain Fm(G(m-1)) without fusion)
//! out = softmax(mean_nodes(Gn) W_c + b_c)
//! ```

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gat::{self, Aggregation, AttentionOptions, GatLayerParams, GraphContext, LayerVars};
use crate::graph::GraphBatch;
use crate::mix_seed;
use crate::tensor::{GradientTape, Tensor, Var};

pub use crate::train::{search_layers, SearchOutcome};

/// Probabilities are floored at this value before the log in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoImage,
    NoMultihead,
    NoFusion,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_image" => Ok(Variant::NoImage),
            "no_multihead" => Ok(Variant::NoMultihead),
            "no_fusion" => Ok(Variant::NoFusion),
            _ => Err(Error::Config(format!(
                "unknown variant {s:?} (expected full, no_image, no_multihead or no_fusion)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::NoImage => "no_image",
            Variant::NoMultihead => "no_multihead",
            Variant::NoFusion => "no_fusion",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub heads: usize,
    pub multi_head: bool,
    pub attention: AttentionOptions,
    /// Top-k pooling in every layer, or only in the last one.
    pub topk_every_layer: bool,
    pub residual: bool,
    /// Graph construction flag carried with the model so evaluation rebuilds
    /// graphs the same way training did.
    pub include_image: bool,
    pub layers_min: usize,
    pub layers_max: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        ModelConfig {
            input_dim,
            hidden_dim: 64,
            num_classes,
            heads: 4,
            multi_head: true,
            attention: AttentionOptions::default(),
            topk_every_layer: true,
            residual: true,
            include_image: true,
            layers_min: 1,
            layers_max: 4,
            seed: 0,
        }
    }

    pub fn effective_heads(&self) -> usize {
        if self.multi_head {
            self.heads
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("input_dim and hidden_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        let k = self.effective_heads();
        if k == 0 || !self.hidden_dim.is_multiple_of(k) {
            return Err(Error::Config(format!(
                "hidden_dim {} must be a positive multiple of heads {k}",
                self.hidden_dim
            )));
        }
        if self.layers_min == 0 || self.layers_min > self.layers_max {
            return Err(Error::Config(format!(
                "layer range [{}, {}] must satisfy 1 <= min <= max",
                self.layers_min, self.layers_max
            )));
        }
        self.attention.validate()
    }
}

pub fn ablation_variant(config: &ModelConfig, variant: Variant) -> ModelConfig {
    let mut out = config.clone();
    match variant {
        Variant::Full => {}
        Variant::NoImage => out.include_image = false,
        Variant::NoMultihead => out.multi_head = false,
        Variant::NoFusion => out.residual = false,
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MagicModel {
    pub config: ModelConfig,
    pub w_in: Tensor,
    pub b_in: Tensor,
    pub layers: Vec<GatLayerParams>,
    pub w_c: Tensor,
    pub b_c: Tensor,
}

/// Tape handles for every parameter of a model.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub w_in: Var,
    pub b_in: Var,
    pub layers: Vec<LayerVars>,
    pub w_c: Var,
    pub b_c: Var,
}

impl ModelVars {
    /// Handles in [`MagicModel::params`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.w_in, self.b_in];
        for l in &self.layers {
            for &(w, a) in &l.heads {
                out.push(w);
                out.push(a);
            }
        }
        out.push(self.w_c);
        out.push(self.b_c);
        out
    }
}

/// Output handles of a traced forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    pub probs: Var,
}

impl MagicModel {
    /// Glorot-initialized model of depth `num_layers`, seeded from
    /// `(config.seed, num_layers)`.
    pub fn new(config: ModelConfig, num_layers: usize) -> Result<Self> {
        config.validate()?;
        if num_layers == 0 {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, num_layers as u64));
        Self::with_rng(config, num_layers, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(config: ModelConfig, num_layers: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (h, k) = (config.hidden_dim, config.effective_heads());
        let w_in = gat::glorot(config.input_dim, h, rng);
        let b_in = Tensor::zeros(1, h);
        let layers = (1..=num_layers)
            .map(|m| {
                if m < num_layers {
                    GatLayerParams::glorot(h, h / k, k, Aggregation::Concat, rng)
                } else {
                    GatLayerParams::glorot(h, h, k, Aggregation::Mean, rng)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let w_c = gat::glorot(h, config.num_classes, rng);
        let b_c = Tensor::zeros(1, config.num_classes);
        Ok(MagicModel {
            config,
            w_in,
            b_in,
            layers,
            w_c,
            b_c,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Parameters in a fixed order: input projection, each layer's heads
    /// (`W`, `a`), classifier.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.w_in, &self.b_in];
        for l in &self.layers {
            for h in &l.heads {
                out.push(&h.w);
                out.push(&h.a);
            }
        }
        out.push(&self.w_c);
        out.push(&self.b_c);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w_in, &mut self.b_in];
        for l in &mut self.layers {
            for h in &mut l.heads {
                out.push(&mut h.w);
                out.push(&mut h.a);
            }
        }
        out.push(&mut self.w_c);
        out.push(&mut self.b_c);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = vec!["input.w".to_string(), "input.b".to_string()];
        for (m, l) in self.layers.iter().enumerate() {
            for k in 0..l.heads.len() {
                out.push(format!("layer{}.head{k}.w", m + 1));
                out.push(format!("layer{}.head{k}.a", m + 1));
            }
        }
        out.push("classifier.w".into());
        out.push("classifier.b".into());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Checks every parameter shape against the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let (h, k) = (c.hidden_dim, c.effective_heads());
        let check = |name: &str, t: &Tensor, shape: (usize, usize)| {
            if t.shape() != shape {
                return Err(Error::shape(
                    "MagicModel",
                    format!("{name} is {:?}, expected {shape:?}", t.shape()),
                ));
            }
            Ok(())
        };
        check("input.w", &self.w_in, (c.input_dim, h))?;
        check("input.b", &self.b_in, (1, h))?;
        check("classifier.w", &self.w_c, (h, c.num_classes))?;
        check("classifier.b", &self.b_c, (1, c.num_classes))?;
        if self.layers.is_empty() {
            return Err(Error::shape("MagicModel", "no layers"));
        }
        let n = self.layers.len();
        for (m, l) in self.layers.iter().enumerate() {
            let (agg, d_head) = if m + 1 < n { (Aggregation::Concat, h / k) } else { (Aggregation::Mean, h) };
            if l.num_heads() != k || l.aggregation != agg || l.input_dim() != h || l.head_dim() != d_head {
                return Err(Error::shape(
                    "MagicModel",
                    format!("layer {} does not match {k} heads of width {d_head}", m + 1),
                ));
            }
            l.validate()?;
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut GradientTape, trainable: bool) -> ModelVars {
        let w_in = tape_leaf(tape, &self.w_in, trainable);
        let b_in = tape_leaf(tape, &self.b_in, trainable);
        let layers = self
            .layers
            .iter()
            .map(|l| LayerVars::bind(tape, l, trainable))
            .collect();
        let w_c = tape_leaf(tape, &self.w_c, trainable);
        let b_c = tape_leaf(tape, &self.b_c, trainable);
        ModelVars {
            w_in,
            b_in,
            layers,
            w_c,
            b_c,
        }
    }

    /// Traced forward pass. Passing `rng` turns dropout on.
    pub fn forward_traced<R: Rng + ?Sized>(
        &self,
        tape: &mut GradientTape,
        vars: &ModelVars,
        batch: &GraphBatch,
        rng: Option<&mut R>,
    ) -> Result<ForwardVars> {
        if batch.dim() != self.config.input_dim {
            return Err(Error::shape(
                "forward",
                format!("batch dim {} but model input_dim {}", batch.dim(), self.config.input_dim),
            ));
        }
        let ctx = GraphContext::from_batch(batch);
        let x = tape.constant(batch.features.clone());
        let projected = tape.matmul(x, vars.w_in)?;
        let h0 = tape.add_row(projected, vars.b_in)?;
        let g = self.stack(tape, vars, h0, &ctx, rng)?;
        let pooled = tape.segment_mean(g, &batch.offsets)?;
        let scores = tape.matmul(pooled, vars.w_c)?;
        let logits = tape.add_row(scores, vars.b_c)?;
        let probs = tape.softmax_rows(logits)?;
        Ok(ForwardVars { logits, probs })
    }

    fn stack<R: Rng + ?Sized>(
        &self,
        tape: &mut GradientTape,
        vars: &ModelVars,
        h0: Var,
        ctx: &GraphContext,
        mut rng: Option<&mut R>,
    ) -> Result<Var> {
        let n = vars.layers.len();
        let opts = &self.config.attention;
        let mut g = h0;
        for (m, layer) in vars.layers.iter().enumerate() {
            let topk = self.config.topk_every_layer || m + 1 == n;
            let f = gat::layer_forward(tape, g, layer, ctx, opts, topk, rng.as_deref_mut())?;
            g = if m > 0 && self.config.residual { tape.add(g, f)? } else { f };
        }
        Ok(g)
    }

    /// Evaluation-mode logits and probabilities.
    pub fn forward(&self, batch: &GraphBatch) -> Result<(Tensor, Tensor)> {
        let mut tape = GradientTape::new();
        let vars = self.bind(&mut tape, false);
        let out = self.forward_traced::<ChaCha8Rng>(&mut tape, &vars, batch, None)?;
        Ok((tape.value(out.logits).clone(), tape.value(out.probs).clone()))
    }

    /// Evaluation-mode node representations after the last layer.
    pub fn node_states(&self, batch: &GraphBatch) -> Result<Tensor> {
        let mut tape = GradientTape::new();
        let vars = self.bind(&mut tape, false);
        let ctx = GraphContext::from_batch(batch);
        let x = tape.constant(batch.features.clone());
        let projected = tape.matmul(x, vars.w_in)?;
        let h0 = tape.add_row(projected, vars.b_in)?;
        let g = self.stack::<ChaCha8Rng>(&mut tape, &vars, h0, &ctx, None)?;
        Ok(tape.value(g).clone())
    }

    /// Predicted class of every graph (first maximum on ties).
    pub fn predict(&self, batch: &GraphBatch) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(batch)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    /// Mean cross-entropy of `batch` in evaluation mode.
    pub fn loss(&self, batch: &GraphBatch) -> Result<f64> {
        let (_, probs) = self.forward(batch)?;
        loss(&probs, &batch.labels)
    }
}

fn tape_leaf(tape: &mut GradientTape, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        tape.param(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean negative log-likelihood of `labels` under row probabilities `probs`.
pub fn loss(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = GradientTape::new();
    let p = tape.constant(probs.clone());
    let l = tape.nll_from_probs(p, labels, PROB_FLOOR)?;
    Ok(tape.value(l).get(0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{batch, Adjacency, InteractionGraph, NodeKind};

    fn star(dim: usize, comments: usize, seed: u64) -> InteractionGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = comments + 2;
        let mut kinds = vec![NodeKind::Post, NodeKind::Image];
        kinds.extend(std::iter::repeat_n(NodeKind::Comment, comments));
        let edges: Vec<_> = (1..n).map(|c| (0, c)).collect();
        InteractionGraph {
            id: format!("s{seed}"),
            features: gat::glorot(n, dim, &mut rng),
            kinds,
            ranks: (0..n as u32).collect(),
            adjacency: Adjacency::from_undirected(n, &edges).unwrap(),
            label: (seed % 2) as usize,
        }
    }

    fn config(dim: usize) -> ModelConfig {
        ModelConfig {
            hidden_dim: 8,
            heads: 2,
            ..ModelConfig::new(dim, 2)
        }
    }

    #[test]
    fn loss_examples() {
        let p = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(loss(&p, &[1, 0]).unwrap(), 0.0);
        let p = Tensor::from_rows(&[[0.5, 0.5]]).unwrap();
        assert!((loss(&p, &[0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let p = Tensor::from_rows(&[[0.9, 0.1], [0.2, 0.8]]).unwrap();
        let expect = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((loss(&p, &[0, 1]).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.16425).abs() < 1e-5);
    }

    #[test]
    fn shapes_and_normalization() {
        let m = MagicModel::new(config(5), 3).unwrap();
        m.validate().unwrap();
        assert_eq!(m.params().len(), m.param_names().len());
        assert_eq!(m.params().len(), 2 + 3 * 2 * 2 + 2);
        let b = batch(&[star(5, 2, 1), star(5, 0, 2)]).unwrap();
        let (logits, probs) = m.forward(&b).unwrap();
        assert_eq!(logits.shape(), (2, 2));
        for r in 0..2 {
            assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(argmax(probs.row(r)), argmax(logits.row(r)));
        }
    }

    #[test]
    fn ablations() {
        let c = config(4);
        assert_eq!(ablation_variant(&c, Variant::Full), c);
        let nm = ablation_variant(&c, Variant::NoMultihead);
        assert_eq!(nm.effective_heads(), 1);
        assert_eq!(MagicModel::new(nm, 2).unwrap().layers[0].num_heads(), 1);
        assert!(!ablation_variant(&c, Variant::NoImage).include_image);
        assert!(!ablation_variant(&c, Variant::NoFusion).residual);
        assert!("no_images".parse::<Variant>().is_err());
    }

    #[test]
    fn identical_rows_pool_to_themselves() {
        // with identical node features every layer maps all nodes alike
        let mut g = star(3, 2, 4);
        g.features = Tensor::filled(4, 3, 0.7);
        let m = MagicModel::new(config(3), 2).unwrap();
        let b = batch(&[g]).unwrap();
        let states = m.node_states(&b).unwrap();
        for r in 1..4 {
            assert!(states.row(r).iter().zip(states.row(0)).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn rejects_bad_config_and_input() {
        let mut c = config(4);
        c.hidden_dim = 7;
        assert!(MagicModel::new(c, 1).is_err());
        assert!(MagicModel::new(config(4), 0).is_err());
        let m = MagicModel::new(config(4), 1).unwrap();
        assert!(m.forward(&batch(&[star(5, 1, 0)]).unwrap()).is_err());
    }
}
