//! Shared fixtures and independent reference implementations.
#![allow(dead_code)]

use magic_core::gat::{Aggregation, GatLayerParams, TopkMode};
use magic_core::graph::{batch, Adjacency, GraphBatch, InteractionGraph, NodeKind};
use magic_core::model::{MagicModel, ModelConfig, PROB_FLOOR};
use magic_core::tensor::{GradientTape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A post, an optional image, and comments; star edges to the post plus
/// random extra links.
pub fn random_graph<R: Rng>(rng: &mut R, nodes: std::ops::RangeInclusive<usize>, dim: usize, classes: usize) -> InteractionGraph {
    let n = rng.gen_range(nodes);
    let has_image = n >= 2 && rng.gen_bool(0.5);
    let mut kinds = vec![NodeKind::Post];
    let mut ranks = vec![0u32];
    if has_image {
        kinds.push(NodeKind::Image);
        ranks.push(1);
    }
    let mut k = 0;
    while kinds.len() < n {
        kinds.push(NodeKind::Comment);
        ranks.push(2 + k);
        k += 1;
    }
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (0, i)).collect();
    for i in 1..n {
        for j in i + 1..n {
            if rng.gen_bool(0.3) {
                edges.push((i, j));
            }
        }
    }
    let data = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    InteractionGraph {
        id: format!("g{}", rng.gen::<u32>()),
        features: Tensor::new(n, dim, data).unwrap(),
        kinds,
        ranks,
        adjacency: Adjacency::from_undirected(n, &edges).unwrap(),
        label: rng.gen_range(0..classes),
    }
}

pub fn config(input_dim: usize, classes: usize, hidden: usize, heads: usize) -> ModelConfig {
    let mut c = ModelConfig::new(input_dim, classes);
    c.hidden_dim = hidden;
    c.heads = heads;
    c
}

/// Loss and parameter gradients in evaluation mode (no dropout).
pub fn analytic_gradients(model: &MagicModel, b: &GraphBatch) -> (f64, Vec<Tensor>) {
    let mut tape = GradientTape::new();
    let vars = model.bind(&mut tape, true);
    let out = model
        .forward_traced::<ChaCha8Rng>(&mut tape, &vars, b, None)
        .unwrap();
    let loss = tape.nll_from_probs(out.probs, &b.labels, PROB_FLOOR).unwrap();
    let value = tape.value(loss).get(0, 0);
    let all = vars.all();
    let grads = tape.backward(loss).unwrap();
    let g = all
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.get_or_zeros(v, p))
        .collect();
    (value, g)
}

/// Central differences of the evaluation-mode loss for every parameter.
pub fn numeric_gradients(model: &MagicModel, b: &GraphBatch, eps: f64) -> Vec<Tensor> {
    let shapes: Vec<(usize, usize)> = model.params().iter().map(|t| t.shape()).collect();
    let mut out = Vec::new();
    for (p, &(r, c)) in shapes.iter().enumerate() {
        let mut g = Tensor::zeros(r, c);
        for i in 0..r * c {
            let mut plus = model.clone();
            plus.params_mut()[p].data_mut()[i] += eps;
            let mut minus = model.clone();
            minus.params_mut()[p].data_mut()[i] -= eps;
            let lp = plus.loss(b).unwrap();
            let lm = minus.loss(b).unwrap();
            g.data_mut()[i] = (lp - lm) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub fn max_rel_err(a: &[Tensor], n: &[Tensor], floor: f64) -> f64 {
    a.iter()
        .zip(n)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(&p, &q)| rel_err(p, q, floor)))
        .fold(0.0, f64::max)
}

// Dense reference model: plain loops over rows, one graph at a time.

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn matmul(a: &Mat, b: &Tensor) -> Mat {
    a.iter()
        .map(|row| {
            (0..b.cols())
                .map(|c| row.iter().enumerate().map(|(k, x)| x * b.get(k, c)).sum())
                .collect()
        })
        .collect()
}

fn neighbors(adj: &Adjacency) -> Vec<Vec<usize>> {
    (0..adj.num_nodes()).map(|i| adj.neighbors(i)).collect()
}

/// Smallest k with k >= ratio * n, at least 1.
fn survivors(n: usize, ratio: f64) -> usize {
    (1..=n).find(|&k| k as f64 >= ratio * n as f64 - 1e-9).unwrap_or(n)
}

/// Attention weights of one head as a dense n x n matrix.
pub fn reference_attention(
    z: &Mat,
    a: &Tensor,
    nbrs: &[Vec<usize>],
    ranks: &[u32],
    slope: f64,
    topk: Option<(f64, TopkMode)>,
) -> Mat {
    let n = z.len();
    let d = z[0].len();
    let mut alpha = vec![vec![0.0; n]; n];
    for i in 0..n {
        let logits: Vec<f64> = nbrs[i]
            .iter()
            .map(|&j| {
                let s: f64 = (0..d).map(|k| a.get(k, 0) * z[i][k] + a.get(d + k, 0) * z[j][k]).sum();
                if s > 0.0 { s } else { slope * s }
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = ex.iter().sum();
        for (&j, e) in nbrs[i].iter().zip(&ex) {
            alpha[i][j] = e / total;
        }
    }
    let Some((ratio, mode)) = topk else {
        return alpha;
    };
    let better = |x: (f64, usize), y: (f64, usize)| {
        x.0 > y.0 || (x.0 == y.0 && (ranks[x.1], x.1) < (ranks[y.1], y.1))
    };
    let mut keep = vec![vec![false; n]; n];
    match mode {
        TopkMode::Coefficient => {
            for i in 0..n {
                let k = survivors(nbrs[i].len(), ratio);
                for &j in &nbrs[i] {
                    let beaten = nbrs[i].iter().filter(|&&o| o != j && better((alpha[i][o], o), (alpha[i][j], j))).count();
                    keep[i][j] = beaten < k;
                }
            }
        }
        TopkMode::Node => {
            let received: Vec<f64> = (0..n).map(|j| (0..n).map(|i| alpha[i][j]).sum()).collect();
            let k = survivors(n, ratio);
            for j in 0..n {
                let beaten = (0..n).filter(|&o| o != j && better((received[o], o), (received[j], j))).count();
                for i in 0..n {
                    keep[i][j] = nbrs[i].contains(&j) && (beaten < k || i == j);
                }
            }
        }
    }
    for i in 0..n {
        let total: f64 = (0..n).filter(|&j| keep[i][j]).map(|j| alpha[i][j]).sum();
        for j in 0..n {
            alpha[i][j] = if keep[i][j] { alpha[i][j] / total } else { 0.0 };
        }
    }
    alpha
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 { x } else { x.exp() - 1.0 }
}

pub fn reference_layer(h: &Mat, layer: &GatLayerParams, g: &InteractionGraph, slope: f64, topk: Option<(f64, TopkMode)>) -> Mat {
    let nbrs = neighbors(&g.adjacency);
    let n = h.len();
    let outs: Vec<Mat> = layer
        .heads
        .iter()
        .map(|head| {
            let z = matmul(h, &head.w);
            let alpha = reference_attention(&z, &head.a, &nbrs, &g.ranks, slope, topk);
            (0..n)
                .map(|i| {
                    (0..z[0].len())
                        .map(|c| (0..n).map(|j| alpha[i][j] * z[j][c]).sum())
                        .collect()
                })
                .collect()
        })
        .collect();
    (0..n)
        .map(|i| {
            let row: Vec<f64> = match layer.aggregation {
                Aggregation::Concat => outs.iter().flat_map(|o| o[i].clone()).collect(),
                Aggregation::Mean => (0..outs[0][i].len())
                    .map(|c| outs.iter().map(|o| o[i][c]).sum::<f64>() / outs.len() as f64)
                    .collect(),
            };
            row.into_iter().map(elu).collect()
        })
        .collect()
}

/// Logits of one graph, written out layer by layer.
pub fn reference_logits(model: &MagicModel, g: &InteractionGraph) -> Vec<f64> {
    let cfg = &model.config;
    let opts = &cfg.attention;
    let x = to_mat(&g.features);
    let mut h: Mat = matmul(&x, &model.w_in)
        .into_iter()
        .map(|r| r.iter().zip(model.b_in.data()).map(|(a, b)| a + b).collect())
        .collect();
    let n_layers = model.layers.len();
    for (m, layer) in model.layers.iter().enumerate() {
        let use_topk = (cfg.topk_every_layer || m + 1 == n_layers) && opts.topk_ratio < 1.0;
        let topk = use_topk.then_some((opts.topk_ratio, opts.topk_mode));
        let f = reference_layer(&h, layer, g, opts.leaky_slope, topk);
        h = if m > 0 && cfg.residual {
            h.iter().zip(&f).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
        } else {
            f
        };
    }
    let n = h.len() as f64;
    let pooled: Vec<f64> = (0..h[0].len()).map(|c| h.iter().map(|r| r[c]).sum::<f64>() / n).collect();
    matmul(&vec![pooled], &model.w_c)[0]
        .iter()
        .zip(model.b_c.data())
        .map(|(a, b)| a + b)
        .collect()
}

pub fn logits_of(model: &MagicModel, g: &InteractionGraph) -> Tensor {
    model.forward(&batch(&[g]).unwrap()).unwrap().0
}
