//! Adam training loop with validation-based snapshot selection, and the
//! layer-count search built on it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{batch, InteractionGraph};
use crate::metrics::{confusion, metrics, MetricsReport};
use crate::mix_seed;
use crate::model::{MagicModel, ModelConfig, PROB_FLOOR};
use crate::tensor::{GradientTape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation accuracy.
    pub patience: Option<usize>,
    /// Global gradient-norm ceiling.
    pub grad_clip: Option<f64>,
    /// Contiguous batch partitions whose gradients are computed in parallel
    /// and summed in partition order.
    pub shards: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.002,
            batch_size: 128,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            patience: Some(20),
            grad_clip: Some(5.0),
            shards: 1,
        }
    }
}

impl TrainConfig {
    // `!(x > 0.0)` also rejects NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 || self.shards == 0 {
            return Err(Error::Config("batch_size and shards must be at least 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    names: &[String],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {i} is {:?}, gradient {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            return Err(Error::NonFiniteGradient(name));
        }
    }
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *theta -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Snapshot with the best validation accuracy (earliest on ties).
    pub model: MagicModel,
    pub history: Vec<HistoryRow>,
    /// Epoch of the returned snapshot, 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
}

/// Mean training loss and parameter gradients of one batch, dropout active.
pub fn batch_gradients(
    model: &MagicModel,
    graphs: &[&InteractionGraph],
    seed: u64,
    shards: usize,
) -> Result<(f64, Vec<Tensor>)> {
    let total = graphs.len();
    let shards = shards.clamp(1, total.max(1));
    let chunk = total.div_ceil(shards);
    let parts: Vec<&[&InteractionGraph]> = graphs.chunks(chunk).collect();
    let run = |(s, part): (usize, &&[&InteractionGraph])| -> Result<(f64, Vec<Tensor>)> {
        let b = batch(part)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, s as u64));
        let mut tape = GradientTape::new();
        let vars = model.bind(&mut tape, true);
        let out = model.forward_traced(&mut tape, &vars, &b, Some(&mut rng))?;
        let mut loss = tape.nll_from_probs(out.probs, &b.labels, PROB_FLOOR)?;
        if parts.len() > 1 {
            loss = tape.scale(loss, part.len() as f64 / total as f64)?;
        }
        let value = tape.value(loss).get(0, 0);
        let all = vars.all();
        let grads = tape.backward(loss)?;
        let params = model.params();
        let g = all
            .iter()
            .zip(params)
            .map(|(&v, p)| grads.get_or_zeros(v, p))
            .collect();
        Ok((value, g))
    };
    let results: Vec<Result<(f64, Vec<Tensor>)>> = if parts.len() == 1 {
        vec![run((0, &parts[0]))]
    } else {
        parts.par_iter().enumerate().map(run).collect()
    };
    let mut iter = results.into_iter();
    let (mut loss, mut grads) = iter.next().expect("at least one shard")?;
    for r in iter {
        let (l, g) = r?;
        loss += l;
        for (acc, x) in grads.iter_mut().zip(g) {
            for (a, b) in acc.data_mut().iter_mut().zip(x.data()) {
                *a += b;
            }
        }
    }
    Ok((loss, grads))
}

/// Predictions in evaluation mode, `chunk` graphs at a time.
pub fn predict_all(model: &MagicModel, graphs: &[InteractionGraph], chunk: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(graphs.len());
    for part in graphs.chunks(chunk.max(1)) {
        out.extend(model.predict(&batch(part)?)?);
    }
    Ok(out)
}

pub fn accuracy(model: &MagicModel, graphs: &[InteractionGraph], chunk: usize) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::Invalid("cannot score an empty set".into()));
    }
    let pred = predict_all(model, graphs, chunk)?;
    let correct = pred.iter().zip(graphs).filter(|(p, g)| **p == g.label).count();
    Ok(correct as f64 / graphs.len() as f64)
}

/// Metrics of `model` on `graphs`, dropout inactive.
pub fn evaluate(model: &MagicModel, graphs: &[InteractionGraph]) -> Result<MetricsReport> {
    if graphs.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty set".into()));
    }
    let pred = predict_all(model, graphs, 256)?;
    let actual: Vec<usize> = graphs.iter().map(|g| g.label).collect();
    metrics(&confusion(&actual, &pred, model.config.num_classes)?)
}

fn as_divergence(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence {
            epoch,
            batch,
            reason: format!("non-finite value in {op}"),
        },
        Error::NonFiniteGradient(name) => Error::Divergence {
            epoch,
            batch,
            reason: format!("non-finite gradient for {name}"),
        },
        other => other,
    }
}

pub fn train(
    model: MagicModel,
    train_set: &[InteractionGraph],
    val_set: &[InteractionGraph],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(model, train_set, val_set, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    mut model: MagicModel,
    train_set: &[InteractionGraph],
    val_set: &[InteractionGraph],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Invalid("training and validation sets must be non-empty".into()));
    }
    let names = model.param_names();
    let mut state = AdamState::new(&model.params());
    let mut history = Vec::new();
    let mut best = (model.clone(), 0usize, None::<f64>);
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let epoch_seed = mix_seed(config.seed, epoch as u64);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let graphs: Vec<&InteractionGraph> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch_seed = mix_seed(epoch_seed, b as u64 + 1);
            let (loss, mut grads) = batch_gradients(&model, &graphs, batch_seed, config.shards)
                .map_err(|e| as_divergence(e, epoch, b))?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    reason: format!("loss is {loss}"),
                });
            }
            loss_sum += loss * idx.len() as f64;
            if let Some(c) = config.grad_clip {
                if grads.iter().all(Tensor::is_finite) {
                    clip_global_norm(&mut grads, c);
                }
            }
            adam_step(&mut model.params_mut(), &grads, &names, &mut state, config)
                .map_err(|e| as_divergence(e, epoch, b))?;
        }
        let val_accuracy = accuracy(&model, val_set, config.batch_size)?;
        let row = HistoryRow {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy,
        };
        on_epoch(&row);
        history.push(row);
        if best.2.is_none_or(|b| val_accuracy > b) {
            best = (model.clone(), epoch, Some(val_accuracy));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best.0,
        history,
        best_epoch: best.1,
        best_val_accuracy: best.2,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchEntry {
    pub n: usize,
    pub val_accuracy: Option<f64>,
    pub best_epoch: usize,
    /// Why the candidate was excluded, if it diverged.
    pub diverged: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best_n: usize,
    pub outcome: TrainOutcome,
    /// One entry per depth in the range, diverged ones included and flagged.
    pub report: Vec<SearchEntry>,
}

/// Picks the depth with the highest validation accuracy; ties go to the
/// smaller depth. Entries without an accuracy are ignored.
pub fn select_best(entries: &[(usize, Option<f64>)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(n, acc) in entries {
        if let Some(a) = acc {
            if best.is_none_or(|(bn, ba)| a > ba || (a == ba && n < bn)) {
                best = Some((n, a));
            }
        }
    }
    best.map(|(n, _)| n)
}

/// Trains one candidate per depth in `[layers_min, layers_max]` (in
/// parallel) and keeps the best on validation accuracy.
pub fn search_layers(
    config: &ModelConfig,
    train_config: &TrainConfig,
    train_set: &[InteractionGraph],
    val_set: &[InteractionGraph],
) -> Result<SearchOutcome> {
    config.validate()?;
    let depths: Vec<usize> = (config.layers_min..=config.layers_max).collect();
    let results: Vec<(usize, Result<TrainOutcome>)> = depths
        .par_iter()
        .map(|&n| {
            let run = MagicModel::new(config.clone(), n)
                .and_then(|m| train(m, train_set, val_set, train_config));
            (n, run)
        })
        .collect();
    let mut report = Vec::with_capacity(results.len());
    let mut outcomes = Vec::new();
    for (n, r) in results {
        match r {
            Ok(o) => {
                report.push(SearchEntry {
                    n,
                    val_accuracy: o.best_val_accuracy,
                    best_epoch: o.best_epoch,
                    diverged: None,
                });
                outcomes.push((n, o));
            }
            Err(e @ Error::Divergence { .. }) => report.push(SearchEntry {
                n,
                val_accuracy: None,
                best_epoch: 0,
                diverged: Some(e.to_string()),
            }),
            Err(e) => return Err(e),
        }
    }
    let scored: Vec<(usize, Option<f64>)> = report.iter().map(|e| (e.n, e.val_accuracy)).collect();
    let best_n = select_best(&scored).ok_or_else(|| Error::Divergence {
        epoch: 0,
        batch: 0,
        reason: format!("every depth in [{}, {}] diverged", config.layers_min, config.layers_max),
    })?;
    let outcome = outcomes
        .into_iter()
        .find(|(n, _)| *n == best_n)
        .map(|(_, o)| o)
        .expect("best depth trained");
    Ok(SearchOutcome {
        best_n,
        outcome,
        report,
    })
}
