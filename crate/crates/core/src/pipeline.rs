//! End-to-end runs over files: load, split, build graphs, train, score.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{build_graph, parse_dataset, split_dataset, GraphConfig, InteractionGraph, LabelSchema, MultimodalRecord};
use crate::io::{read_store, Checkpoint, DatasetInfo, EmbeddingStore, MetricsSummary, RunConfig, RunReport, SplitSizes};
use crate::metrics::MetricsReport;
use crate::model::MagicModel;
use crate::train::{evaluate, search_layers, HistoryRow};

pub struct Inputs {
    pub schema: LabelSchema,
    pub records: Vec<MultimodalRecord>,
    pub store: EmbeddingStore,
}

pub fn load_inputs(data: &Path, embeddings: &Path, schema: LabelSchema) -> Result<Inputs> {
    let records = parse_dataset(data, &schema)?;
    if records.is_empty() {
        return Err(Error::Invalid(format!("{} holds no records", data.display())));
    }
    let store = read_store(embeddings)?;
    Ok(Inputs { schema, records, store })
}

/// Builds every graph in record order.
pub fn build_graphs(
    records: &[MultimodalRecord],
    store: &EmbeddingStore,
    config: &GraphConfig,
) -> Result<Vec<InteractionGraph>> {
    records
        .par_iter()
        .map(|r| build_graph(r, store, store.dim(), config))
        .collect()
}

pub struct Partitions {
    pub train: Vec<InteractionGraph>,
    pub validation: Vec<InteractionGraph>,
    pub test: Vec<InteractionGraph>,
}

impl Partitions {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train.len(),
            validation: self.validation.len(),
            test: self.test.len(),
        }
    }
}

pub fn partition(inputs: &Inputs, config: &RunConfig) -> Result<Partitions> {
    let split = split_dataset(&inputs.records, config.seed, config.split_ratios())?;
    let graph_cfg = config.graph_config();
    Ok(Partitions {
        train: build_graphs(&split.train, &inputs.store, &graph_cfg)?,
        validation: build_graphs(&split.validation, &inputs.store, &graph_cfg)?,
        test: build_graphs(&split.test, &inputs.store, &graph_cfg)?,
    })
}

pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub report: RunReport,
    /// Metrics on the partition named in the report.
    pub metrics: MetricsReport,
}

fn dataset_info(data: &Path, inputs: &Inputs) -> DatasetInfo {
    DatasetInfo {
        path: data.display().to_string(),
        records: inputs.records.len(),
        labels: inputs.schema.labels().to_vec(),
    }
}

fn report(
    command: &str,
    info: DatasetInfo,
    sizes: SplitSizes,
    config: &RunConfig,
    best_n: usize,
    partition: &str,
    metrics: &MetricsReport,
) -> RunReport {
    RunReport {
        command: command.to_string(),
        dataset: info,
        split_sizes: sizes,
        best_n,
        variant: config.variant.to_string(),
        partition: partition.to_string(),
        history: Vec::new(),
        search: Vec::new(),
        confusion: metrics.matrix.counts().to_vec(),
        metrics: MetricsSummary::from(metrics),
    }
}

/// Splits, searches the depth range, and scores the winner on `partition`
/// (`"validation"` or `"test"`).
pub fn train_run(
    command: &str,
    data: &Path,
    embeddings: &Path,
    config: &RunConfig,
    partition_name: &str,
) -> Result<TrainRun> {
    config.validate()?;
    let inputs = load_inputs(data, embeddings, config.label_schema()?)?;
    let parts = partition(&inputs, config)?;
    let model_cfg = config.model_config(inputs.store.dim(), inputs.schema.num_classes());
    let search = search_layers(&model_cfg, &config.train_config(), &parts.train, &parts.validation)?;
    let scored = match partition_name {
        "validation" => &parts.validation,
        "test" => &parts.test,
        other => return Err(Error::Invalid(format!("unknown partition {other:?}"))),
    };
    let metrics = evaluate(&search.outcome.model, scored)?;
    let mut rep = report(
        command,
        dataset_info(data, &inputs),
        parts.sizes(),
        config,
        search.best_n,
        partition_name,
        &metrics,
    );
    rep.history = search.outcome.history.clone();
    rep.search = search.report.clone();
    let checkpoint = Checkpoint::new(config.clone(), &inputs.schema, search.outcome.model)?;
    Ok(TrainRun {
        checkpoint,
        report: rep,
        metrics,
    })
}

/// Scores a checkpoint on the test partition of the split its config
/// reproduces.
pub fn evaluate_run(data: &Path, embeddings: &Path, checkpoint: &Checkpoint) -> Result<(RunReport, MetricsReport)> {
    let config = &checkpoint.config;
    let inputs = load_inputs(data, embeddings, checkpoint.schema()?)?;
    if inputs.store.dim() != checkpoint.meta.input_dim {
        return Err(Error::shape(
            "evaluate",
            format!(
                "embeddings have dim {}, the model expects {}",
                inputs.store.dim(),
                checkpoint.meta.input_dim
            ),
        ));
    }
    let parts = partition(&inputs, config)?;
    let metrics = evaluate(&checkpoint.model, &parts.test)?;
    let rep = report(
        "evaluate",
        dataset_info(data, &inputs),
        parts.sizes(),
        config,
        checkpoint.meta.best_n,
        "test",
        &metrics,
    );
    Ok((rep, metrics))
}

/// Class probabilities for one record.
pub fn predict_record(checkpoint: &Checkpoint, store: &EmbeddingStore, record: &MultimodalRecord) -> Result<Vec<f64>> {
    let graph = build_graph(record, store, checkpoint.meta.input_dim, &checkpoint.config.graph_config())?;
    let (_, probs) = checkpoint.model.forward(&crate::graph::batch(&[graph])?)?;
    Ok(probs.row(0).to_vec())
}

/// Trains a single fixed-depth model, mainly for experiments and tests.
pub fn train_fixed(
    config: &RunConfig,
    depth: usize,
    train_set: &[InteractionGraph],
    val_set: &[InteractionGraph],
    input_dim: usize,
    num_classes: usize,
    on_epoch: impl FnMut(&HistoryRow),
) -> Result<crate::train::TrainOutcome> {
    let model = MagicModel::new(config.model_config(input_dim, num_classes), depth)?;
    crate::train::train_with(model, train_set, val_set, &config.train_config(), on_epoch)
}
