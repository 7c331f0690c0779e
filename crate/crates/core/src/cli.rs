//! Command-line interface of the `magic` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::graph::{parse_raw_dataset, parse_record_line};
use crate::io::{
    checkpoint_load, checkpoint_save, embed_records, read_store, write_meb, RunConfig, RunReport,
};
use crate::metrics::{metrics, ConfusionMatrix};
use crate::model::Variant;
use crate::pipeline::{evaluate_run, predict_record, train_run};
use crate::synth::{generate, SynthKind};

#[derive(Debug, Parser)]
#[command(name = "magic", version, about = "Fake news detection on multimodal interaction graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// JSON-lines dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// MEB1 or JSON-lines embedding store.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Flat `key = value` run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hash text into an embedding store (for runs without a neural encoder).
    EmbedFallback {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 768)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON-lines debug format instead of MEB1.
        #[arg(long)]
        jsonl: bool,
    },
    /// Split, search the layer range, save the best model.
    Train(TrainArgs),
    /// Score a checkpoint on the test partition.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Classify records from a JSON-lines file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Train a reduced variant and score it on the test partition.
    Ablate {
        #[arg(long)]
        variant: Variant,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Metrics of a confusion matrix (rows are actual classes).
    Metrics {
        #[arg(long)]
        confusion: PathBuf,
    },
    /// Describe a checkpoint.
    Info {
        #[arg(long)]
        model: PathBuf,
    },
    /// Write a synthetic dataset, embeddings and config into a directory.
    Synth {
        #[arg(long)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
    },
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.with_env()
}

fn train_like(
    command: &str,
    args: &TrainArgs,
    variant: Option<Variant>,
    out: &mut dyn Write,
    log: &mut dyn Write,
) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    let partition = match variant {
        Some(v) => {
            config.variant = v;
            "test"
        }
        None => "validation",
    };
    let run = train_run(command, &args.data, &args.embeddings, &config, partition)?;
    for e in &run.report.search {
        let _ = match (&e.val_accuracy, &e.diverged) {
            (Some(a), _) => writeln!(log, "depth {}: val_accuracy {a:.4} at epoch {}", e.n, e.best_epoch),
            (None, Some(why)) => writeln!(log, "depth {}: diverged ({why})", e.n),
            (None, None) => writeln!(log, "depth {}: no epochs", e.n),
        };
    }
    for row in &run.report.history {
        let _ = writeln!(
            log,
            "epoch {} train_loss {:.6} val_accuracy {:.4}",
            row.epoch, row.train_loss, row.val_accuracy
        );
    }
    if let Some(p) = &args.out {
        checkpoint_save(p, &run.checkpoint)?;
    }
    if let Some(p) = &args.report {
        run.report.write(p)?;
    }
    write_out(out, &format!("best_n: {}\npartition: {partition}\n", run.report.best_n))?;
    write_out(out, &run.metrics.to_text())
}

/// Runs one parsed command. Results go to `out`, progress to `log`.
pub fn run(cli: Cli, out: &mut dyn Write, log: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::EmbedFallback {
            data,
            out: dest,
            dim,
            seed,
            jsonl,
        } => {
            let records: Vec<_> = parse_raw_dataset(&data)?
                .into_iter()
                .map(|(_, r)| r.into_record(0))
                .collect();
            let store = embed_records(&records, dim, seed)?;
            if jsonl {
                std::fs::write(&dest, store.to_jsonl()).map_err(|e| Error::io(&dest, e))?;
            } else {
                write_meb(&dest, &store)?;
            }
            write_out(out, &format!("wrote {} vectors of dim {dim}\n", store.len()))
        }
        Command::Train(args) => train_like("train", &args, None, out, log),
        Command::Ablate { variant, args } => train_like("ablate", &args, Some(variant), out, log),
        Command::Evaluate {
            data,
            embeddings,
            model,
            report,
        } => {
            let ckpt = checkpoint_load(&model)?;
            let (rep, m) = evaluate_run(&data, &embeddings, &ckpt)?;
            if let Some(p) = &report {
                rep.write(p)?;
            }
            write_out(out, &m.to_text())
        }
        Command::Predict {
            model,
            embeddings,
            input,
        } => {
            let ckpt = checkpoint_load(&model)?;
            let schema = ckpt.schema()?;
            let store = read_store(&embeddings)?;
            let text = std::fs::read_to_string(&input).map_err(|e| Error::io(&input, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let raw = parse_record_line(line).map_err(|e| Error::Parse {
                    path: input.clone(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
                let id = raw.id.clone();
                let probs = predict_record(&ckpt, &store, &raw.into_record(0))?;
                let best = crate::model::argmax(&probs);
                let mut line = format!("{id}\t{}", schema.name_of(best));
                for (c, p) in probs.iter().enumerate() {
                    line.push_str(&format!("\t{}={p:.4}", schema.name_of(c)));
                }
                line.push('\n');
                write_out(out, &line)?;
            }
            Ok(())
        }
        Command::Metrics { confusion } => {
            let text = std::fs::read_to_string(&confusion).map_err(|e| Error::io(&confusion, e))?;
            let matrix = match serde_json::from_str::<ConfusionMatrix>(&text) {
                Ok(m) => m,
                Err(_) => ConfusionMatrix::new(RunReport::read(&confusion)?.confusion)?,
            };
            let matrix = ConfusionMatrix::new(matrix.counts().to_vec())?;
            write_out(out, &metrics(&matrix)?.to_text())
        }
        Command::Info { model } => {
            let ckpt = checkpoint_load(&model)?;
            let m = &ckpt.meta;
            write_out(
                out,
                &format!(
                    "best_n: {}\nlabels: {}\ninput_dim: {}\nhidden_dim: {}\nheads: {}\nvariant: {}\nparameters: {}\n",
                    m.best_n,
                    m.labels.join(","),
                    m.input_dim,
                    m.hidden_dim,
                    ckpt.model.config.effective_heads(),
                    ckpt.config.variant,
                    ckpt.model.num_parameters()
                ),
            )
        }
        Command::Synth {
            kind,
            out: dir,
            seed,
            count,
            dim,
        } => {
            let set = generate(kind, count, dim, seed)?;
            set.write(&dir)?;
            write_out(out, &format!("wrote {count} records to {}\n", dir.display()))
        }
    }
}

/// One-line, machine-parsable rendering of an error.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("error: kind={} message={msg}", e.kind())
}

