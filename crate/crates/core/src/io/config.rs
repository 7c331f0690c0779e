//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown and repeated keys are errors. `MAGIC_SEED` in the
//! environment overrides `seed`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gat::{AttentionOptions, TopkMode};
use crate::graph::{GraphConfig, LabelSchema, SplitRatios};
use crate::model::{ablation_variant, ModelConfig, Variant};
use crate::train::TrainConfig;

pub const SEED_ENV: &str = "MAGIC_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Built-in schema name or a schema file path.
    pub schema: String,
    pub hidden_dim: usize,
    pub heads: usize,
    pub multi_head: bool,
    pub topk_ratio: f64,
    pub topk_mode: TopkMode,
    pub topk_every_layer: bool,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub residual: bool,
    pub include_image: bool,
    pub chain_comments: bool,
    pub link_image_comments: bool,
    pub layers_min: usize,
    pub layers_max: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// 0 disables early stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// 0 disables clipping.
    pub grad_clip: f64,
    pub test_ratio: f64,
    pub val_ratio: f64,
    pub variant: Variant,
    pub shards: usize,
    /// Directory that relative schema paths resolve against.
    pub base_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            schema: "fakeddit2".into(),
            hidden_dim: 64,
            heads: 4,
            multi_head: true,
            topk_ratio: 0.8,
            topk_mode: TopkMode::Coefficient,
            topk_every_layer: true,
            dropout: 0.2,
            leaky_slope: 0.2,
            residual: true,
            include_image: true,
            chain_comments: false,
            link_image_comments: false,
            layers_min: 1,
            layers_max: 4,
            learning_rate: 0.002,
            batch_size: 128,
            epochs: 100,
            patience: 20,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: 5.0,
            test_ratio: 0.2,
            val_ratio: 0.2,
            variant: Variant::Full,
            shards: 1,
            base_dir: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key} must be true or false, got {value:?}"))),
    }
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed", "schema", "hidden_dim", "heads", "multi_head", "topk_ratio", "topk_mode",
        "topk_every_layer", "dropout", "leaky_slope", "residual", "include_image",
        "chain_comments", "link_image_comments", "layers_min", "layers_max", "learning_rate",
        "batch_size", "epochs", "patience", "beta1", "beta2", "epsilon", "grad_clip",
        "test_ratio", "val_ratio", "variant", "shards",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "schema" => self.schema = value.to_string(),
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "multi_head" => self.multi_head = parse_bool(key, value)?,
            "topk_ratio" => self.topk_ratio = parse_value(key, value)?,
            "topk_mode" => self.topk_mode = value.parse()?,
            "topk_every_layer" => self.topk_every_layer = parse_bool(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "leaky_slope" => self.leaky_slope = parse_value(key, value)?,
            "residual" => self.residual = parse_bool(key, value)?,
            "include_image" => self.include_image = parse_bool(key, value)?,
            "chain_comments" => self.chain_comments = parse_bool(key, value)?,
            "link_image_comments" => self.link_image_comments = parse_bool(key, value)?,
            "layers_min" => self.layers_min = parse_value(key, value)?,
            "layers_max" => self.layers_max = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "grad_clip" => self.grad_clip = parse_value(key, value)?,
            "test_ratio" => self.test_ratio = parse_value(key, value)?,
            "val_ratio" => self.val_ratio = parse_value(key, value)?,
            "variant" => self.variant = value.parse()?,
            "shards" => self.shards = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |e: Error| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config error: ")));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(Error::Config(format!("expected key = value, got {line:?}"))))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(Error::Config(format!("key {key:?} set twice"))));
            }
            cfg.set(key, value).map_err(at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    /// Applies a `MAGIC_SEED` value, if any.
    pub fn with_seed_override(mut self, value: Option<&str>) -> Result<Self> {
        if let Some(v) = value {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(self)
    }

    pub fn with_env(self) -> Result<Self> {
        let v = std::env::var(SEED_ENV).ok();
        self.with_seed_override(v.as_deref())
    }

    /// Canonical text form: every key, in [`RunConfig::KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            s.push_str(key);
            s.push_str(" = ");
            s.push_str(&self.get(key));
            s.push('\n');
        }
        s
    }

    fn get(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "schema" => self.schema.clone(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "heads" => self.heads.to_string(),
            "multi_head" => self.multi_head.to_string(),
            "topk_ratio" => self.topk_ratio.to_string(),
            "topk_mode" => self.topk_mode.to_string(),
            "topk_every_layer" => self.topk_every_layer.to_string(),
            "dropout" => self.dropout.to_string(),
            "leaky_slope" => self.leaky_slope.to_string(),
            "residual" => self.residual.to_string(),
            "include_image" => self.include_image.to_string(),
            "chain_comments" => self.chain_comments.to_string(),
            "link_image_comments" => self.link_image_comments.to_string(),
            "layers_min" => self.layers_min.to_string(),
            "layers_max" => self.layers_max.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "patience" => self.patience.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "test_ratio" => self.test_ratio.to_string(),
            "val_ratio" => self.val_ratio.to_string(),
            "variant" => self.variant.to_string(),
            "shards" => self.shards.to_string(),
            _ => unreachable!("key list and accessors agree"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config(1, 2).validate()?;
        self.train_config().validate()?;
        for (name, r) in [("test_ratio", self.test_ratio), ("val_ratio", self.val_ratio)] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} {r} must lie in [0, 1)")));
            }
        }
        if self.grad_clip < 0.0 {
            return Err(Error::Config("grad_clip must be non-negative".into()));
        }
        Ok(())
    }

    pub fn label_schema(&self) -> Result<LabelSchema> {
        LabelSchema::resolve(&self.schema, self.base_dir.as_deref())
    }

    /// Model configuration with the ablation variant applied.
    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> ModelConfig {
        let base = ModelConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            num_classes,
            heads: self.heads,
            multi_head: self.multi_head,
            attention: AttentionOptions {
                leaky_slope: self.leaky_slope,
                topk_ratio: self.topk_ratio,
                topk_mode: self.topk_mode,
                dropout: self.dropout,
            },
            topk_every_layer: self.topk_every_layer,
            residual: self.residual,
            include_image: self.include_image,
            layers_min: self.layers_min,
            layers_max: self.layers_max,
            seed: self.seed,
        };
        ablation_variant(&base, self.variant)
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            include_image: self.include_image && self.variant != Variant::NoImage,
            chain_comments: self.chain_comments,
            link_image_comments: self.link_image_comments,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            seed: self.seed,
            patience: (self.patience > 0).then_some(self.patience),
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            shards: self.shards,
        }
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios {
            test: self.test_ratio,
            validation: self.val_ratio,
        }
    }
}
