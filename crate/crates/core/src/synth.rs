//! Synthetic datasets with known answers.
//!
//! * `Separable`: two classes with disjoint post/comment vocabularies,
//!   embedded with the fallback embedder.
//! * `Depth`: a reply chain `post - c1 - c2 - c3`. The post carries `p`, the
//!   last comment carries `s` (each one of two prototypes), the middle
//!   comments carry a constant. The label is `p == s`. After one attention
//!   layer each node has seen at most one of `p`, `s`, so the mean readout
//!   splits into `A(p) + B(s)` and cannot express the equality test; two
//!   layers let `c1` combine both.
//! * `Image`: text nodes are label-independent noise; only the image node
//!   carries the class prototype.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{comment_key, image_key, post_key, LabelSchema, MultimodalRecord, RawRecord};
use crate::io::{embed_records, write_meb, EmbeddingStore, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Separable,
    Depth,
    Image,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(SynthKind::Separable),
            "depth" => Ok(SynthKind::Depth),
            "image" => Ok(SynthKind::Image),
            _ => Err(Error::Invalid(format!(
                "unknown synthetic kind {s:?} (expected separable, depth or image)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthSet {
    pub kind: SynthKind,
    pub records: Vec<RawRecord>,
    pub store: EmbeddingStore,
    /// Suggested run configuration for this task.
    pub config: RunConfig,
}

const LABELS: [&str; 2] = ["real", "fake"];

impl SynthSet {
    pub fn schema(&self) -> LabelSchema {
        LabelSchema::builtin("fakeddit2").expect("built-in schema")
    }

    pub fn multimodal(&self) -> Result<Vec<MultimodalRecord>> {
        let schema = self.schema();
        self.records
            .iter()
            .map(|r| {
                Ok(MultimodalRecord {
                    id: r.id.clone(),
                    label: schema.index_of(r.label.as_deref().unwrap_or_default())?,
                    post_text: r.text.clone(),
                    comments: r.comments.clone(),
                    image_ref: r.image.clone(),
                })
            })
            .collect()
    }

    /// Writes `data.jsonl`, `embeddings.meb` and `config.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut lines = String::new();
        for r in &self.records {
            lines.push_str(&serde_json::to_string(r)?);
            lines.push('\n');
        }
        let data = dir.join("data.jsonl");
        std::fs::write(&data, lines).map_err(|e| Error::io(&data, e))?;
        write_meb(&dir.join("embeddings.meb"), &self.store)?;
        let cfg = dir.join("config.txt");
        std::fs::write(&cfg, self.config.to_text()).map_err(|e| Error::io(&cfg, e))
    }
}

fn unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn noisy<R: Rng>(base: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    base.iter().map(|b| b + sigma * rng.gen_range(-1.0..1.0)).collect()
}

fn words<R: Rng>(prefix: &str, vocab: usize, n: usize, rng: &mut R) -> String {
    (0..n)
        .map(|_| format!("{prefix}{}", rng.gen_range(0..vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn generate(kind: SynthKind, count: usize, dim: usize, seed: u64) -> Result<SynthSet> {
    if count < 6 || dim == 0 {
        return Err(Error::Invalid(format!(
            "synthetic sets need at least 6 records and a positive dim (got {count}, {dim})"
        )));
    }
    match kind {
        SynthKind::Separable => separable(count, dim, seed),
        SynthKind::Depth => depth(count, dim, seed),
        SynthKind::Image => image(count, dim, seed),
    }
}

fn separable(count: usize, dim: usize, seed: u64) -> Result<SynthSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = ["calm", "alarm"];
    let records: Vec<RawRecord> = (0..count)
        .map(|i| {
            let c = i % 2;
            let n_comments = rng.gen_range(0..=3);
            RawRecord {
                id: format!("sep{i:04}"),
                label: Some(LABELS[c].to_string()),
                text: words(vocab[c], 24, 8, &mut rng),
                comments: (0..n_comments).map(|_| words(vocab[c], 24, 5, &mut rng)).collect(),
                image: None,
            }
        })
        .collect();
    let schema = LabelSchema::builtin("fakeddit2").expect("built-in schema");
    let multimodal = records
        .iter()
        .map(|r| MultimodalRecord {
            id: r.id.clone(),
            label: schema.index_of(r.label.as_deref().unwrap_or_default()).expect("known label"),
            post_text: r.text.clone(),
            comments: r.comments.clone(),
            image_ref: None,
        })
        .collect::<Vec<_>>();
    let store = embed_records(&multimodal, dim, seed)?;
    let config = RunConfig {
        seed,
        hidden_dim: 32,
        heads: 2,
        layers_min: 1,
        layers_max: 2,
        epochs: 60,
        patience: 0,
        ..RunConfig::default()
    };
    Ok(SynthSet {
        kind: SynthKind::Separable,
        records,
        store,
        config,
    })
}

fn depth(count: usize, dim: usize, seed: u64) -> Result<SynthSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u, v, m) = (unit(dim, &mut rng), unit(dim, &mut rng), unit(dim, &mut rng));
    let mut store = EmbeddingStore::new(dim)?;
    let mut combos: Vec<usize> = (0..count).map(|i| i % 4).collect();
    combos.shuffle(&mut rng);
    let mut records = Vec::with_capacity(count);
    for (i, &combo) in combos.iter().enumerate() {
        let id = format!("dep{i:04}");
        let (p_is_u, s_is_u) = (combo & 1 == 0, combo & 2 == 0);
        let label = usize::from(p_is_u == s_is_u);
        let pick = |is_u: bool| if is_u { &u } else { &v };
        store.insert(&post_key(&id), &noisy(pick(p_is_u), 0.05, &mut rng))?;
        store.insert(&comment_key(&id, 0), &noisy(&m, 0.05, &mut rng))?;
        store.insert(&comment_key(&id, 1), &noisy(&m, 0.05, &mut rng))?;
        store.insert(&comment_key(&id, 2), &noisy(pick(s_is_u), 0.05, &mut rng))?;
        records.push(RawRecord {
            id,
            label: Some(LABELS[label].to_string()),
            text: "post".into(),
            comments: vec!["reply".into(), "reply".into(), "reply".into()],
            image: None,
        });
    }
    let config = RunConfig {
        seed,
        hidden_dim: 16,
        heads: 2,
        include_image: false,
        chain_comments: true,
        layers_min: 1,
        layers_max: 3,
        learning_rate: 0.01,
        batch_size: 32,
        dropout: 0.0,
        epochs: 150,
        patience: 0,
        ..RunConfig::default()
    };
    Ok(SynthSet {
        kind: SynthKind::Depth,
        records,
        store,
        config,
    })
}

fn image(count: usize, dim: usize, seed: u64) -> Result<SynthSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos = [unit(dim, &mut rng), unit(dim, &mut rng)];
    let mut store = EmbeddingStore::new(dim)?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("img{i:04}");
        let c = i % 2;
        store.insert(&post_key(&id), &unit(dim, &mut rng))?;
        let n_comments = rng.gen_range(0..=2);
        for k in 0..n_comments {
            store.insert(&comment_key(&id, k), &unit(dim, &mut rng))?;
        }
        store.insert(&image_key(&id), &noisy(&protos[c], 0.1, &mut rng))?;
        records.push(RawRecord {
            id: id.clone(),
            label: Some(LABELS[c].to_string()),
            text: "post".into(),
            comments: vec!["reply".into(); n_comments],
            image: Some(image_key(&id)),
        });
    }
    let config = RunConfig {
        seed,
        hidden_dim: 16,
        heads: 2,
        layers_min: 1,
        layers_max: 1,
        learning_rate: 0.01,
        batch_size: 32,
        epochs: 60,
        patience: 0,
        ..RunConfig::default()
    };
    Ok(SynthSet {
        kind: SynthKind::Image,
        records,
        store,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, NodeKind};

    #[test]
    fn every_key_resolves() {
        for kind in [SynthKind::Separable, SynthKind::Depth, SynthKind::Image] {
            let set = generate(kind, 12, 8, 1).unwrap();
            let graph_cfg = set.config.graph_config();
            for r in set.multimodal().unwrap() {
                let g = build_graph(&r, &set.store, 8, &graph_cfg).unwrap();
                g.validate().unwrap();
            }
        }
    }

    #[test]
    fn depth_task_is_a_chain_with_balanced_labels() {
        let set = generate(SynthKind::Depth, 40, 8, 2).unwrap();
        let recs = set.multimodal().unwrap();
        assert_eq!(recs.iter().filter(|r| r.label == 1).count(), 20);
        let g = build_graph(&recs[0], &set.store, 8, &set.config.graph_config()).unwrap();
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.count(NodeKind::Image), 0);
        assert!(g.adjacency.contains(1, 2) && g.adjacency.contains(2, 3));
        assert!(!g.adjacency.contains(0, 2) && !g.adjacency.contains(0, 3));
    }

    #[test]
    fn deterministic() {
        let a = generate(SynthKind::Image, 10, 4, 5).unwrap();
        let b = generate(SynthKind::Image, 10, 4, 5).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(a.records, b.records);
    }
}
