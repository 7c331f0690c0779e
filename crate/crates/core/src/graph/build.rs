use serde::{Deserialize, Serialize};

use super::{Adjacency, InteractionGraph, MultimodalRecord, NodeKind};
use crate::error::{Error, Result};
use crate::io::EmbeddingStore;
use crate::tensor::Tensor;

/// Graph construction options. The default is the star topology: the image
/// and every comment attach to the post only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Emit an image node (all-zero when the record has no image).
    pub include_image: bool,
    /// Thread comments as a reply chain: comment k attaches to comment k-1,
    /// and only the first comment attaches to the post.
    pub chain_comments: bool,
    /// Also connect the image node to every comment.
    pub link_image_comments: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            include_image: true,
            chain_comments: false,
            link_image_comments: false,
        }
    }
}

pub fn post_key(id: &str) -> String {
    format!("post:{id}")
}

pub fn comment_key(id: &str, ordinal: usize) -> String {
    format!("comment:{id}:{ordinal}")
}

pub fn image_key(id: &str) -> String {
    format!("image:{id}")
}

fn lookup<'a>(store: &'a EmbeddingStore, key: &str) -> Result<&'a [f64]> {
    store
        .get(key)
        .ok_or_else(|| Error::MissingEmbedding(key.to_string()))
}

/// Embeds a record into its interaction graph.
///
/// Node order is post, image (if any), then comments in record order. A
/// present image resolves through its own key first, then `image:<id>`.
pub fn build_graph(
    record: &MultimodalRecord,
    store: &EmbeddingStore,
    dim: usize,
    config: &GraphConfig,
) -> Result<InteractionGraph> {
    if store.dim() != dim {
        return Err(Error::shape(
            "build_graph",
            format!("embedding store has dim {}, expected {dim}", store.dim()),
        ));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut kinds = Vec::new();
    let mut ranks = Vec::new();

    rows.push(lookup(store, &post_key(&record.id))?.to_vec());
    kinds.push(NodeKind::Post);
    ranks.push(0);

    let image_node = if config.include_image {
        let row = match &record.image_ref {
            Some(key) => match store.get(key) {
                Some(row) => row.to_vec(),
                None => lookup(store, &image_key(&record.id))
                    .map_err(|_| Error::MissingEmbedding(key.clone()))?
                    .to_vec(),
            },
            None => vec![0.0; dim],
        };
        rows.push(row);
        kinds.push(NodeKind::Image);
        ranks.push(1);
        Some(rows.len() - 1)
    } else {
        None
    };

    let first_comment = rows.len();
    for (k, _) in record.comments.iter().enumerate() {
        rows.push(lookup(store, &comment_key(&record.id, k))?.to_vec());
        kinds.push(NodeKind::Comment);
        ranks.push(2 + k as u32);
    }

    let n = rows.len();
    let mut edges = Vec::new();
    if let Some(img) = image_node {
        edges.push((0, img));
    }
    for c in first_comment..n {
        let parent = if config.chain_comments && c > first_comment {
            c - 1
        } else {
            0
        };
        edges.push((parent, c));
        if config.link_image_comments {
            if let Some(img) = image_node {
                edges.push((img, c));
            }
        }
    }

    let graph = InteractionGraph {
        id: record.id.clone(),
        features: Tensor::from_rows(&rows)?,
        kinds,
        ranks,
        adjacency: Adjacency::from_undirected(n, &edges)?,
        label: record.label,
    };
    Ok(graph)
}
