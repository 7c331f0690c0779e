//! Interaction graphs: one post node, an optional image node and zero or more
//! comment nodes per record, plus block-diagonal batching.

mod build;
mod dataset;
mod split;

pub use build::{build_graph, comment_key, image_key, post_key, GraphConfig};
pub use dataset::{parse_dataset, parse_raw_dataset, parse_record_line, LabelSchema, MultimodalRecord, RawRecord};
pub use split::{split_dataset, split_indices, DatasetSplit, SplitIndices, SplitRatios};

use std::borrow::Borrow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{EdgeIndex, Tensor};

/// Graphs with more nodes than this store neighbor lists instead of a dense mask.
pub const DENSE_ADJACENCY_LIMIT: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Post,
    Image,
    Comment,
}

/// Symmetric adjacency with self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Adjacency {
    Dense { n: usize, mask: Vec<bool> },
    Sparse { neighbors: Vec<Vec<usize>> },
}

impl Adjacency {
    /// Undirected edges `(i, j)` plus a self-loop on every node.
    pub fn from_undirected(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Invalid(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self::from_sorted_lists(neighbors))
    }

    fn from_sorted_lists(neighbors: Vec<Vec<usize>>) -> Self {
        let n = neighbors.len();
        if n > DENSE_ADJACENCY_LIMIT {
            return Adjacency::Sparse { neighbors };
        }
        let mut mask = vec![false; n * n];
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                mask[i * n + j] = true;
            }
        }
        Adjacency::Dense { n, mask }
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            Adjacency::Dense { n, .. } => *n,
            Adjacency::Sparse { neighbors } => neighbors.len(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, Adjacency::Dense { .. })
    }

    /// Neighbors of `i` (including `i` itself) in ascending order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        match self {
            Adjacency::Dense { n, mask } => (0..*n).filter(|&j| mask[i * n + j]).collect(),
            Adjacency::Sparse { neighbors } => neighbors[i].clone(),
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        match self {
            Adjacency::Dense { n, mask } => mask[i * n + j],
            Adjacency::Sparse { neighbors } => neighbors[i].binary_search(&j).is_ok(),
        }
    }

    fn lists(&self) -> Vec<Vec<usize>> {
        (0..self.num_nodes()).map(|i| self.neighbors(i)).collect()
    }

    /// Number of undirected non-loop edges.
    pub fn num_edges(&self) -> usize {
        (0..self.num_nodes())
            .map(|i| self.neighbors(i).into_iter().filter(|&j| j > i).count())
            .sum()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.num_nodes();
        (0..n).all(|i| self.neighbors(i).into_iter().all(|j| self.contains(j, i)))
    }

    pub fn has_all_self_loops(&self) -> bool {
        (0..self.num_nodes()).all(|i| self.contains(i, i))
    }

    pub fn edge_index(&self) -> EdgeIndex {
        EdgeIndex::from_neighbors(&self.lists()).expect("adjacency lists are in range")
    }

    /// Block-diagonal merge; node ids of block `b` are shifted by the sizes of
    /// the preceding blocks.
    pub fn block_diagonal(parts: &[&Adjacency]) -> Adjacency {
        let mut merged = Vec::new();
        let mut base = 0;
        for part in parts {
            for i in 0..part.num_nodes() {
                merged.push(part.neighbors(i).into_iter().map(|j| j + base).collect());
            }
            base += part.num_nodes();
        }
        Self::from_sorted_lists(merged)
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Adjacency {
        let n = self.num_nodes();
        let mut lists = vec![Vec::new(); n];
        for i in 0..n {
            lists[perm[i]] = self.neighbors(i).into_iter().map(|j| perm[j]).collect();
        }
        for list in &mut lists {
            list.sort_unstable();
        }
        Self::from_sorted_lists(lists)
    }
}

/// Embedded graph of a single record.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    pub id: String,
    pub features: Tensor,
    pub kinds: Vec<NodeKind>,
    /// Stable record-order rank of each node (post 0, image 1, comment k at
    /// 2 + k). Travels with the node under relabeling and breaks top-k ties.
    pub ranks: Vec<u32>,
    pub adjacency: Adjacency,
    pub label: usize,
}

impl InteractionGraph {
    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.features.rows() != n || self.ranks.len() != n || self.adjacency.num_nodes() != n {
            return Err(Error::Invalid(format!(
                "graph {}: {} kinds, {} feature rows, {} ranks, {} adjacency nodes",
                self.id,
                n,
                self.features.rows(),
                self.ranks.len(),
                self.adjacency.num_nodes()
            )));
        }
        if self.count(NodeKind::Post) != 1 || self.count(NodeKind::Image) > 1 {
            return Err(Error::Invalid(format!(
                "graph {} must have one post node and at most one image node",
                self.id
            )));
        }
        if !self.adjacency.is_symmetric() || !self.adjacency.has_all_self_loops() {
            return Err(Error::Invalid(format!(
                "graph {} adjacency must be symmetric with self-loops",
                self.id
            )));
        }
        Ok(())
    }

    /// Same graph with node `i` moved to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<InteractionGraph> {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Invalid(format!("{perm:?} is not a permutation of {n} nodes")));
        }
        let mut features = Tensor::zeros(n, self.dim());
        let mut kinds = self.kinds.clone();
        let mut ranks = self.ranks.clone();
        for i in 0..n {
            features.row_mut(perm[i]).copy_from_slice(self.features.row(i));
            kinds[perm[i]] = self.kinds[i];
            ranks[perm[i]] = self.ranks[i];
        }
        Ok(InteractionGraph {
            id: self.id.clone(),
            features,
            kinds,
            ranks,
            adjacency: self.adjacency.permuted(perm),
            label: self.label,
        })
    }
}

/// Several graphs merged into one disconnected graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub features: Tensor,
    pub kinds: Vec<NodeKind>,
    pub ranks: Vec<u32>,
    pub adjacency: Adjacency,
    /// First node of each graph.
    pub offsets: Vec<usize>,
    pub labels: Vec<usize>,
    edges: Arc<EdgeIndex>,
}

impl GraphBatch {
    pub fn num_graphs(&self) -> usize {
        self.offsets.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn edges(&self) -> &Arc<EdgeIndex> {
        &self.edges
    }

    /// Graph index owning each node.
    pub fn graph_of_nodes(&self) -> Vec<usize> {
        let n = self.num_nodes();
        let mut out = Vec::with_capacity(n);
        for (g, &start) in self.offsets.iter().enumerate() {
            let end = self.offsets.get(g + 1).copied().unwrap_or(n);
            out.extend(std::iter::repeat_n(g, end - start));
        }
        out
    }
}

/// Merges graphs block-diagonally.
pub fn batch<G: Borrow<InteractionGraph>>(graphs: &[G]) -> Result<GraphBatch> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Invalid("cannot batch an empty list of graphs".into()))?
        .borrow();
    let dim = first.dim();
    let total: usize = graphs.iter().map(|g| g.borrow().num_nodes()).sum();
    let mut data = Vec::with_capacity(total * dim);
    let mut kinds = Vec::with_capacity(total);
    let mut ranks = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(graphs.len());
    let mut labels = Vec::with_capacity(graphs.len());
    for g in graphs {
        let g = g.borrow();
        if g.dim() != dim {
            return Err(Error::shape(
                "batch",
                format!("graph {} has dim {}, expected {dim}", g.id, g.dim()),
            ));
        }
        if g.num_nodes() == 0 {
            return Err(Error::Invalid(format!("graph {} has no nodes", g.id)));
        }
        offsets.push(kinds.len());
        labels.push(g.label);
        data.extend_from_slice(g.features.data());
        kinds.extend_from_slice(&g.kinds);
        ranks.extend_from_slice(&g.ranks);
    }
    let parts: Vec<&Adjacency> = graphs.iter().map(|g| &g.borrow().adjacency).collect();
    let adjacency = Adjacency::block_diagonal(&parts);
    let edges = Arc::new(adjacency.edge_index());
    Ok(GraphBatch {
        features: Tensor::new(total, dim, data)?,
        kinds,
        ranks,
        adjacency,
        offsets,
        labels,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(n_comments: usize, dim: usize, label: usize, fill: f64) -> InteractionGraph {
        let n = n_comments + 1;
        let edges: Vec<_> = (1..n).map(|c| (0, c)).collect();
        let mut kinds = vec![NodeKind::Post];
        kinds.extend(std::iter::repeat_n(NodeKind::Comment, n_comments));
        InteractionGraph {
            id: format!("g{n}"),
            features: Tensor::filled(n, dim, fill),
            kinds,
            ranks: (0..n as u32).map(|r| if r == 0 { 0 } else { r + 1 }).collect(),
            adjacency: Adjacency::from_undirected(n, &edges).unwrap(),
            label,
        }
    }

    #[test]
    fn adjacency_symmetric_with_loops() {
        let a = Adjacency::from_undirected(4, &[(0, 1), (0, 2), (2, 3)]).unwrap();
        assert!(a.is_dense());
        assert!(a.is_symmetric() && a.has_all_self_loops());
        assert_eq!(a.neighbors(0), vec![0, 1, 2]);
        assert_eq!(a.num_edges(), 3);
        assert!(Adjacency::from_undirected(2, &[(0, 5)]).is_err());
    }

    #[test]
    fn large_graphs_use_neighbor_lists() {
        let n = DENSE_ADJACENCY_LIMIT + 1;
        let edges: Vec<_> = (1..n).map(|c| (0, c)).collect();
        let a = Adjacency::from_undirected(n, &edges).unwrap();
        assert!(!a.is_dense());
        assert!(a.is_symmetric() && a.has_all_self_loops());
        assert_eq!(a.neighbors(5), vec![0, 5]);
    }

    #[test]
    fn batch_single_graph_is_identity() {
        let g = star(2, 3, 1, 0.5);
        let b = batch(&[&g]).unwrap();
        assert_eq!(b.offsets, vec![0]);
        assert_eq!(b.features, g.features);
        assert_eq!(b.adjacency, g.adjacency);
        assert_eq!(b.labels, vec![1]);
    }

    #[test]
    fn batch_offsets_and_block_structure() {
        let (g1, g2) = (star(2, 4, 0, 1.0), star(1, 4, 1, 2.0));
        let b = batch(&[g1, g2]).unwrap();
        assert_eq!(b.offsets, vec![0, 3]);
        assert_eq!(b.features.shape(), (5, 4));
        assert_eq!(b.graph_of_nodes(), vec![0, 0, 0, 1, 1]);
        let owner = b.graph_of_nodes();
        for i in 0..5 {
            for j in b.adjacency.neighbors(i) {
                assert_eq!(owner[i], owner[j], "edge {i}-{j} crosses graphs");
            }
        }
    }

    #[test]
    fn batch_errors() {
        let empty: [InteractionGraph; 0] = [];
        assert!(batch(&empty).is_err());
        assert!(batch(&[star(1, 2, 0, 0.0), star(1, 3, 0, 0.0)]).is_err());
    }

    #[test]
    fn permuted_graph_moves_rows_and_edges() {
        let g = star(2, 1, 0, 0.0);
        let mut g = g;
        g.features = Tensor::column(&[10.0, 20.0, 30.0]);
        let p = g.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.features.data(), &[20.0, 30.0, 10.0]);
        assert_eq!(p.kinds[2], NodeKind::Post);
        assert_eq!(p.ranks[2], 0);
        assert!(p.adjacency.contains(2, 0) && p.adjacency.contains(2, 1));
        assert!(!p.adjacency.contains(0, 1));
        assert!(g.permuted(&[0, 0, 1]).is_err());
    }
}
