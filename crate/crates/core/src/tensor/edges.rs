use crate::error::{Error, Result};

/// Directed edge list grouped by source node (CSR layout).
///
/// Edges leaving node `i` occupy `offsets[i]..offsets[i + 1]` and are stored
/// in ascending target order. Attention ops treat each source's edge range as
/// one softmax segment, so `N_i` is exactly the targets of node `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl EdgeIndex {
    /// Builds the index from per-node neighbor lists.
    pub fn from_neighbors(neighbors: &[Vec<usize>]) -> Result<Self> {
        let n = neighbors.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for (i, list) in neighbors.iter().enumerate() {
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if let Some(&bad) = sorted.iter().find(|&&j| j >= n) {
                return Err(Error::Invalid(format!(
                    "edge {i}->{bad} points outside {n} nodes"
                )));
            }
            targets.extend(sorted);
            offsets.push(targets.len());
        }
        Ok(EdgeIndex { offsets, targets })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    /// Edge ids whose source is `node`.
    pub fn segment(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    pub fn target(&self, edge: usize) -> usize {
        self.targets[edge]
    }

    pub fn targets_of(&self, node: usize) -> &[usize] {
        &self.targets[self.segment(node)]
    }

    /// Iterates `(edge_id, source, target)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.num_nodes())
            .flat_map(move |i| self.segment(i).map(move |e| (e, i, self.targets[e])))
    }

    /// Edge id of `source -> target`, if present.
    pub fn find(&self, source: usize, target: usize) -> Option<usize> {
        let seg = self.segment(source);
        self.targets[seg.clone()]
            .binary_search(&target)
            .ok()
            .map(|k| seg.start + k)
    }
}
