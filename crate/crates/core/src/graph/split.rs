use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MultimodalRecord;
use crate::error::{Error, Result};

/// `test` is a fraction of the whole dataset; `validation` is a fraction of
/// what remains after the test partition is removed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub test: f64,
    pub validation: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            test: 0.2,
            validation: 0.2,
        }
    }
}

/// Record indices of each partition, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<MultimodalRecord>,
    pub validation: Vec<MultimodalRecord>,
    pub test: Vec<MultimodalRecord>,
}

/// Splits each class across partitions so that cell `(c, p)` is the floor or
/// ceiling of `sizes[c] * parts[p] / N`, rows sum to `sizes` and columns to
/// `parts` (which must sum to N). Rounding up prefers the largest fractional
/// parts; a bipartite augmenting-path pass settles whatever the greedy pass
/// leaves unassigned.
fn allocate(sizes: &[usize], parts: &[usize]) -> Vec<Vec<usize>> {
    let n: usize = sizes.iter().sum();
    debug_assert_eq!(parts.iter().sum::<usize>(), n);
    if n == 0 {
        return vec![vec![0; parts.len()]; sizes.len()];
    }
    let mut alloc: Vec<Vec<usize>> = sizes.iter().map(|&s| parts.iter().map(|&p| s * p / n).collect()).collect();
    let frac = |c: usize, p: usize| sizes[c] * parts[p] % n;
    let mut row_need: Vec<usize> = sizes.iter().zip(&alloc).map(|(s, a)| s - a.iter().sum::<usize>()).collect();
    let mut col_need: Vec<usize> = (0..parts.len())
        .map(|p| parts[p] - alloc.iter().map(|a| a[p]).sum::<usize>())
        .collect();
    let mut cells: Vec<(usize, usize)> = (0..sizes.len())
        .flat_map(|c| (0..parts.len()).map(move |p| (c, p)))
        .filter(|&(c, p)| frac(c, p) > 0)
        .collect();
    cells.sort_by(|&(c1, p1), &(c2, p2)| frac(c2, p2).cmp(&frac(c1, p1)).then((c1, p1).cmp(&(c2, p2))));
    let mut up = vec![vec![false; parts.len()]; sizes.len()];
    for &(c, p) in &cells {
        if row_need[c] > 0 && col_need[p] > 0 {
            up[c][p] = true;
            row_need[c] -= 1;
            col_need[p] -= 1;
        }
    }
    while let Some(start) = row_need.iter().position(|&r| r > 0) {
        // Breadth-first search over rows: row -> column by a free fractional
        // cell, column -> row by a cell already rounded up.
        let mut col_from: Vec<Option<usize>> = vec![None; parts.len()];
        let mut row_via: Vec<Option<usize>> = vec![None; sizes.len()];
        let mut row_seen = vec![false; sizes.len()];
        row_seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        let mut end = None;
        'search: while let Some(c) = queue.pop_front() {
            for p in 0..parts.len() {
                if up[c][p] || frac(c, p) == 0 || col_from[p].is_some() {
                    continue;
                }
                col_from[p] = Some(c);
                if col_need[p] > 0 {
                    end = Some(p);
                    break 'search;
                }
                for c2 in 0..sizes.len() {
                    if up[c2][p] && !row_seen[c2] {
                        row_seen[c2] = true;
                        row_via[c2] = Some(p);
                        queue.push_back(c2);
                    }
                }
            }
        }
        let mut p = end.expect("a proportional rounding always exists");
        col_need[p] -= 1;
        row_need[start] -= 1;
        loop {
            let c = col_from[p].expect("column on the path");
            up[c][p] = true;
            if c == start {
                break;
            }
            // Row `c` hands its unit in column `q` over to column `p`.
            let q = row_via[c].expect("row on the path");
            up[c][q] = false;
            p = q;
        }
    }
    for (c, row) in alloc.iter_mut().enumerate() {
        for (p, a) in row.iter_mut().enumerate() {
            *a += usize::from(up[c][p]);
        }
    }
    alloc
}

fn check_ratio(name: &str, r: f64) -> Result<()> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Config(format!("{name} ratio {r} must lie in [0, 1)")));
    }
    Ok(())
}

/// Stratified train/validation/test split over class labels.
///
/// Classes are shuffled independently with one seeded stream, visited in
/// class order; each class contributes its allocated test records first, then
/// validation, the rest going to training.
pub fn split_indices(labels: &[usize], seed: u64, ratios: SplitRatios) -> Result<SplitIndices> {
    check_ratio("test", ratios.test)?;
    check_ratio("validation", ratios.validation)?;
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < 3 {
            return Err(Error::Invalid(format!(
                "class {c} has {} records; at least 3 are needed for three partitions",
                members.len()
            )));
        }
    }
    let n = labels.len();
    let n_test = (ratios.test * n as f64).round() as usize;
    let n_val = (ratios.validation * (n - n_test) as f64).round() as usize;
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let alloc = allocate(&sizes, &[n_test, n_val, n - n_test - n_val]);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let (t, v) = (alloc[c][0], alloc[c][1]);
        out.test.extend_from_slice(&members[..t]);
        out.validation.extend_from_slice(&members[t..t + v]);
        out.train.extend_from_slice(&members[t + v..]);
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn split_dataset(records: &[MultimodalRecord], seed: u64, ratios: SplitRatios) -> Result<DatasetSplit> {
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let idx = split_indices(&labels, seed, ratios)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| records[i].clone()).collect();
    Ok(DatasetSplit {
        train: pick(&idx.train),
        validation: pick(&idx.validation),
        test: pick(&idx.test),
    })
}
