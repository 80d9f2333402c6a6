use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};

use ndarray::{s, ArrayView1};
use serde::{Deserialize, Serialize};

use super::EmbeddingTable;
use crate::{par, Error, Result};

/// How a candidate's score combines its inner products with the queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Max,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub per_query_k: usize,
    pub final_k: usize,
    pub queue_len: usize,
    pub aggregation: Aggregation,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            per_query_k: 15,
            final_k: 100,
            queue_len: 20,
            aggregation: Aggregation::Max,
        }
    }
}

/// Most recent items of one user, oldest first, plus the full history used
/// to filter candidates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserQueue {
    pub user_id: String,
    pub items: Vec<String>,
    pub history: HashSet<String>,
}

/// Exhaustive inner-product search over an embedding table.
#[derive(Clone, Copy, Debug)]
pub struct ExactIndex<'a> {
    table: &'a EmbeddingTable,
}

pub fn build_index(table: &EmbeddingTable) -> Result<ExactIndex<'_>> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("cannot index an empty embedding table".into()));
    }
    Ok(ExactIndex { table })
}

/// Higher score first, then smaller item id. Adding 0.0 folds -0.0 into
/// +0.0 so equal scores tie whatever the summation order.
fn rank(table: &EmbeddingTable, a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    (b.1 + 0.0).total_cmp(&(a.1 + 0.0)).then_with(|| table.ids()[a.0].cmp(&table.ids()[b.0]))
}

fn top_of(table: &EmbeddingTable, mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, |a, b| rank(table, a, b));
        scored.truncate(k);
    }
    scored.sort_unstable_by(|a, b| rank(table, a, b));
    scored
}

impl<'a> ExactIndex<'a> {
    pub fn table(&self) -> &'a EmbeddingTable {
        self.table
    }

    /// The `k` rows with the largest inner product with `query`, skipping
    /// row `exclude`.
    pub fn top_k(&self, query: ArrayView1<f64>, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let scores = self.table.vectors().dot(&query);
        let scored = scores.iter().enumerate().filter(|(i, _)| Some(*i) != exclude).map(|(i, &s)| (i, s)).collect();
        top_of(self.table, scored, k)
    }

    /// [`top_k`](Self::top_k) for several table rows at once, each
    /// excluding itself.
    pub fn top_k_of_rows(&self, rows: &[usize], k: usize) -> Vec<Vec<(usize, f64)>> {
        let v = self.table.vectors();
        let chunks: Vec<&[usize]> = rows.chunks(par::ROW_CHUNK).collect();
        let parts = par::map_collect(&chunks, |chunk| {
            let q = v.select(ndarray::Axis(0), chunk);
            let scores = v.dot(&q.t());
            (0..chunk.len())
                .map(|c| {
                    let col = scores.slice(s![.., c]);
                    let scored = col
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != chunk[c])
                        .map(|(i, &s)| (i, s))
                        .collect();
                    top_of(self.table, scored, k)
                })
                .collect::<Vec<_>>()
        });
        parts.into_iter().flatten().collect()
    }
}

fn finish(
    index: &ExactIndex,
    queue: &UserQueue,
    q_rows: &[usize],
    per_query: &[&[(usize, f64)]],
    cfg: &RetrievalConfig,
) -> Vec<String> {
    let table = index.table;
    let v = table.vectors();
    let candidates: BTreeSet<usize> = per_query
        .iter()
        .flat_map(|l| l.iter().map(|p| p.0))
        .filter(|&c| !queue.history.contains(&table.ids()[c]))
        .collect();
    let scored: Vec<(usize, f64)> = candidates
        .into_iter()
        .map(|c| {
            let dots = q_rows.iter().map(|&q| v.row(q).dot(&v.row(c)));
            let score = match cfg.aggregation {
                Aggregation::Max => dots.fold(f64::NEG_INFINITY, f64::max),
                Aggregation::Sum => dots.sum(),
            };
            (c, score)
        })
        .collect();
    top_of(table, scored, cfg.final_k)
        .into_iter()
        .map(|(i, _)| table.ids()[i].clone())
        .collect()
}

fn queue_rows(index: &ExactIndex, queue: &UserQueue, cfg: &RetrievalConfig) -> Vec<usize> {
    let start = queue.items.len().saturating_sub(cfg.queue_len);
    queue.items[start..].iter().filter_map(|id| index.table.row_of(id)).collect()
}

/// Ranked recommendations for one user: the union of each queue item's
/// nearest neighbors minus the watch history, scored against the whole
/// queue. Queue items missing from the table are ignored.
pub fn retrieve(queue: &UserQueue, index: &ExactIndex, cfg: &RetrievalConfig) -> Vec<String> {
    let q_rows = queue_rows(index, queue, cfg);
    let lists: Vec<Vec<(usize, f64)>> = q_rows
        .iter()
        .map(|&q| index.top_k(index.table.vectors().row(q), cfg.per_query_k, Some(q)))
        .collect();
    let refs: Vec<&[(usize, f64)]> = lists.iter().map(|l| l.as_slice()).collect();
    finish(index, queue, &q_rows, &refs, cfg)
}

/// [`retrieve`] for many users, sharing the per-item neighbor lists.
pub fn retrieve_all(queues: &[UserQueue], index: &ExactIndex, cfg: &RetrievalConfig) -> Vec<Vec<String>> {
    let rows: Vec<Vec<usize>> = queues.iter().map(|q| queue_rows(index, q, cfg)).collect();
    let distinct: Vec<usize> = rows.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let lists = index.top_k_of_rows(&distinct, cfg.per_query_k);
    let by_row: HashMap<usize, &[(usize, f64)]> =
        distinct.iter().copied().zip(lists.iter().map(|l| l.as_slice())).collect();
    let work: Vec<(&UserQueue, &Vec<usize>)> = queues.iter().zip(&rows).collect();
    par::map_collect(&work, |(queue, q_rows)| {
        let refs: Vec<&[(usize, f64)]> = q_rows.iter().map(|r| by_row[r]).collect();
        finish(index, queue, q_rows, &refs, cfg)
    })
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;

    use super::*;

    fn table(rows: Vec<Vec<f64>>) -> EmbeddingTable {
        let n = rows.len();
        let d = rows[0].len();
        let ids = (0..n).map(|i| format!("i{i:02}")).collect();
        EmbeddingTable::new(ids, Array2::from_shape_vec((n, d), rows.concat()).unwrap()).unwrap()
    }

    fn queue(items: &[&str], extra_history: &[&str]) -> UserQueue {
        UserQueue {
            user_id: "u".into(),
            items: items.iter().map(|s| s.to_string()).collect(),
            history: items.iter().chain(extra_history).map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn basis_vectors() {
        let t = table((0..4).map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect()).collect());
        let idx = build_index(&t).unwrap();
        let q = ndarray::arr1(&[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(idx.top_k(q.view(), 1, None)[0].0, 1);
        // ties at zero broken by id
        let all = idx.top_k(q.view(), 10, None);
        assert_eq!(all.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 0, 2, 3]);
    }

    #[test]
    fn signed_zero_ties() {
        let t = table(vec![vec![1.0], vec![0.0], vec![0.0]]);
        let scored = vec![(2, 0.0), (1, -0.0), (0, 1.0)];
        let order: Vec<usize> = top_of(&t, scored, 3).iter().map(|p| p.0).collect();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn empty_table_rejected() {
        let t = EmbeddingTable::new(vec![], Array2::zeros((0, 4))).unwrap();
        assert!(build_index(&t).is_err());
    }

    #[test]
    fn single_queue_item_scores_all_others() {
        let t = table((0..10).map(|i| vec![i as f64, 1.0]).collect());
        let idx = build_index(&t).unwrap();
        let cfg = RetrievalConfig::default();
        let out = retrieve(&queue(&["i03"], &[]), &idx, &cfg);
        assert_eq!(out.len(), 9);
        assert!(!out.contains(&"i03".to_string()));
        assert_eq!(out[0], "i09");
        let out = retrieve(&queue(&["i03"], &["i09"]), &idx, &cfg);
        assert!(!out.contains(&"i09".to_string()));
    }

    #[test]
    fn sum_aggregation_differs_from_max() {
        // i01 is extreme along one queue item, i02 moderate along both
        let t = table(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![3.0, -1.0],
            vec![1.2, 1.2],
        ]);
        let idx = build_index(&t).unwrap();
        let q = queue(&["i00", "i01"], &[]);
        let max = retrieve(&q, &idx, &RetrievalConfig::default());
        let sum = retrieve(
            &q,
            &idx,
            &RetrievalConfig {
                aggregation: Aggregation::Sum,
                ..Default::default()
            },
        );
        assert_eq!(max, vec!["i02", "i03"]);
        assert_eq!(sum, vec!["i03", "i02"]);
    }

    #[test]
    fn batch_matches_single() {
        let t = table((0..40).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), 1.0]).collect());
        let idx = build_index(&t).unwrap();
        let cfg = RetrievalConfig {
            per_query_k: 4,
            final_k: 7,
            ..Default::default()
        };
        let queues: Vec<UserQueue> = (0..6)
            .map(|u| queue(&[&format!("i{:02}", u * 3), &format!("i{:02}", u * 5 + 1)], &[]))
            .collect();
        let batch = retrieve_all(&queues, &idx, &cfg);
        for (q, b) in queues.iter().zip(batch) {
            assert_eq!(retrieve(q, &idx, &cfg), b);
        }
    }
}
