use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::EmbeddingTable;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub users: usize,
    /// Hits per evaluated user, by user id.
    pub hits: Vec<(String, usize)>,
}

/// Precision and recall of the top `k` per user, averaged over users that
/// have both a retrieval list and at least one validation watch.
pub fn precision_recall_at_k(
    retrievals: &BTreeMap<String, Vec<String>>,
    validation: &BTreeMap<String, BTreeSet<String>>,
    k: usize,
) -> Result<PrecisionRecall> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let mut hits = Vec::new();
    let (mut p_sum, mut r_sum) = (0.0, 0.0);
    for (user, list) in retrievals {
        let Some(truth) = validation.get(user).filter(|t| !t.is_empty()) else {
            continue;
        };
        let h = list.iter().take(k).filter(|i| truth.contains(*i)).count();
        p_sum += h as f64 / k as f64;
        r_sum += h as f64 / truth.len() as f64;
        hits.push((user.clone(), h));
    }
    if hits.is_empty() {
        return Err(Error::NoEligibleUsers);
    }
    let n = hits.len() as f64;
    Ok(PrecisionRecall {
        precision: p_sum / n,
        recall: r_sum / n,
        users: hits.len(),
        hits,
    })
}

/// Counts describing how often source-exclusive items reach users.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OuterScenarioMetrics {
    /// Retrieved exclusive items the same user later watched.
    pub watch_count: usize,
    /// Distinct exclusive items present in any retrieval list.
    pub unique_item_count: usize,
    /// Exclusive items summed over all retrieval lists.
    pub retrieval_presence: usize,
}

pub fn outer_scenario_metrics(
    retrievals: &BTreeMap<String, Vec<String>>,
    exclusive: &HashSet<String>,
    validation: &BTreeMap<String, BTreeSet<String>>,
) -> OuterScenarioMetrics {
    let mut m = OuterScenarioMetrics::default();
    let mut unique = BTreeSet::new();
    for (user, list) in retrievals {
        let truth = validation.get(user);
        for item in list.iter().filter(|i| exclusive.contains(*i)) {
            m.retrieval_presence += 1;
            unique.insert(item);
            if truth.is_some_and(|t| t.contains(item)) {
                m.watch_count += 1;
            }
        }
    }
    m.unique_item_count = unique.len();
    m
}

/// Probability that a positive pair outscores a negative pair by inner
/// product, ties counting one half. Pairs with unknown ids are skipped.
pub fn edge_auc(table: &EmbeddingTable, positives: &[(String, String)], negatives: &[(String, String)]) -> Result<f64> {
    let score = |pairs: &[(String, String)]| -> Vec<f64> {
        pairs
            .iter()
            .filter_map(|(a, b)| Some(table.get(a)?.dot(&table.get(b)?)))
            .collect()
    };
    let pos = score(positives);
    let neg = score(negatives);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument("need scored positive and negative pairs".into()));
    }
    // rank-sum form of the Mann-Whitney statistic with midranks for ties
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}
