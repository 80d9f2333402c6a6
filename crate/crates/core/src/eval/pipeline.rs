use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use super::{
    build_index, outer_scenario_metrics, precision_recall_at_k, retrieve_all, EmbeddingTable, OuterScenarioMetrics,
    RetrievalConfig, UserQueue,
};
use crate::graph_builder::InteractionRecord;
use crate::{Error, Result};

/// One queue per user with target-scenario watches, ordered by user id.
///
/// The queue keeps the `queue_len` most recent distinct items (ties in
/// time broken by item id), oldest first; the history holds every item the
/// user watched in the target scenario.
pub fn build_user_queues(train: &[InteractionRecord], target: &str, queue_len: usize) -> Vec<UserQueue> {
    let mut per_user: BTreeMap<&str, Vec<&InteractionRecord>> = BTreeMap::new();
    for r in train.iter().filter(|r| r.scenario_id == target) {
        per_user.entry(&r.user_id).or_default().push(r);
    }
    per_user
        .into_iter()
        .map(|(user, mut recs)| {
            recs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.item_id.cmp(&b.item_id)));
            let history: HashSet<String> = recs.iter().map(|r| r.item_id.clone()).collect();
            let mut seen = HashSet::new();
            let mut items: Vec<String> = recs
                .iter()
                .rev()
                .filter(|r| seen.insert(r.item_id.as_str()))
                .take(queue_len)
                .map(|r| r.item_id.clone())
                .collect();
            items.reverse();
            UserQueue {
                user_id: user.to_owned(),
                items,
                history,
            }
        })
        .collect()
}

/// Distinct target-scenario items per user.
pub fn validation_truth(validation: &[InteractionRecord], target: &str) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in validation.iter().filter(|r| r.scenario_id == target) {
        out.entry(r.user_id.clone()).or_default().insert(r.item_id.clone());
    }
    out
}

/// Items watched in `source` and never in `target`.
pub fn source_exclusive_items(train: &[InteractionRecord], source: &str, target: &str) -> HashSet<String> {
    let in_target: HashSet<&str> = train
        .iter()
        .filter(|r| r.scenario_id == target)
        .map(|r| r.item_id.as_str())
        .collect();
    train
        .iter()
        .filter(|r| r.scenario_id == source && !in_target.contains(r.item_id.as_str()))
        .map(|r| r.item_id.clone())
        .collect()
}

pub struct EvalInput<'a> {
    pub table: &'a EmbeddingTable,
    pub train: &'a [InteractionRecord],
    pub validation: &'a [InteractionRecord],
    pub target: &'a str,
    /// Enables the outer-scenario counts.
    pub source: Option<&'a str>,
    pub retrieval: &'a RetrievalConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub target: String,
    pub source: Option<String>,
    pub k: usize,
    pub users: usize,
    pub precision: f64,
    pub recall: f64,
    pub hits: Vec<(String, usize)>,
    pub outer: Option<OuterScenarioMetrics>,
}

/// Retrieval for every user with target-scenario watches on both sides of
/// the split, scored against their validation watches.
pub fn evaluate(input: &EvalInput) -> Result<EvalReport> {
    let cfg = input.retrieval;
    let truth = validation_truth(input.validation, input.target);
    let queues: Vec<UserQueue> = build_user_queues(input.train, input.target, cfg.queue_len)
        .into_iter()
        .filter(|q| truth.contains_key(&q.user_id))
        .collect();
    if queues.is_empty() {
        return Err(Error::NoEligibleUsers);
    }
    let index = build_index(input.table)?;
    let lists = retrieve_all(&queues, &index, cfg);
    let retrievals: BTreeMap<String, Vec<String>> =
        queues.iter().map(|q| q.user_id.clone()).zip(lists).collect();
    let pr = precision_recall_at_k(&retrievals, &truth, cfg.final_k)?;
    let outer = input.source.map(|s| {
        let exclusive = source_exclusive_items(input.train, s, input.target);
        outer_scenario_metrics(&retrievals, &exclusive, &truth)
    });
    Ok(EvalReport {
        target: input.target.to_owned(),
        source: input.source.map(str::to_owned),
        k: cfg.final_k,
        users: pr.users,
        precision: pr.precision,
        recall: pr.recall,
        hits: pr.hits,
        outer,
    })
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let k = self.k;
        let mut s = String::new();
        let _ = writeln!(s, "target scenario: {}", self.target);
        let _ = writeln!(s, "users evaluated: {}", self.users);
        let _ = writeln!(s, "precision@{k}: {:.9}", self.precision);
        let _ = writeln!(s, "recall@{k}: {:.9}", self.recall);
        let total: usize = self.hits.iter().map(|h| h.1).sum();
        let _ = writeln!(s, "total hits: {total}");
        if let (Some(src), Some(o)) = (&self.source, &self.outer) {
            let _ = writeln!(s, "outer-scenario items (exclusive to {src}):");
            let _ = writeln!(s, "  watched after retrieval: {}", o.watch_count);
            let _ = writeln!(s, "  unique items retrieved: {}", o.unique_item_count);
            let _ = writeln!(s, "  appearances in retrieval lists: {}", o.retrieval_presence);
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let k = self.k;
        let mut s = String::new();
        let _ = writeln!(s, "target={}", self.target);
        if let Some(src) = &self.source {
            let _ = writeln!(s, "source={src}");
        }
        let _ = writeln!(s, "users={}", self.users);
        let _ = writeln!(s, "precision_at_{k}={:.9}", self.precision);
        let _ = writeln!(s, "recall_at_{k}={:.9}", self.recall);
        if let Some(o) = &self.outer {
            let _ = writeln!(s, "outer_watch_count={}", o.watch_count);
            let _ = writeln!(s, "outer_unique_item_count={}", o.unique_item_count);
            let _ = writeln!(s, "outer_retrieval_presence={}", o.retrieval_presence);
        }
        for (u, h) in &self.hits {
            let _ = writeln!(s, "hits.{u}={h}");
        }
        s
    }
}
