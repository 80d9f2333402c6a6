//! From raw watch logs to the cross-scenario multi-graph.
//!
//! The pipeline is `parse_log → clean_records → extract_transition_pairs →
//! build_csmg`, followed by [`classify_edges`] for the edge-composition
//! report of one source scenario against one target scenario.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use crate::graph::{Csmg, FeatureRow};
use crate::synthgen::ItemMeta;
use crate::{par, Error, Result};

/// Adjacent watches further apart than this (in seconds) do not form a pair.
pub const MAX_TRANSITION_GAP_S: i64 = 3600;

/// Records at or below this completion rate are discarded.
pub const MIN_COMPLETION_RATE: f64 = 0.03;

pub const DEFAULT_HASH_BUCKETS: usize = 5000;

/// One user watch event.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub scenario_id: String,
    pub timestamp: i64,
    pub completion_rate: f64,
}

impl InteractionRecord {
    pub fn new(user: &str, item: &str, scenario: &str, timestamp: i64, completion_rate: f64) -> Self {
        Self {
            user_id: user.to_owned(),
            item_id: item.to_owned(),
            scenario_id: scenario.to_owned(),
            timestamp,
            completion_rate,
        }
    }
}

/// An ordered pair of consecutive watches within one user's scenario history.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransitionPair {
    pub src: String,
    pub dst: String,
    pub scenario_id: String,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn hash_bucket(s: &str, buckets: usize) -> u32 {
    (fnv1a64(s.as_bytes()) % buckets as u64) as u32
}

/// Parses the tab-separated log: `user_id, item_id, scenario_id, timestamp,
/// completion_rate`, no header. Blank lines are skipped.
pub fn parse_log<R: BufRead>(reader: R) -> Result<Vec<InteractionRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        out.push(parse_line(line, lineno)?);
    }
    Ok(out)
}

fn parse_line(line: &str, lineno: usize) -> Result<InteractionRecord> {
    let fields: Vec<&str> = line.split('\t').collect();
    let err = |field, message: String| Error::Parse {
        line: lineno,
        field,
        message,
    };
    if fields.len() != 5 {
        return Err(err("record", format!("expected 5 tab-separated fields, found {}", fields.len())));
    }
    for (name, value) in ["user_id", "item_id", "scenario_id"].iter().zip(&fields) {
        if value.is_empty() {
            return Err(err(name, "empty".into()));
        }
    }
    let timestamp = fields[3]
        .trim()
        .parse::<i64>()
        .map_err(|e| err("timestamp", format!("`{}`: {e}", fields[3])))?;
    let completion_rate = fields[4]
        .trim()
        .parse::<f64>()
        .map_err(|e| err("completion_rate", format!("`{}`: {e}", fields[4])))?;
    if !completion_rate.is_finite() || completion_rate < 0.0 {
        return Err(err("completion_rate", format!("must be finite and >= 0, got {completion_rate}")));
    }
    Ok(InteractionRecord::new(fields[0], fields[1], fields[2], timestamp, completion_rate))
}

pub fn write_log<W: Write>(records: &[InteractionRecord], mut w: W) -> Result<()> {
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.user_id, r.item_id, r.scenario_id, r.timestamp, r.completion_rate
        )?;
    }
    Ok(())
}

/// Removes exact duplicates on `(user, item, scenario, timestamp)`, records of
/// unregistered items and records with completion rate `<= 0.03`.
pub fn clean_records(records: &[InteractionRecord], catalog_ids: &HashSet<String>) -> Vec<InteractionRecord> {
    let mut seen = HashSet::new();
    records
        .iter()
        .filter(|r| r.completion_rate > MIN_COMPLETION_RATE)
        .filter(|r| catalog_ids.contains(&r.item_id))
        .filter(|r| {
            seen.insert((
                r.user_id.as_str(),
                r.item_id.as_str(),
                r.scenario_id.as_str(),
                r.timestamp,
            ))
        })
        .cloned()
        .collect()
}

/// Groups records by `(user, scenario)`, sorts each group by timestamp
/// ascending (item id breaks ties) and emits every adjacent pair closer than
/// one hour. Immediate rewatches (`src == dst`) are dropped.
pub fn extract_transition_pairs(records: &[InteractionRecord]) -> Vec<TransitionPair> {
    let mut groups: BTreeMap<(&str, &str), Vec<(i64, &str)>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.user_id.as_str(), r.scenario_id.as_str()))
            .or_default()
            .push((r.timestamp, r.item_id.as_str()));
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let per_group = par::map_collect(&groups, |((_, scenario), seq)| {
        let mut seq = seq.clone();
        seq.sort_unstable();
        seq.windows(2)
            .filter(|w| w[1].0 - w[0].0 < MAX_TRANSITION_GAP_S && w[0].1 != w[1].1)
            .map(|w| TransitionPair {
                src: w[0].1.to_owned(),
                dst: w[1].1.to_owned(),
                scenario_id: (*scenario).to_owned(),
            })
            .collect::<Vec<_>>()
    });
    per_group.into_iter().flatten().collect()
}

/// Builds the multi-graph. Nodes are every item that appears in a pair or in
/// a cleaned record, in item-id order; scenarios are sorted by id.
pub fn build_csmg(
    pairs: &[TransitionPair],
    records: &[InteractionRecord],
    catalog: &[ItemMeta],
    hash_buckets: usize,
) -> Result<Csmg> {
    if hash_buckets == 0 {
        return Err(Error::InvalidArgument("hash_buckets must be >= 1".into()));
    }
    let meta: HashMap<&str, &ItemMeta> = catalog.iter().map(|m| (m.item_id.as_str(), m)).collect();

    let mut items: BTreeSet<&str> = BTreeSet::new();
    let mut scenarios: BTreeSet<&str> = BTreeSet::new();
    for r in records {
        items.insert(&r.item_id);
        scenarios.insert(&r.scenario_id);
    }
    for p in pairs {
        items.insert(&p.src);
        items.insert(&p.dst);
        scenarios.insert(&p.scenario_id);
    }
    for item in &items {
        if !meta.contains_key(item) {
            return Err(Error::UnknownItem((*item).to_owned()));
        }
    }
    let item_ids: Vec<String> = items.iter().map(|s| (*s).to_owned()).collect();
    let scenario_ids: Vec<String> = scenarios.iter().map(|s| (*s).to_owned()).collect();
    let node_of: HashMap<&str, u32> = items.iter().enumerate().map(|(i, s)| (*s, i as u32)).collect();
    let scen_of: HashMap<&str, usize> = scenarios.iter().enumerate().map(|(i, s)| (*s, i)).collect();

    let mut watch_counts = vec![vec![0u32; item_ids.len()]; scenario_ids.len()];
    for r in records {
        watch_counts[scen_of[r.scenario_id.as_str()]][node_of[r.item_id.as_str()] as usize] += 1;
    }

    let mut edges: Vec<BTreeMap<(u32, u32), u32>> = vec![BTreeMap::new(); scenario_ids.len()];
    for p in pairs {
        let e = edges[scen_of[p.scenario_id.as_str()]]
            .entry((node_of[p.src.as_str()], node_of[p.dst.as_str()]))
            .or_insert(0);
        *e += 1;
    }
    let edge_lists: Vec<Vec<(u32, u32, u32)>> = edges
        .into_iter()
        .map(|m| m.into_iter().map(|((s, d), c)| (s, d, c)).collect())
        .collect();

    let features = item_ids
        .iter()
        .map(|id| {
            let m = meta[id.as_str()];
            FeatureRow {
                keyword_bucket: hash_bucket(&m.keyword, hash_buckets),
                tag_bucket: hash_bucket(&m.tag, hash_buckets),
                id_bucket: hash_bucket(&m.item_id, hash_buckets),
                log_duration: f64::from(m.duration_s).ln_1p(),
                // filled in from adjacency below
                log_degree: 0.0,
            }
        })
        .collect();

    let mut g = Csmg::from_parts(
        item_ids,
        scenario_ids,
        hash_buckets as u32,
        features,
        watch_counts,
        &edge_lists,
        String::new(),
    )?;
    g.refresh_degree_features();
    Ok(g)
}

/// Edge composition of one source scenario measured against a target.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeCompositionReport {
    pub source: String,
    pub target: String,
    /// Source edges that also exist in the target.
    pub co_shared: u64,
    /// Source-only edges with at least one endpoint watched in the target.
    pub source_only_with_co_shared: u64,
    /// Source-only edges between items never watched in the target.
    pub source_only_exclusive: u64,
    pub total_source_edges: u64,
    pub total_target_edges: u64,
}

impl EdgeCompositionReport {
    fn pct(&self, n: u64) -> f64 {
        if self.total_source_edges == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.total_source_edges as f64
        }
    }

    pub fn percentages(&self) -> [f64; 3] {
        [
            self.pct(self.co_shared),
            self.pct(self.source_only_with_co_shared),
            self.pct(self.source_only_exclusive),
        ]
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        let [a, b, c] = self.percentages();
        format!(
            "source={}\ntarget={}\nco_shared={}\nco_shared_pct={a:.2}\n\
             source_only_with_co_shared={}\nsource_only_with_co_shared_pct={b:.2}\n\
             source_only_exclusive={}\nsource_only_exclusive_pct={c:.2}\n\
             total_source_edges={}\ntotal_target_edges={}\n",
            self.source,
            self.target,
            self.co_shared,
            self.source_only_with_co_shared,
            self.source_only_exclusive,
            self.total_source_edges,
            self.total_target_edges
        )
    }
}

fn thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl fmt::Display for EdgeCompositionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = self.percentages();
        let (s, t) = (&self.source, &self.target);
        writeln!(f, "{:<52} {:>14} {:>10}", "Edge type", "Number", "Percentage")?;
        writeln!(f, "{:<52} {:>14} {:>9.2}%", "Co-shared edges of two scenarios", thousands(self.co_shared), a)?;
        writeln!(
            f,
            "{:<52} {:>14} {:>9.2}%",
            format!("{s}-only edges with >= 1 co-shared items"),
            thousands(self.source_only_with_co_shared),
            b
        )?;
        writeln!(
            f,
            "{:<52} {:>14} {:>9.2}%",
            format!("{s}-only edges of {s}-exclusive items"),
            thousands(self.source_only_exclusive),
            c
        )?;
        writeln!(f, "{:<52} {:>14} {:>9}%", format!("# edges in {s} scenario"), thousands(self.total_source_edges), 100)?;
        writeln!(f, "{:<52} {:>14}", format!("(# edges in {t} scenario)"), format!("({})", thousands(self.total_target_edges)))
    }
}

/// Classifies every source-scenario edge against the target scenario.
///
/// An item counts as watched in the target when it has a target record or
/// a nonzero target degree.
pub fn classify_edges(g: &Csmg, source: &str, target: &str) -> Result<EdgeCompositionReport> {
    let s = g.scenario_index(source)?;
    let t = g.scenario_index(target)?;
    let src_view = g.scenario_subgraph(s);
    let tgt_view = g.scenario_subgraph(t);
    let watched_in_target = |v: u32| g.watch_count(t, v) > 0 || tgt_view.in_degree(v) > 0 || tgt_view.out_degree(v) > 0;

    let mut report = EdgeCompositionReport {
        source: source.to_owned(),
        target: target.to_owned(),
        co_shared: 0,
        source_only_with_co_shared: 0,
        source_only_exclusive: 0,
        total_source_edges: src_view.edge_count() as u64,
        total_target_edges: tgt_view.edge_count() as u64,
    };
    for (i, j, _) in src_view.out_edges() {
        if tgt_view.edge_count_between(i, j).is_some() {
            report.co_shared += 1;
        } else if watched_in_target(i) || watched_in_target(j) {
            report.source_only_with_co_shared += 1;
        } else {
            report.source_only_exclusive += 1;
        }
    }
    Ok(report)
}
