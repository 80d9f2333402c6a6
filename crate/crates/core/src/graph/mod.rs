//! The cross-scenario multi-graph.
//!
//! Items are dense `u32` nodes. Each scenario owns a pair of CSR adjacency
//! structures (out-edges by source, in-edges by destination) carrying integer
//! transition counts. The graph is immutable once built and safe to share
//! across threads.

mod io;
mod sampling;

use std::collections::HashMap;

pub use io::{deserialize, serialize, GRAPH_MAGIC, GRAPH_VERSION};
pub use sampling::{
    build_block, sample_in_neighbors, BlockConfig, BlockEdge, BlockLayer, SampledBlock, WeightMode,
    DEFAULT_FANOUT,
};

use crate::{Error, Result};

/// Per-node raw features before the learned transformation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureRow {
    pub keyword_bucket: u32,
    pub tag_bucket: u32,
    pub id_bucket: u32,
    /// `ln(1 + duration_s)`
    pub log_duration: f64,
    /// `ln(1 + total degree)`, degree summed over scenarios and directions
    pub log_degree: f64,
}

/// Compressed sparse rows with sorted column indices.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    counts: Vec<u32>,
}

impl Csr {
    /// `edges` must be sorted by `(row, col)` without duplicates.
    fn from_sorted(n: usize, edges: impl Iterator<Item = (u32, u32, u32)>) -> Self {
        let mut offsets = vec![0usize; n + 1];
        let mut targets = Vec::new();
        let mut counts = Vec::new();
        for (r, c, w) in edges {
            offsets[r as usize + 1] += 1;
            targets.push(c);
            counts.push(w);
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Self {
            offsets,
            targets,
            counts,
        }
    }

    pub fn row(&self, v: u32) -> (&[u32], &[u32]) {
        let (lo, hi) = (self.offsets[v as usize], self.offsets[v as usize + 1]);
        (&self.targets[lo..hi], &self.counts[lo..hi])
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    fn transpose(&self, n: usize) -> Self {
        let mut edges: Vec<(u32, u32, u32)> = Vec::with_capacity(self.nnz());
        for r in 0..n as u32 {
            let (cols, ws) = self.row(r);
            edges.extend(cols.iter().zip(ws).map(|(&c, &w)| (c, r, w)));
        }
        edges.sort_unstable();
        Self::from_sorted(n, edges.into_iter())
    }
}

/// Directed multi-graph over items with one weighted edge set per scenario.
#[derive(Clone, Debug)]
pub struct Csmg {
    item_ids: Vec<String>,
    index: HashMap<String, u32>,
    scenarios: Vec<String>,
    hash_buckets: u32,
    features: Vec<FeatureRow>,
    /// `[scenario][node]` number of cleaned watch records
    watch_counts: Vec<Vec<u32>>,
    out_adj: Vec<Csr>,
    in_adj: Vec<Csr>,
    /// `[scenario][node]` sum of `ln(1 + c)` over the node's in-edges
    in_log_mass: Vec<Vec<f64>>,
    metadata: String,
}

impl PartialEq for Csmg {
    fn eq(&self, other: &Self) -> bool {
        self.item_ids == other.item_ids
            && self.scenarios == other.scenarios
            && self.hash_buckets == other.hash_buckets
            && self.features == other.features
            && self.watch_counts == other.watch_counts
            && self.out_adj == other.out_adj
            && self.metadata == other.metadata
    }
}

impl Csmg {
    /// Assembles a graph from per-scenario edge lists `(src, dst, count)`.
    pub fn from_parts(
        item_ids: Vec<String>,
        scenarios: Vec<String>,
        hash_buckets: u32,
        features: Vec<FeatureRow>,
        watch_counts: Vec<Vec<u32>>,
        edge_lists: &[Vec<(u32, u32, u32)>],
        metadata: String,
    ) -> Result<Self> {
        let n = item_ids.len();
        let corrupt = |message: String| Error::Corrupt {
            what: "graph",
            message,
        };
        if n > u32::MAX as usize {
            return Err(corrupt("too many nodes".into()));
        }
        if features.len() != n {
            return Err(corrupt(format!("{} feature rows for {n} nodes", features.len())));
        }
        if edge_lists.len() != scenarios.len() || watch_counts.len() != scenarios.len() {
            return Err(corrupt("per-scenario tables do not match scenario count".into()));
        }
        if watch_counts.iter().any(|w| w.len() != n) {
            return Err(corrupt("watch-count table length mismatch".into()));
        }
        let index: HashMap<String, u32> = item_ids.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        if index.len() != n {
            return Err(corrupt("duplicate item ids".into()));
        }
        for f in &features {
            for b in [f.keyword_bucket, f.tag_bucket, f.id_bucket] {
                if b >= hash_buckets {
                    return Err(Error::BucketOutOfRange {
                        index: b as usize,
                        buckets: hash_buckets as usize,
                    });
                }
            }
        }
        let mut out_adj = Vec::with_capacity(scenarios.len());
        for edges in edge_lists {
            let mut sorted = edges.clone();
            sorted.sort_unstable();
            for w in sorted.windows(2) {
                if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                    return Err(corrupt(format!("duplicate edge {} -> {}", w[0].0, w[0].1)));
                }
            }
            for &(s, d, c) in &sorted {
                if s as usize >= n || d as usize >= n {
                    return Err(corrupt(format!("edge {s} -> {d} out of range")));
                }
                if c == 0 {
                    return Err(corrupt(format!("edge {s} -> {d} has zero count")));
                }
            }
            out_adj.push(Csr::from_sorted(n, sorted.into_iter()));
        }
        let in_adj: Vec<Csr> = out_adj.iter().map(|c| c.transpose(n)).collect();
        let in_log_mass = in_adj
            .iter()
            .map(|csr| {
                (0..n as u32)
                    .map(|v| csr.row(v).1.iter().map(|&c| f64::from(c).ln_1p()).sum())
                    .collect()
            })
            .collect();
        Ok(Self {
            item_ids,
            index,
            scenarios,
            hash_buckets,
            features,
            watch_counts,
            out_adj,
            in_adj,
            in_log_mass,
            metadata,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.item_ids.len()
    }

    pub fn num_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    pub fn scenarios(&self) -> &[String] {
        &self.scenarios
    }

    pub fn scenario_index(&self, name: &str) -> Result<usize> {
        self.scenarios
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::UnknownScenario(name.to_owned()))
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn item_id(&self, v: u32) -> &str {
        &self.item_ids[v as usize]
    }

    pub fn node_index(&self, item_id: &str) -> Option<u32> {
        self.index.get(item_id).copied()
    }

    pub fn hash_buckets(&self) -> usize {
        self.hash_buckets as usize
    }

    pub fn features(&self) -> &[FeatureRow] {
        &self.features
    }

    pub fn watch_count(&self, scenario: usize, v: u32) -> u32 {
        self.watch_counts[scenario][v as usize]
    }

    pub fn metadata(&self) -> &str {
        &self.metadata
    }

    pub fn set_metadata(&mut self, metadata: impl Into<String>) {
        self.metadata = metadata.into();
    }

    /// Read-only view of one scenario's adjacency.
    pub fn scenario_subgraph(&self, scenario: usize) -> ScenarioView<'_> {
        ScenarioView {
            out_adj: &self.out_adj[scenario],
            in_adj: &self.in_adj[scenario],
            in_log_mass: &self.in_log_mass[scenario],
        }
    }

    /// In plus out degree in scenario `s`, in transition-count units.
    pub fn degree(&self, scenario: usize, v: u32) -> u64 {
        let view = self.scenario_subgraph(scenario);
        view.in_degree(v) + view.out_degree(v)
    }

    /// Degree summed over all scenarios.
    pub fn total_degree(&self, v: u32) -> u64 {
        (0..self.num_scenarios()).map(|s| self.degree(s, v)).sum()
    }

    /// Whether `src -> dst` exists in any scenario.
    pub fn has_edge_any(&self, src: u32, dst: u32) -> bool {
        (0..self.num_scenarios()).any(|s| self.scenario_subgraph(s).edge_count_between(src, dst).is_some())
    }

    /// Largest number of distinct in-neighbors of any node in any scenario.
    pub fn max_in_neighbors(&self) -> usize {
        self.in_adj
            .iter()
            .flat_map(|csr| csr.offsets.windows(2).map(|w| w[1] - w[0]))
            .max()
            .unwrap_or(0)
    }

    pub(crate) fn refresh_degree_features(&mut self) {
        for v in 0..self.num_nodes() as u32 {
            self.features[v as usize].log_degree = (self.total_degree(v) as f64).ln_1p();
        }
    }

    fn edge_lists(&self) -> Vec<Vec<(u32, u32, u32)>> {
        (0..self.num_scenarios())
            .map(|s| self.scenario_subgraph(s).out_edges().collect())
            .collect()
    }

    /// Single-scenario graph holding only the nodes watched (or linked) in
    /// `scenario`. Degree features are recomputed from the kept edges.
    pub fn restrict_to_scenario(&self, scenario: usize) -> Csmg {
        let view = self.scenario_subgraph(scenario);
        let keep: Vec<u32> = (0..self.num_nodes() as u32)
            .filter(|&v| self.watch_count(scenario, v) > 0 || view.in_degree(v) > 0 || view.out_degree(v) > 0)
            .collect();
        let mut remap = vec![u32::MAX; self.num_nodes()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old as usize] = new as u32;
        }
        let edges: Vec<(u32, u32, u32)> = view
            .out_edges()
            .map(|(s, d, c)| (remap[s as usize], remap[d as usize], c))
            .collect();
        let mut g = Csmg::from_parts(
            keep.iter().map(|&v| self.item_ids[v as usize].clone()).collect(),
            vec![self.scenarios[scenario].clone()],
            self.hash_buckets,
            keep.iter().map(|&v| self.features[v as usize]).collect(),
            vec![keep.iter().map(|&v| self.watch_count(scenario, v)).collect()],
            &[edges],
            self.metadata.clone(),
        )
        .expect("restriction of a valid graph is valid");
        g.refresh_degree_features();
        g
    }

    /// Merges every scenario into one named `name`, summing counts of
    /// parallel edges.
    pub fn collapse_scenarios(&self, name: &str) -> Csmg {
        let mut merged: std::collections::BTreeMap<(u32, u32), u32> = Default::default();
        for edges in self.edge_lists() {
            for (s, d, c) in edges {
                *merged.entry((s, d)).or_insert(0) += c;
            }
        }
        let watch: Vec<u32> = (0..self.num_nodes())
            .map(|v| self.watch_counts.iter().map(|w| w[v]).sum())
            .collect();
        let mut g = Csmg::from_parts(
            self.item_ids.clone(),
            vec![name.to_owned()],
            self.hash_buckets,
            self.features.clone(),
            vec![watch],
            &[merged.into_iter().map(|((s, d), c)| (s, d, c)).collect()],
            self.metadata.clone(),
        )
        .expect("collapse of a valid graph is valid");
        g.refresh_degree_features();
        g
    }

    /// Per-scenario `(watched nodes, distinct edges, transitions)`.
    pub fn scenario_stats(&self) -> Vec<(String, usize, usize, u64)> {
        (0..self.num_scenarios())
            .map(|s| {
                let view = self.scenario_subgraph(s);
                let nodes = (0..self.num_nodes() as u32)
                    .filter(|&v| self.watch_count(s, v) > 0 || view.in_degree(v) > 0 || view.out_degree(v) > 0)
                    .count();
                (self.scenarios[s].clone(), nodes, view.edge_count(), view.total_weight())
            })
            .collect()
    }
}

/// Adjacency of one scenario, borrowed from the graph.
#[derive(Clone, Copy)]
pub struct ScenarioView<'a> {
    out_adj: &'a Csr,
    in_adj: &'a Csr,
    in_log_mass: &'a [f64],
}

impl<'a> ScenarioView<'a> {
    /// In-neighbors `j` of `v` (edges `j -> v`) with their counts, sorted by `j`.
    pub fn in_neighbors(&self, v: u32) -> (&'a [u32], &'a [u32]) {
        self.in_adj.row(v)
    }

    pub fn out_neighbors(&self, v: u32) -> (&'a [u32], &'a [u32]) {
        self.out_adj.row(v)
    }

    pub fn in_degree(&self, v: u32) -> u64 {
        self.in_adj.row(v).1.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn out_degree(&self, v: u32) -> u64 {
        self.out_adj.row(v).1.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.out_adj.nnz()
    }

    pub fn total_weight(&self) -> u64 {
        self.out_adj.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn edge_count_between(&self, src: u32, dst: u32) -> Option<u32> {
        let (cols, ws) = self.out_adj.row(src);
        cols.binary_search(&dst).ok().map(|k| ws[k])
    }

    /// All edges as `(src, dst, count)` in `(src, dst)` order.
    pub fn out_edges(&self) -> impl Iterator<Item = (u32, u32, u32)> + 'a {
        let csr = self.out_adj;
        (0..csr.offsets.len().saturating_sub(1)).flat_map(move |r| {
            let (cols, ws) = csr.row(r as u32);
            cols.iter().zip(ws).map(move |(&c, &w)| (r as u32, c, w))
        })
    }

    /// Sum of `ln(1 + c)` over the full in-neighborhood of `v`.
    pub fn in_log_mass(&self, v: u32) -> f64 {
        self.in_log_mass[v as usize]
    }

    /// Normalized weight of edge `src -> dst` carrying `count` transitions.
    pub fn edge_weight(&self, count: u32, dst: u32, mode: WeightMode) -> f64 {
        match mode {
            WeightMode::Raw => f64::from(count),
            WeightMode::LogNormalized => f64::from(count).ln_1p() / self.in_log_mass(dst),
        }
    }
}

/// `ln(1 + c) / Σ ln(1 + c_j)` over the full in-neighborhood, or `c` in raw mode.
pub fn normalize_weight(count: u32, in_neighborhood: &[u32], mode: WeightMode) -> f64 {
    match mode {
        WeightMode::Raw => f64::from(count),
        WeightMode::LogNormalized => {
            let mass: f64 = in_neighborhood.iter().map(|&c| f64::from(c).ln_1p()).sum();
            f64::from(count).ln_1p() / mass
        }
    }
}
