//! Weighted in-neighbor sampling and layered minibatch blocks.

use std::collections::HashMap;

use rand::Rng;

use super::{Csmg, FeatureRow};

pub const DEFAULT_FANOUT: usize = 10;

/// How transition counts become message weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `ln(1 + c)` normalized over the full in-neighborhood.
    #[default]
    LogNormalized,
    /// The raw count.
    Raw,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    /// Fanout per convolution layer, outermost hop first.
    pub fanouts: Vec<usize>,
    pub weight_mode: WeightMode,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            fanouts: vec![DEFAULT_FANOUT; 2],
            weight_mode: WeightMode::LogNormalized,
        }
    }
}

/// Samples at most `fanout` in-neighbors of `node` in `scenario` without
/// replacement, with probability proportional to `ln(1 + count)`.
///
/// Returned weights are normalized over the full neighborhood. Neighbors are
/// returned in ascending node order.
pub fn sample_in_neighbors<R: Rng + ?Sized>(
    g: &Csmg,
    scenario: usize,
    node: u32,
    fanout: usize,
    mode: WeightMode,
    rng: &mut R,
) -> Vec<(u32, f64)> {
    assert!(fanout >= 1, "fanout must be >= 1");
    let view = g.scenario_subgraph(scenario);
    let (srcs, counts) = view.in_neighbors(node);
    let weight = |k: usize| view.edge_weight(counts[k], node, mode);
    if srcs.len() <= fanout {
        return (0..srcs.len()).map(|k| (srcs[k], weight(k))).collect();
    }
    // Efraimidis-Spirakis: keep the `fanout` largest ln(u) / w.
    let mut keyed: Vec<(f64, usize)> = (0..srcs.len())
        .map(|k| {
            let u: f64 = rng.random();
            (u.ln() / f64::from(counts[k]).ln_1p(), k)
        })
        .collect();
    keyed.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = keyed[..fanout].iter().map(|&(_, k)| k).collect();
    picked.sort_unstable();
    picked.into_iter().map(|k| (srcs[k], weight(k))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockEdge {
    /// Slot among the layer's input nodes.
    pub src: u32,
    /// Slot among the layer's output nodes.
    pub dst: u32,
    pub weight: f64,
}

/// One convolution layer of a block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLayer {
    pub num_src: usize,
    pub num_dst: usize,
    /// Per scenario, edges grouped by destination slot.
    pub edges: Vec<Vec<BlockEdge>>,
    /// Per scenario, `offsets[d]..offsets[d + 1]` indexes the edges into `d`.
    pub offsets: Vec<Vec<usize>>,
}

impl BlockLayer {
    pub fn in_edges(&self, scenario: usize, dst: usize) -> &[BlockEdge] {
        let o = &self.offsets[scenario];
        &self.edges[scenario][o[dst]..o[dst + 1]]
    }
}

/// The sampled computation frontier for one forward pass.
///
/// Node slots are nested: the output nodes of every layer are a prefix of its
/// input nodes, and the seeds are a prefix of all of them.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledBlock {
    /// Global node ids of the layer-0 input, seeds first.
    pub nodes: Vec<u32>,
    /// `sizes[l]` is the input width of conv layer `l`; the last entry is the
    /// seed count.
    pub sizes: Vec<usize>,
    pub layers: Vec<BlockLayer>,
    /// Raw features of `nodes`.
    pub features: Vec<FeatureRow>,
    /// Graph scenario index of each block scenario.
    pub scenarios: Vec<usize>,
}

impl SampledBlock {
    pub fn seeds(&self) -> &[u32] {
        &self.nodes[..self.num_seeds()]
    }

    pub fn num_seeds(&self) -> usize {
        *self.sizes.last().expect("block has at least the seed level")
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Slot of each seed keyed by global id.
    pub fn seed_slots(&self) -> HashMap<u32, usize> {
        self.seeds().iter().enumerate().map(|(i, &v)| (v, i)).collect()
    }
}

/// Expands `seeds` inward one hop per layer, sampling in-neighbors in every
/// listed scenario. Duplicate seeds collapse to one slot.
pub fn build_block<R: Rng + ?Sized>(
    g: &Csmg,
    seeds: &[u32],
    config: &BlockConfig,
    scenarios: &[usize],
    rng: &mut R,
) -> SampledBlock {
    let mut nodes: Vec<u32> = Vec::with_capacity(seeds.len());
    let mut slot: HashMap<u32, u32> = HashMap::with_capacity(seeds.len());
    for &v in seeds {
        slot.entry(v).or_insert_with(|| {
            nodes.push(v);
            (nodes.len() - 1) as u32
        });
    }
    let num_layers = config.fanouts.len();
    let mut sizes = vec![nodes.len()];
    let mut layers_rev = Vec::with_capacity(num_layers);
    for l in (0..num_layers).rev() {
        let num_dst = nodes.len();
        let mut edges = Vec::with_capacity(scenarios.len());
        let mut offsets = Vec::with_capacity(scenarios.len());
        let mut per_scenario: Vec<Vec<BlockEdge>> = vec![Vec::new(); scenarios.len()];
        let mut per_offsets: Vec<Vec<usize>> = vec![vec![0]; scenarios.len()];
        for d in 0..num_dst {
            let dst = nodes[d];
            for (k, &s) in scenarios.iter().enumerate() {
                for (src, w) in sample_in_neighbors(g, s, dst, config.fanouts[l], config.weight_mode, rng) {
                    let src_slot = *slot.entry(src).or_insert_with(|| {
                        nodes.push(src);
                        (nodes.len() - 1) as u32
                    });
                    per_scenario[k].push(BlockEdge {
                        src: src_slot,
                        dst: d as u32,
                        weight: w,
                    });
                }
                per_offsets[k].push(per_scenario[k].len());
            }
        }
        edges.append(&mut per_scenario);
        offsets.append(&mut per_offsets);
        layers_rev.push(BlockLayer {
            num_src: nodes.len(),
            num_dst,
            edges,
            offsets,
        });
        sizes.push(nodes.len());
    }
    sizes.reverse();
    layers_rev.reverse();
    let features = nodes.iter().map(|&v| g.features()[v as usize]).collect();
    SampledBlock {
        nodes,
        sizes,
        layers: layers_rev,
        features,
        scenarios: scenarios.to_vec(),
    }
}
