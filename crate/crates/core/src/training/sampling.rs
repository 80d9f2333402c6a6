use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::Csmg;
use crate::{Error, Result};

/// Rejection attempts per negative slot before giving up.
pub const MAX_REJECTIONS: usize = 100;

/// Where negative tails are drawn from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NegativeStrategy {
    /// `(Σ_s deg_s)^{3/4}` over every scenario.
    CrossScenario,
    /// `deg_s^{3/4}` within one named scenario.
    DegreeSingleScenario(String),
    /// Uniform over all nodes.
    Random,
}

impl fmt::Display for NegativeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::CrossScenario => f.write_str("cross_scenario"),
            Self::DegreeSingleScenario(s) => write!(f, "degree:{s}"),
            Self::Random => f.write_str("random"),
        }
    }
}

impl FromStr for NegativeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_scenario" | "cross-scenario" => Ok(Self::CrossScenario),
            "random" => Ok(Self::Random),
            _ => match s.strip_prefix("degree:") {
                Some(name) if !name.is_empty() => Ok(Self::DegreeSingleScenario(name.to_owned())),
                _ => Err(Error::InvalidArgument(format!(
                    "unknown negative strategy `{s}` (expected cross_scenario, random or degree:<scenario>)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for NegativeStrategy {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<NegativeStrategy> for String {
    fn from(s: NegativeStrategy) -> String {
        s.to_string()
    }
}

fn normalize_powers(degrees: impl Iterator<Item = u64>) -> Result<Vec<f64>> {
    let mut p: Vec<f64> = degrees.map(|d| (d as f64).powf(0.75)).collect();
    let z: f64 = p.iter().sum();
    if z == 0.0 {
        return Err(Error::ZeroDegrees);
    }
    p.iter_mut().for_each(|x| *x /= z);
    Ok(p)
}

/// `P(v) ∝ (Σ_s in_s(v) + out_s(v))^{3/4}` in transition-count units.
pub fn degree_target_distribution(g: &Csmg) -> Result<Vec<f64>> {
    normalize_powers((0..g.num_nodes() as u32).map(|v| g.total_degree(v)))
}

/// Node distribution a strategy draws from, before rejection.
pub fn strategy_distribution(g: &Csmg, strategy: &NegativeStrategy) -> Result<Vec<f64>> {
    match strategy {
        NegativeStrategy::CrossScenario => degree_target_distribution(g),
        NegativeStrategy::DegreeSingleScenario(name) => {
            let s = g.scenario_index(name)?;
            normalize_powers((0..g.num_nodes() as u32).map(|v| g.degree(s, v)))
        }
        NegativeStrategy::Random => {
            if g.num_nodes() == 0 {
                return Err(Error::ZeroDegrees);
            }
            Ok(vec![1.0 / g.num_nodes() as f64; g.num_nodes()])
        }
    }
}

/// Precomputed negative sampler.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    dist: WeightedIndex<f64>,
}

impl NegativeSampler {
    pub fn new(g: &Csmg, strategy: &NegativeStrategy) -> Result<Self> {
        let p = strategy_distribution(g, strategy)?;
        let dist = WeightedIndex::new(&p).map_err(|_| Error::ZeroDegrees)?;
        Ok(Self { dist })
    }

    /// One valid negative for `head`: never the head itself and never a
    /// node `head` links to in any scenario.
    pub fn sample_one<R: Rng + ?Sized>(&self, g: &Csmg, head: u32, rng: &mut R) -> Result<u32> {
        for _ in 0..MAX_REJECTIONS {
            let v = self.dist.sample(rng) as u32;
            if v != head && !g.has_edge_any(head, v) {
                return Ok(v);
            }
        }
        Err(Error::NegativeSamplingExhausted {
            head,
            attempts: MAX_REJECTIONS,
        })
    }

    /// `k` negatives per head, row per head.
    pub fn sample<R: Rng + ?Sized>(&self, g: &Csmg, heads: &[u32], k: usize, rng: &mut R) -> Result<Vec<Vec<u32>>> {
        heads
            .iter()
            .map(|&h| (0..k).map(|_| self.sample_one(g, h, rng)).collect())
            .collect()
    }
}

pub fn sample_negatives<R: Rng + ?Sized>(
    g: &Csmg,
    heads: &[u32],
    k: usize,
    strategy: &NegativeStrategy,
    rng: &mut R,
) -> Result<Vec<Vec<u32>>> {
    NegativeSampler::new(g, strategy)?.sample(g, heads, k, rng)
}

/// Draws edges with probability proportional to their transition count,
/// pooled over scenarios.
#[derive(Clone, Debug)]
pub struct PositiveSampler {
    edges: Vec<(u32, u32)>,
    dist: WeightedIndex<u32>,
}

impl PositiveSampler {
    pub fn new(g: &Csmg) -> Result<Self> {
        let mut edges = Vec::new();
        let mut counts = Vec::new();
        for s in 0..g.num_scenarios() {
            for (src, dst, c) in g.scenario_subgraph(s).out_edges() {
                edges.push((src, dst));
                counts.push(c);
            }
        }
        if edges.is_empty() {
            return Err(Error::InvalidArgument("graph has no edges to sample positives from".into()));
        }
        let dist = WeightedIndex::new(&counts).expect("counts are positive");
        Ok(Self { edges, dist })
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(u32, u32)> {
        (0..n).map(|_| self.edges[self.dist.sample(rng)]).collect()
    }
}

pub fn sample_positive_pairs<R: Rng + ?Sized>(g: &Csmg, n: usize, rng: &mut R) -> Result<Vec<(u32, u32)>> {
    Ok(PositiveSampler::new(g)?.sample(n, rng))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::tests::toy_graph;

    #[test]
    fn exact_power_cases() {
        let p = normalize_powers([1u64, 16].into_iter()).unwrap();
        assert!((p[0] - 1.0 / 9.0).abs() < 1e-15 && (p[1] - 8.0 / 9.0).abs() < 1e-15);
        let p = normalize_powers([81u64, 16].into_iter()).unwrap();
        assert!((p[0] - 27.0 / 35.0).abs() < 1e-15 && (p[1] - 8.0 / 35.0).abs() < 1e-15);
        assert!(matches!(normalize_powers([0u64, 0].into_iter()), Err(Error::ZeroDegrees)));
    }

    #[test]
    fn summed_degrees_across_scenarios() {
        // degrees: 0 -> 1, 1 -> 1 + 15 = 16, 2 -> 15
        let g = toy_graph(3, &["A", "B"], &[vec![(0, 1, 1)], vec![(1, 2, 15)]]);
        let p = degree_target_distribution(&g).unwrap();
        let z = 1.0 + 8.0 + 15f64.powf(0.75);
        assert!((p[0] - 1.0 / z).abs() < 1e-12);
        assert!((p[1] - 8.0 / z).abs() < 1e-12);
    }

    #[test]
    fn uniform_degrees_give_uniform_p() {
        let g = toy_graph(4, &["A"], &[vec![(0, 1, 2), (2, 3, 2)]]);
        let p = degree_target_distribution(&g).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn zero_degrees_are_an_error() {
        let g = toy_graph(3, &["A"], &[vec![]]);
        assert!(matches!(degree_target_distribution(&g), Err(Error::ZeroDegrees)));
        let g = toy_graph(3, &["A", "B"], &[vec![(0, 1, 1)], vec![]]);
        assert!(matches!(
            strategy_distribution(&g, &NegativeStrategy::DegreeSingleScenario("B".into())),
            Err(Error::ZeroDegrees)
        ));
        assert!(matches!(
            strategy_distribution(&g, &NegativeStrategy::DegreeSingleScenario("C".into())),
            Err(Error::UnknownScenario(_))
        ));
    }

    #[test]
    fn fully_connected_head_exhausts() {
        let g = toy_graph(3, &["A"], &[vec![(0, 1, 1), (0, 2, 1), (1, 2, 1)]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_negatives(&g, &[0], 5, &NegativeStrategy::CrossScenario, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NegativeSamplingExhausted { head: 0, attempts: 100 }));
    }

    #[test]
    fn negatives_are_never_edges() {
        let g = toy_graph(
            6,
            &["A", "B"],
            &[vec![(0, 1, 3), (0, 2, 1), (3, 4, 2)], vec![(0, 3, 1), (5, 0, 2), (4, 5, 1)]],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for strategy in [NegativeStrategy::CrossScenario, NegativeStrategy::Random] {
            let negs = sample_negatives(&g, &[0, 3, 5], 50, &strategy, &mut rng).unwrap();
            for (h, row) in [0u32, 3, 5].iter().zip(&negs) {
                assert!(row.iter().all(|&v| v != *h && !g.has_edge_any(*h, v)));
            }
        }
    }

    #[test]
    fn positive_frequencies_follow_counts() {
        let g = toy_graph(3, &["A"], &[vec![(0, 1, 1), (1, 2, 3)]]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs = sample_positive_pairs(&g, 100_000, &mut rng).unwrap();
        let a = pairs.iter().filter(|p| **p == (0, 1)).count() as f64;
        let b = pairs.iter().filter(|p| **p == (1, 2)).count() as f64;
        assert!(((b / a) / 3.0 - 1.0).abs() < 0.05, "{a} {b}");
        assert!(pairs.iter().all(|&(s, d)| g.has_edge_any(s, d)));

        let single = toy_graph(2, &["A"], &[vec![(1, 0, 7)]]);
        assert!(sample_positive_pairs(&single, 20, &mut rng).unwrap().iter().all(|&p| p == (1, 0)));
    }

    #[test]
    fn strategy_strings_round_trip() {
        for s in ["cross_scenario", "random", "degree:feed"] {
            assert_eq!(s.parse::<NegativeStrategy>().unwrap().to_string(), s);
        }
        assert!("degree:".parse::<NegativeStrategy>().is_err());
        assert!("popular".parse::<NegativeStrategy>().is_err());
    }
}
