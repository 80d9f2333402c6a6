//! Triplet sampling, BPR loss, Adam and the training loop.

mod checkpoint;
mod loss;
mod optim;
mod sampling;

use std::io::Write;
use std::sync::mpsc;

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{deserialize_checkpoint, serialize_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{bpr_loss, bpr_loss_and_grad, sigmoid, softplus, TripletRows};
pub use optim::{adam_step, OptimizerState};
pub use sampling::{
    degree_target_distribution, sample_negatives, sample_positive_pairs, strategy_distribution, NegativeSampler,
    NegativeStrategy, PositiveSampler, MAX_REJECTIONS,
};

use crate::eval::EmbeddingTable;
use crate::graph::{build_block, BlockConfig, Csmg, SampledBlock, WeightMode, DEFAULT_FANOUT};
use crate::model::{backward, forward, forward_cached, init_params, ModelConfig, ModelParams};
use crate::{par, Error, Result};

/// Exact inference is used when no node has more in-neighbors than this.
pub const EXACT_INFERENCE_MAX_NEIGHBORS: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub negatives: usize,
    pub lr: f64,
    pub steps: u64,
    pub negative_strategy: NegativeStrategy,
    pub seed: u64,
    /// Per hop, outermost first.
    pub fanouts: Vec<usize>,
    pub weight_mode: WeightMode,
    pub log_every: u64,
    /// Seeds per inference block when exact inference is not possible.
    pub inference_batch: usize,
    /// Sample the next batch on a helper thread. Results are identical
    /// either way because every step draws from its own random stream.
    pub prefetch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4000,
            negatives: 5,
            lr: 0.002,
            steps: 12_000,
            negative_strategy: NegativeStrategy::CrossScenario,
            seed: 42,
            fanouts: vec![DEFAULT_FANOUT; 2],
            weight_mode: WeightMode::LogNormalized,
            log_every: 100,
            inference_batch: 1024,
            prefetch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_owned()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.fanouts.contains(&0) {
            return bad("fanouts must be >= 1");
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1");
        }
        if self.inference_batch == 0 {
            return bad("inference_batch must be >= 1");
        }
        Ok(())
    }

    fn block_config(&self) -> BlockConfig {
        BlockConfig {
            fanouts: self.fanouts.clone(),
            weight_mode: self.weight_mode,
        }
    }
}

/// Independent random stream for `purpose` at `step`.
pub fn step_rng(seed: u64, step: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + 4 * step + purpose);
    rng
}

/// Heads, positive tails and negatives as node ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripletBatch {
    pub heads: Vec<u32>,
    pub tails: Vec<u32>,
    pub negatives: Vec<Vec<u32>>,
}

impl TripletBatch {
    /// Distinct nodes in first-seen order.
    pub fn nodes(&self) -> Vec<u32> {
        let mut seen = std::collections::HashSet::new();
        self.heads
            .iter()
            .chain(&self.tails)
            .chain(self.negatives.iter().flatten())
            .copied()
            .filter(|v| seen.insert(*v))
            .collect()
    }

    /// Rows of `block`'s seed slots.
    pub fn rows(&self, block: &SampledBlock) -> TripletRows {
        let slots = block.seed_slots();
        let row = |v: &u32| slots[v];
        TripletRows {
            heads: self.heads.iter().map(row).collect(),
            tails: self.tails.iter().map(row).collect(),
            negatives: self.negatives.iter().map(|r| r.iter().map(row).collect()).collect(),
        }
    }
}

/// A batch with its sampled computation block.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub batch: TripletBatch,
    pub block: SampledBlock,
}

/// Samples triplets and the block over all of their nodes.
pub struct BatchSource<'g> {
    g: &'g Csmg,
    positives: PositiveSampler,
    negatives: NegativeSampler,
    block: BlockConfig,
    scenarios: Vec<usize>,
    batch_size: usize,
    k: usize,
    seed: u64,
}

impl<'g> BatchSource<'g> {
    pub fn new(g: &'g Csmg, cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            g,
            positives: PositiveSampler::new(g)?,
            negatives: NegativeSampler::new(g, &cfg.negative_strategy)?,
            block: cfg.block_config(),
            scenarios: (0..g.num_scenarios()).collect(),
            batch_size: cfg.batch_size,
            k: cfg.negatives,
            seed: cfg.seed,
        })
    }

    pub fn prepare(&self, step: u64) -> Result<Prepared> {
        let mut rng = step_rng(self.seed, step, 0);
        let pairs = self.positives.sample(self.batch_size, &mut rng);
        let heads: Vec<u32> = pairs.iter().map(|p| p.0).collect();
        let tails: Vec<u32> = pairs.iter().map(|p| p.1).collect();
        let negatives = self.negatives.sample(self.g, &heads, self.k, &mut rng)?;
        let batch = TripletBatch { heads, tails, negatives };
        let block = build_block(self.g, &batch.nodes(), &self.block, &self.scenarios, &mut rng);
        Ok(Prepared { batch, block })
    }
}

/// Batch loss and gradients of every parameter.
pub fn loss_and_gradients(
    prepared: &Prepared,
    params: &ModelParams,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<(f64, ModelParams)> {
    let cache = forward_cached(&prepared.block, params, dropout_rng)?;
    let rows = prepared.batch.rows(&prepared.block);
    let (loss, d_out) = bpr_loss_and_grad(&cache.out, &rows);
    let grads = backward(&prepared.block, params, &cache, &d_out)?;
    Ok((loss, grads))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPoint {
    pub step: u64,
    /// Mean batch loss over the steps since the previous point.
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub loss_curve: Vec<LossPoint>,
    /// Batch loss of every step.
    pub step_losses: Vec<f64>,
    pub embeddings: EmbeddingTable,
}

pub fn train(g: &Csmg, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with_progress(g, model, cfg, &mut |_| {})
}

/// Same as [`train`], calling `progress` at every logged point.
pub fn train_with_progress(
    g: &Csmg,
    model: &ModelConfig,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&LossPoint),
) -> Result<TrainOutput> {
    cfg.validate()?;
    model.validate()?;
    if model.hash_buckets != g.hash_buckets() {
        return Err(Error::InvalidArgument(format!(
            "model expects {} hash buckets, graph uses {}",
            model.hash_buckets,
            g.hash_buckets()
        )));
    }
    if cfg.fanouts.len() != model.layers {
        return Err(Error::InvalidArgument(format!(
            "{} fanouts given for {} layers",
            cfg.fanouts.len(),
            model.layers
        )));
    }
    let mut params = init_params(model, g.num_scenarios(), cfg.seed)?;
    let mut opt = OptimizerState::new(&params, cfg.lr);
    let mut step_losses = Vec::with_capacity(cfg.steps as usize);
    let mut loss_curve = Vec::new();
    if cfg.steps > 0 {
        let source = BatchSource::new(g, cfg)?;
        let mut step_fn = |step: u64, prepared: Result<Prepared>| -> Result<()> {
            let prepared = prepared?;
            let mut drop_rng = step_rng(cfg.seed, step, 1);
            let (loss, grads) = loss_and_gradients(&prepared, &params, Some(&mut drop_rng))?;
            adam_step(&mut params, &grads, &mut opt)?;
            step_losses.push(loss);
            let done = step + 1;
            if done.is_multiple_of(cfg.log_every) || done == cfg.steps {
                let window = ((done - 1) % cfg.log_every + 1) as usize;
                let tail = &step_losses[step_losses.len() - window..];
                let point = LossPoint {
                    step: done,
                    loss: tail.iter().sum::<f64>() / window as f64,
                };
                progress(&point);
                loss_curve.push(point);
            }
            Ok(())
        };
        if cfg.prefetch {
            std::thread::scope(|scope| -> Result<()> {
                let (tx, rx) = mpsc::sync_channel::<Result<Prepared>>(2);
                let src = &source;
                scope.spawn(move || {
                    for step in 0..cfg.steps {
                        if tx.send(src.prepare(step)).is_err() {
                            break;
                        }
                    }
                });
                for step in 0..cfg.steps {
                    let prepared = rx.recv().expect("producer sends one batch per step");
                    step_fn(step, prepared)?;
                }
                Ok(())
            })?;
        } else {
            for step in 0..cfg.steps {
                step_fn(step, source.prepare(step))?;
            }
        }
    }
    let embeddings = embed_all(g, &params, cfg)?;
    Ok(TrainOutput {
        params,
        optimizer: opt,
        loss_curve,
        step_losses,
        embeddings,
    })
}

/// Inference embeddings for every node.
///
/// When every in-neighborhood fits in [`EXACT_INFERENCE_MAX_NEIGHBORS`] the
/// whole graph goes through one exact block; otherwise nodes are processed
/// in chunks with the configured fanouts.
pub fn embed_all(g: &Csmg, params: &ModelParams, cfg: &TrainConfig) -> Result<EmbeddingTable> {
    let n = g.num_nodes();
    let scenarios: Vec<usize> = (0..g.num_scenarios()).collect();
    let exact = g.max_in_neighbors() <= EXACT_INFERENCE_MAX_NEIGHBORS;
    let all: Vec<u32> = (0..n as u32).collect();
    let matrix = if exact {
        let config = BlockConfig {
            fanouts: vec![usize::MAX; params.config.layers],
            weight_mode: cfg.weight_mode,
        };
        let mut rng = step_rng(cfg.seed, u64::MAX / 8, 2);
        let block = build_block(g, &all, &config, &scenarios, &mut rng);
        forward(&block, params, None)?
    } else {
        let chunks: Vec<(usize, &[u32])> = all.chunks(cfg.inference_batch).enumerate().collect();
        let config = cfg.block_config();
        let parts = par::map_collect(&chunks, |&(i, seeds)| {
            let mut rng = step_rng(cfg.seed, u64::MAX / 8 - i as u64, 3);
            let block = build_block(g, seeds, &config, &scenarios, &mut rng);
            forward(&block, params, None)
        });
        let mut m = Array2::zeros((n, crate::EMBED_DIM));
        let mut row = 0;
        for part in parts {
            let part = part?;
            m.slice_mut(ndarray::s![row..row + part.nrows(), ..]).assign(&part);
            row += part.nrows();
        }
        m
    };
    EmbeddingTable::new(g.item_ids().to_vec(), matrix)
}

/// Writes `step,loss` rows after `#` comment lines holding `header`.
pub fn write_loss_csv<W: Write>(mut w: W, header: &str, curve: &[LossPoint]) -> std::io::Result<()> {
    for line in header.lines() {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "step,loss")?;
    for p in curve {
        writeln!(w, "{},{:.9}", p.step, p.loss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::toy_graph;

    fn small_graph() -> Csmg {
        let a: Vec<(u32, u32, u32)> = (0..11).map(|i| (i, (i + 1) % 12, 1 + i % 3)).collect();
        let b: Vec<(u32, u32, u32)> = (0..10).map(|i| ((i + 2) % 12, (i * 5 + 1) % 12, 2)).filter(|e| e.0 != e.1).collect();
        toy_graph(12, &["A", "B"], &[a, b])
    }

    fn small_cfg(steps: u64) -> (ModelConfig, TrainConfig) {
        (
            ModelConfig {
                hash_buckets: 16,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 4,
                negatives: 2,
                steps,
                log_every: 3,
                fanouts: vec![3, 3],
                seed: 5,
                ..Default::default()
            },
        )
    }

    #[test]
    fn zero_steps_returns_init() {
        let g = small_graph();
        let (m, c) = small_cfg(0);
        let out = train(&g, &m, &c).unwrap();
        assert_eq!(out.params, init_params(&m, 2, 5).unwrap());
        assert!(out.loss_curve.is_empty());
        assert_eq!(out.embeddings.len(), 12);
        assert_eq!(out.embeddings.vectors(), &embed_all(&g, &out.params, &c).unwrap().vectors().clone());
    }

    #[test]
    fn runs_are_reproducible_with_and_without_prefetch() {
        let g = small_graph();
        let (m, c) = small_cfg(7);
        let a = train(&g, &m, &c).unwrap();
        let b = train(&g, &m, &TrainConfig { prefetch: true, ..c.clone() }).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.step_losses, b.step_losses);
        assert_eq!(a.loss_curve.iter().map(|p| p.step).collect::<Vec<_>>(), vec![3, 6, 7]);
        let mean: f64 = a.step_losses[6];
        assert_eq!(a.loss_curve[2].loss, mean);
    }

    #[test]
    fn mismatched_buckets_rejected() {
        let g = small_graph();
        let (mut m, c) = small_cfg(1);
        m.hash_buckets = 17;
        assert!(train(&g, &m, &c).is_err());
    }

    #[test]
    fn loss_csv_layout() {
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, "seed = 1", &[LossPoint { step: 100, loss: 0.5 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# seed = 1\nstep,loss\n100,0.500000000\n");
    }
}
