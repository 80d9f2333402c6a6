//! The multi-graph fusion network.
//!
//! Node features go through a two-layer MLP, then `L` rounds of
//! per-scenario graph convolution followed by cross-scenario fusion, then a
//! final two-layer MLP. Vectors are rows: a linear map is `h · W` with `W`
//! stored as `fan_in × fan_out`.

mod backward;
mod forward;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use backward::backward;
pub use forward::{
    feature_transform, final_mlp, forward, forward_cached, fuse, gat_layer, raw_inputs, sage_layer, ForwardCache,
    GatCache, LayerCache,
};

use crate::{Error, Result, EMBED_DIM};

/// Width of each hashed-feature embedding.
pub const HASH_DIM: usize = 32;
/// Hashed keyword, tag and id embeddings plus log duration and log degree.
pub const RAW_DIM: usize = 3 * HASH_DIM + 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    Sage,
    Gat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Mean,
    Weighted,
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub conv: ConvKind,
    pub fusion: FusionKind,
    pub layers: usize,
    pub dropout: f64,
    pub hash_buckets: usize,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv: ConvKind::Sage,
            fusion: FusionKind::Concat,
            layers: 2,
            dropout: 0.0,
            hash_buckets: crate::graph_builder::DEFAULT_HASH_BUCKETS,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidArgument("layers must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.hash_buckets == 0 {
            return Err(Error::InvalidArgument("hash_buckets must be >= 1".into()));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::InvalidArgument("leaky_slope must be finite".into()));
        }
        Ok(())
    }
}

/// Per-layer, per-scenario convolution weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub w_self: Array2<f64>,
    pub w_nb: Array2<f64>,
    /// Attention vector `[a_src ‖ a_dst]`, GAT only.
    pub attn: Option<Array1<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub num_scenarios: usize,
    pub emb_keyword: Array2<f64>,
    pub emb_tag: Array2<f64>,
    pub emb_id: Array2<f64>,
    pub w_m1: Array2<f64>,
    pub b_m1: Array1<f64>,
    pub w_m2: Array2<f64>,
    pub b_m2: Array1<f64>,
    /// `[layer][scenario]`
    pub conv: Vec<Vec<ConvParams>>,
    /// `layers × scenarios`, weighted fusion only.
    pub fusion_weights: Option<Array2<f64>>,
    /// Concat fusion only: one `(128·S) × 128` map per non-final layer.
    pub concat_proj: Vec<Array2<f64>>,
    pub w_f1: Array2<f64>,
    pub b_f1: Array1<f64>,
    pub w_f2: Array2<f64>,
    pub b_f2: Array1<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound))
}

impl ModelParams {
    /// Width of the tensor fed to the final MLP.
    pub fn fused_dim(&self) -> usize {
        fused_dim(&self.config, self.num_scenarios)
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Every learnable tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        fn s2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn s1(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        out.push(("emb_keyword".into(), s2(&self.emb_keyword)));
        out.push(("emb_tag".into(), s2(&self.emb_tag)));
        out.push(("emb_id".into(), s2(&self.emb_id)));
        out.push(("w_m1".into(), s2(&self.w_m1)));
        out.push(("b_m1".into(), s1(&self.b_m1)));
        out.push(("w_m2".into(), s2(&self.w_m2)));
        out.push(("b_m2".into(), s1(&self.b_m2)));
        for (l, layer) in self.conv.iter().enumerate() {
            for (s, c) in layer.iter().enumerate() {
                out.push((format!("conv{l}.{s}.w_self"), s2(&c.w_self)));
                out.push((format!("conv{l}.{s}.w_nb"), s2(&c.w_nb)));
                if let Some(a) = &c.attn {
                    out.push((format!("conv{l}.{s}.attn"), s1(a)));
                }
            }
        }
        if let Some(w) = &self.fusion_weights {
            out.push(("fusion_weights".into(), s2(w)));
        }
        for (l, p) in self.concat_proj.iter().enumerate() {
            out.push((format!("concat_proj{l}"), s2(p)));
        }
        out.push(("w_f1".into(), s2(&self.w_f1)));
        out.push(("b_f1".into(), s1(&self.b_f1)));
        out.push(("w_f2".into(), s2(&self.w_f2)));
        out.push(("b_f2".into(), s1(&self.b_f2)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        fn s2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn s1(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        out.push(("emb_keyword".into(), s2(&mut self.emb_keyword)));
        out.push(("emb_tag".into(), s2(&mut self.emb_tag)));
        out.push(("emb_id".into(), s2(&mut self.emb_id)));
        out.push(("w_m1".into(), s2(&mut self.w_m1)));
        out.push(("b_m1".into(), s1(&mut self.b_m1)));
        out.push(("w_m2".into(), s2(&mut self.w_m2)));
        out.push(("b_m2".into(), s1(&mut self.b_m2)));
        for (l, layer) in self.conv.iter_mut().enumerate() {
            for (s, c) in layer.iter_mut().enumerate() {
                out.push((format!("conv{l}.{s}.w_self"), s2(&mut c.w_self)));
                out.push((format!("conv{l}.{s}.w_nb"), s2(&mut c.w_nb)));
                if let Some(a) = &mut c.attn {
                    out.push((format!("conv{l}.{s}.attn"), s1(a)));
                }
            }
        }
        if let Some(w) = &mut self.fusion_weights {
            out.push(("fusion_weights".into(), s2(w)));
        }
        for (l, p) in self.concat_proj.iter_mut().enumerate() {
            out.push((format!("concat_proj{l}"), s2(p)));
        }
        out.push(("w_f1".into(), s2(&mut self.w_f1)));
        out.push(("b_f1".into(), s1(&mut self.b_f1)));
        out.push(("w_f2".into(), s2(&mut self.w_f2)));
        out.push(("b_f2".into(), s1(&mut self.b_f2)));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

pub fn fused_dim(config: &ModelConfig, num_scenarios: usize) -> usize {
    match config.fusion {
        FusionKind::Concat => EMBED_DIM * num_scenarios,
        FusionKind::Mean | FusionKind::Weighted => EMBED_DIM,
    }
}

/// Glorot-uniform weights, zero biases, unit fusion weights.
pub fn init_params(config: &ModelConfig, num_scenarios: usize, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    if num_scenarios == 0 {
        return Err(Error::InvalidArgument("need at least one scenario".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = EMBED_DIM;
    let b = config.hash_buckets;
    let emb_keyword = glorot(&mut rng, b, HASH_DIM);
    let emb_tag = glorot(&mut rng, b, HASH_DIM);
    let emb_id = glorot(&mut rng, b, HASH_DIM);
    let w_m1 = glorot(&mut rng, RAW_DIM, d);
    let w_m2 = glorot(&mut rng, d, d);
    let conv = (0..config.layers)
        .map(|_| {
            (0..num_scenarios)
                .map(|_| ConvParams {
                    w_self: glorot(&mut rng, d, d),
                    w_nb: glorot(&mut rng, d, d),
                    attn: (config.conv == ConvKind::Gat)
                        .then(|| glorot(&mut rng, 2 * d, 1).into_shape_with_order(2 * d).unwrap()),
                })
                .collect()
        })
        .collect();
    let fusion_weights =
        (config.fusion == FusionKind::Weighted).then(|| Array2::ones((config.layers, num_scenarios)));
    let concat_proj = if config.fusion == FusionKind::Concat {
        (0..config.layers - 1).map(|_| glorot(&mut rng, d * num_scenarios, d)).collect()
    } else {
        Vec::new()
    };
    let fd = fused_dim(config, num_scenarios);
    let w_f1 = glorot(&mut rng, fd, d);
    let w_f2 = glorot(&mut rng, d, d);
    Ok(ModelParams {
        config: config.clone(),
        num_scenarios,
        emb_keyword,
        emb_tag,
        emb_id,
        w_m1,
        b_m1: Array1::zeros(d),
        w_m2,
        b_m2: Array1::zeros(d),
        conv,
        fusion_weights,
        concat_proj,
        w_f1,
        b_f1: Array1::zeros(d),
        w_f2,
        b_f2: Array1::zeros(d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig {
            hash_buckets: 64,
            ..Default::default()
        };
        assert_eq!(init_params(&cfg, 2, 3).unwrap(), init_params(&cfg, 2, 3).unwrap());
        assert_ne!(init_params(&cfg, 2, 3).unwrap(), init_params(&cfg, 2, 4).unwrap());
    }

    #[test]
    fn biases_zero_and_glorot_bounds_hold() {
        let cfg = ModelConfig {
            hash_buckets: 64,
            ..Default::default()
        };
        let p = init_params(&cfg, 2, 1).unwrap();
        assert!(p.b_m1.iter().all(|&x| x == 0.0));
        let bound = (6.0f64 / 256.0).sqrt();
        assert!(p.w_m2.iter().all(|x| x.abs() <= bound));
        assert!(p.w_m2.iter().any(|x| x.abs() > bound * 0.9));
    }

    #[test]
    fn shapes_follow_fusion_kind() {
        for (fusion, fd, proj) in [
            (FusionKind::Mean, 128, 0),
            (FusionKind::Weighted, 128, 0),
            (FusionKind::Concat, 256, 1),
        ] {
            let cfg = ModelConfig {
                fusion,
                hash_buckets: 8,
                ..Default::default()
            };
            let p = init_params(&cfg, 2, 0).unwrap();
            assert_eq!(p.w_f1.dim(), (fd, 128));
            assert_eq!(p.concat_proj.len(), proj);
            assert_eq!(p.fusion_weights.is_some(), fusion == FusionKind::Weighted);
        }
        let gat = ModelConfig {
            conv: ConvKind::Gat,
            hash_buckets: 8,
            ..Default::default()
        };
        let p = init_params(&gat, 2, 0).unwrap();
        assert!(p.conv.iter().flatten().all(|c| c.attn.as_ref().map(|a| a.len()) == Some(256)));
    }

    #[test]
    fn tensor_listing_is_consistent() {
        let cfg = ModelConfig {
            conv: ConvKind::Gat,
            fusion: FusionKind::Weighted,
            hash_buckets: 8,
            ..Default::default()
        };
        let mut p = init_params(&cfg, 2, 0).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = p.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        assert!(names.contains(&"conv1.1.attn".to_string()));
        assert!(p.zeros_like().tensors().iter().all(|(_, t)| t.iter().all(|&x| x == 0.0)));
    }
}
