use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};

use super::{ConvKind, ConvParams, FusionKind, ModelParams, HASH_DIM, RAW_DIM};
use crate::graph::{BlockLayer, FeatureRow, SampledBlock};
use crate::{par, Error, Result, EMBED_DIM};

pub(super) fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub(super) fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

fn add_bias(mut m: Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    m += b;
    m
}

fn relu(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|x| x.max(0.0))
}

/// Concatenated hashed embeddings and scalar features, one row per node.
pub fn raw_inputs(rows: &[FeatureRow], params: &ModelParams) -> Result<Array2<f64>> {
    let buckets = params.emb_id.nrows();
    let mut x = Array2::zeros((rows.len(), RAW_DIM));
    for (i, r) in rows.iter().enumerate() {
        for (k, (table, b)) in [
            (&params.emb_keyword, r.keyword_bucket),
            (&params.emb_tag, r.tag_bucket),
            (&params.emb_id, r.id_bucket),
        ]
        .into_iter()
        .enumerate()
        {
            let b = b as usize;
            if b >= buckets {
                return Err(Error::BucketOutOfRange { index: b, buckets });
            }
            x.slice_mut(s![i, k * HASH_DIM..(k + 1) * HASH_DIM]).assign(&table.row(b));
        }
        x[[i, 3 * HASH_DIM]] = r.log_duration;
        x[[i, 3 * HASH_DIM + 1]] = r.log_degree;
    }
    Ok(x)
}

/// Input MLP: `relu(x · W_m1 + b_m1) · W_m2 + b_m2`.
pub fn feature_transform(rows: &[FeatureRow], params: &ModelParams) -> Result<Array2<f64>> {
    let x = raw_inputs(rows, params)?;
    let z = add_bias(par::matmul(&x.view(), &params.w_m1.view()), &params.b_m1);
    Ok(add_bias(par::matmul(&relu(&z).view(), &params.w_m2.view()), &params.b_m2))
}

/// Mean of weighted sampled neighbor rows per destination; zero when a node
/// has no sampled in-neighbor.
fn sage_aggregate(layer: &BlockLayer, scenario: usize, h_in: &ArrayView2<f64>) -> Array2<f64> {
    let mut agg = Array2::zeros((layer.num_dst, h_in.ncols()));
    for d in 0..layer.num_dst {
        let edges = layer.in_edges(scenario, d);
        if edges.is_empty() {
            continue;
        }
        let inv = 1.0 / edges.len() as f64;
        let mut row = agg.row_mut(d);
        for e in edges {
            row.scaled_add(e.weight * inv, &h_in.row(e.src as usize));
        }
    }
    agg
}

/// SAGE-mean convolution: `h_i · W_self + mean_j(ŵ_ji · h_j) · W_nb`.
pub fn sage_layer(layer: &BlockLayer, scenario: usize, h_in: &ArrayView2<f64>, conv: &ConvParams) -> Array2<f64> {
    sage_forward(layer, scenario, h_in, conv).0
}

pub(super) fn sage_forward(
    layer: &BlockLayer,
    scenario: usize,
    h_in: &ArrayView2<f64>,
    conv: &ConvParams,
) -> (Array2<f64>, Array2<f64>) {
    let agg = sage_aggregate(layer, scenario, h_in);
    let h_dst = h_in.slice(s![..layer.num_dst, ..]);
    let out = par::matmul(&h_dst, &conv.w_self.view()) + par::matmul(&agg.view(), &conv.w_nb.view());
    (out, agg)
}

/// Intermediates of one GAT convolution.
#[derive(Clone, Debug)]
pub struct GatCache {
    /// `h_in · W_nb` for every input node.
    pub z: Array2<f64>,
    /// Pre-activation attention score per block edge.
    pub score: Vec<f64>,
    /// Softmax weight per block edge.
    pub alpha: Vec<f64>,
    /// `Σ α ŵ z_j` per destination, before LeakyReLU.
    pub g: Array2<f64>,
}

/// GAT convolution with skip connection:
/// `h_i · W_self + LeakyReLU(Σ_j α_ji · ŵ_ji · h_j · W_nb)` where
/// `α = softmax_j(LeakyReLU(a · [ŵ z_j ‖ ŵ z_i]))`.
pub fn gat_layer(
    layer: &BlockLayer,
    scenario: usize,
    h_in: &ArrayView2<f64>,
    conv: &ConvParams,
    slope: f64,
) -> Array2<f64> {
    gat_forward(layer, scenario, h_in, conv, slope).0
}

pub(super) fn gat_forward(
    layer: &BlockLayer,
    scenario: usize,
    h_in: &ArrayView2<f64>,
    conv: &ConvParams,
    slope: f64,
) -> (Array2<f64>, GatCache) {
    let attn = conv.attn.as_ref().expect("GAT layer needs an attention vector");
    let d = EMBED_DIM;
    let z = par::matmul(h_in, &conv.w_nb.view());
    let p: Array1<f64> = z.dot(&attn.slice(s![..d]));
    let q: Array1<f64> = z.dot(&attn.slice(s![d..]));
    let n_edges = layer.edges[scenario].len();
    let mut score = vec![0.0; n_edges];
    let mut alpha = vec![0.0; n_edges];
    let mut g = Array2::zeros((layer.num_dst, d));
    let offsets = &layer.offsets[scenario];
    for dst in 0..layer.num_dst {
        let (lo, hi) = (offsets[dst], offsets[dst + 1]);
        if lo == hi {
            continue;
        }
        let edges = &layer.edges[scenario][lo..hi];
        let mut max = f64::NEG_INFINITY;
        for (k, e) in edges.iter().enumerate() {
            score[lo + k] = e.weight * (p[e.src as usize] + q[dst]);
            max = max.max(leaky(score[lo + k], slope));
        }
        let mut denom = 0.0;
        for k in 0..edges.len() {
            let v = (leaky(score[lo + k], slope) - max).exp();
            alpha[lo + k] = v;
            denom += v;
        }
        let mut row = g.row_mut(dst);
        for (k, e) in edges.iter().enumerate() {
            alpha[lo + k] /= denom;
            row.scaled_add(alpha[lo + k] * e.weight, &z.row(e.src as usize));
        }
    }
    let h_dst = h_in.slice(s![..layer.num_dst, ..]);
    let mut out = par::matmul(&h_dst, &conv.w_self.view());
    for dst in 0..layer.num_dst {
        if offsets[dst] == offsets[dst + 1] {
            continue;
        }
        let mut row = out.row_mut(dst);
        row.zip_mut_with(&g.row(dst), |o, &x| *o += leaky(x, slope));
    }
    (out, GatCache { z, score, alpha, g })
}

/// Fuses per-scenario latents of layer `l`. Concat output of a non-final
/// layer is projected back to 128 dims.
pub fn fuse(latents: &[Array2<f64>], params: &ModelParams, l: usize) -> Result<Array2<f64>> {
    fuse_forward(latents, params, l).map(|(f, _)| f)
}

pub(super) fn fuse_forward(
    latents: &[Array2<f64>],
    params: &ModelParams,
    l: usize,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    let first = latents
        .first()
        .ok_or_else(|| Error::InvalidArgument("no scenario latents to fuse".into()))?;
    if latents.iter().any(|h| h.dim() != first.dim()) {
        return Err(Error::InvalidArgument("scenario latents cover different node slots".into()));
    }
    let inv = 1.0 / latents.len() as f64;
    match params.config.fusion {
        FusionKind::Mean => {
            let mut acc = Array2::zeros(first.dim());
            for h in latents {
                acc += h;
            }
            Ok((acc * inv, None))
        }
        FusionKind::Weighted => {
            let w = params
                .fusion_weights
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("weighted fusion without weights".into()))?;
            let mut acc = Array2::zeros(first.dim());
            for (s, h) in latents.iter().enumerate() {
                acc.scaled_add(w[[l, s]] * inv, h);
            }
            Ok((acc, None))
        }
        FusionKind::Concat => {
            let views: Vec<ArrayView2<f64>> = latents.iter().map(|h| h.view()).collect();
            let cat = concatenate(Axis(1), &views).expect("equal row counts");
            if l + 1 < params.config.layers {
                let proj = par::matmul(&cat.view(), &params.concat_proj[l].view());
                Ok((proj, Some(cat)))
            } else {
                Ok((cat, None))
            }
        }
    }
}

/// Output MLP: `relu(h · W_f1 + b_f1) · W_f2 + b_f2`.
pub fn final_mlp(h: &ArrayView2<f64>, params: &ModelParams) -> Array2<f64> {
    let y = add_bias(par::matmul(h, &params.w_f1.view()), &params.b_f1);
    add_bias(par::matmul(&relu(&y).view(), &params.w_f2.view()), &params.b_f2)
}

#[derive(Clone, Debug)]
pub struct LayerCache {
    /// Per-scenario convolution outputs.
    pub conv_out: Vec<Array2<f64>>,
    /// SAGE: per-scenario neighbor means.
    pub sage_agg: Vec<Array2<f64>>,
    pub gat: Vec<GatCache>,
    /// Concat of a non-final layer before projection.
    pub concat: Option<Array2<f64>>,
    /// Dropout scale factors, when dropout was applied.
    pub mask: Option<Array2<f64>>,
}

/// Everything the reverse pass needs.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub x0: Array2<f64>,
    pub z_m1: Array2<f64>,
    /// `h[0]` is the transformed input; `h[l + 1]` the (dropped-out) fused
    /// output of conv layer `l`.
    pub h: Vec<Array2<f64>>,
    pub layers: Vec<LayerCache>,
    pub y_f1: Array2<f64>,
    /// Final embeddings of the seed slots.
    pub out: Array2<f64>,
}

fn check_block(block: &SampledBlock, params: &ModelParams) -> Result<()> {
    if block.num_layers() != params.config.layers {
        return Err(Error::InvalidArgument(format!(
            "block has {} layers, model expects {}",
            block.num_layers(),
            params.config.layers
        )));
    }
    if block.scenarios.len() != params.num_scenarios {
        return Err(Error::InvalidArgument(format!(
            "block has {} scenarios, model expects {}",
            block.scenarios.len(),
            params.num_scenarios
        )));
    }
    Ok(())
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut dyn RngCore) -> Array2<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mut m = Array2::zeros(shape);
    for x in m.iter_mut() {
        if rng.random::<f64>() < keep {
            *x = scale;
        }
    }
    m
}

/// Embeddings of the block's seed slots. `dropout_rng = None` is inference.
pub fn forward(block: &SampledBlock, params: &ModelParams, dropout_rng: Option<&mut dyn RngCore>) -> Result<Array2<f64>> {
    forward_cached(block, params, dropout_rng).map(|c| c.out)
}

pub fn forward_cached(
    block: &SampledBlock,
    params: &ModelParams,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<ForwardCache> {
    check_block(block, params)?;
    let cfg = &params.config;
    let x0 = raw_inputs(&block.features, params)?;
    let z_m1 = add_bias(par::matmul(&x0.view(), &params.w_m1.view()), &params.b_m1);
    let h0 = add_bias(par::matmul(&relu(&z_m1).view(), &params.w_m2.view()), &params.b_m2);
    let mut h = vec![h0];
    let mut layers = Vec::with_capacity(cfg.layers);
    for (l, layer) in block.layers.iter().enumerate() {
        let h_in = h[l].view();
        let mut conv_out = Vec::with_capacity(params.num_scenarios);
        let mut sage_agg = Vec::new();
        let mut gat = Vec::new();
        for (s, conv) in params.conv[l].iter().enumerate() {
            match cfg.conv {
                ConvKind::Sage => {
                    let (out, agg) = sage_forward(layer, s, &h_in, conv);
                    conv_out.push(out);
                    sage_agg.push(agg);
                }
                ConvKind::Gat => {
                    let (out, cache) = gat_forward(layer, s, &h_in, conv, cfg.leaky_slope);
                    conv_out.push(out);
                    gat.push(cache);
                }
            }
        }
        let (fused, concat) = fuse_forward(&conv_out, params, l)?;
        let mask = match dropout_rng.as_deref_mut() {
            Some(rng) if cfg.dropout > 0.0 => Some(dropout_mask(fused.dim(), cfg.dropout, rng)),
            _ => None,
        };
        let next = match &mask {
            Some(m) => fused * m,
            None => fused,
        };
        h.push(next);
        layers.push(LayerCache {
            conv_out,
            sage_agg,
            gat,
            concat,
            mask,
        });
    }
    let last = h.last().expect("at least one level").view();
    let y_f1 = add_bias(par::matmul(&last, &params.w_f1.view()), &params.b_f1);
    let out = add_bias(par::matmul(&relu(&y_f1).view(), &params.w_f2.view()), &params.b_f2);
    Ok(ForwardCache {
        x0,
        z_m1,
        h,
        layers,
        y_f1,
        out,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::tests::toy_graph;
    use crate::graph::{build_block, BlockConfig, BlockEdge};
    use crate::model::{init_params, ModelConfig};

    fn cfg(conv: ConvKind, fusion: FusionKind) -> ModelConfig {
        ModelConfig {
            conv,
            fusion,
            hash_buckets: 16,
            ..Default::default()
        }
    }

    fn zero_params(c: &ModelConfig, scen: usize) -> ModelParams {
        init_params(c, scen, 0).unwrap().zeros_like()
    }

    fn row() -> FeatureRow {
        FeatureRow {
            keyword_bucket: 1,
            tag_bucket: 2,
            id_bucket: 3,
            log_duration: 4.0,
            log_degree: 1.5,
        }
    }

    #[test]
    fn zero_params_give_zero_embedding() {
        let p = zero_params(&cfg(ConvKind::Sage, FusionKind::Mean), 1);
        let h = feature_transform(&[row()], &p).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bias_passes_through() {
        let mut p = zero_params(&cfg(ConvKind::Sage, FusionKind::Mean), 1);
        p.w_m2 = Array2::eye(EMBED_DIM);
        p.b_m2 = Array1::from_shape_fn(EMBED_DIM, |i| i as f64 * 0.5);
        let h = feature_transform(&[row()], &p).unwrap();
        assert_eq!(h.row(0), p.b_m2);
    }

    #[test]
    fn bucket_out_of_range_is_error() {
        let p = zero_params(&cfg(ConvKind::Sage, FusionKind::Mean), 1);
        let mut r = row();
        r.id_bucket = 99;
        assert!(matches!(feature_transform(&[r], &p), Err(Error::BucketOutOfRange { index: 99, .. })));
    }

    /// Independent naive evaluation of the input MLP.
    #[test]
    fn feature_transform_matches_naive_oracle() {
        let p = init_params(&cfg(ConvKind::Sage, FusionKind::Mean), 1, 9).unwrap();
        let mut p = p;
        p.b_m1.iter_mut().enumerate().for_each(|(i, b)| *b = (i as f64 * 0.37).sin() * 0.1);
        p.b_m2.iter_mut().enumerate().for_each(|(i, b)| *b = (i as f64 * 0.11).cos() * 0.1);
        let r = row();
        let mut raw = Vec::new();
        raw.extend(p.emb_keyword.row(1).iter());
        raw.extend(p.emb_tag.row(2).iter());
        raw.extend(p.emb_id.row(3).iter());
        raw.push(4.0);
        raw.push(1.5);
        let mut hidden = vec![0.0; EMBED_DIM];
        for j in 0..EMBED_DIM {
            let mut acc = p.b_m1[j];
            for (k, x) in raw.iter().enumerate() {
                acc += p.w_m1[[k, j]] * x;
            }
            hidden[j] = if acc > 0.0 { acc } else { 0.0 };
        }
        let h = feature_transform(&[r], &p).unwrap();
        for j in 0..EMBED_DIM {
            let mut acc = p.b_m2[j];
            for k in 0..EMBED_DIM {
                acc += p.w_m2[[k, j]] * hidden[k];
            }
            assert!((acc - h[[0, j]]).abs() < 1e-12);
        }
    }

    fn single_layer(edges: Vec<BlockEdge>, num_src: usize, num_dst: usize) -> BlockLayer {
        let mut sorted = edges;
        sorted.sort_by_key(|e| e.dst);
        let mut offsets = vec![0];
        for d in 0..num_dst {
            offsets.push(sorted.iter().filter(|e| (e.dst as usize) <= d).count());
        }
        BlockLayer {
            num_src,
            num_dst,
            edges: vec![sorted],
            offsets: vec![offsets],
        }
    }

    fn random_h(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, EMBED_DIM), |_| rng.random_range(-1.0..1.0))
    }

    fn random_conv(seed: u64, gat: bool) -> ConvParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = || Array2::from_shape_fn((EMBED_DIM, EMBED_DIM), |_| rng.random_range(-0.1..0.1));
        let (w_self, w_nb) = (m(), m());
        let attn = gat.then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            Array1::from_shape_fn(2 * EMBED_DIM, |_| rng.random_range(-0.2..0.2))
        });
        ConvParams { w_self, w_nb, attn }
    }

    #[test]
    fn isolated_node_keeps_self_term() {
        let layer = single_layer(vec![], 1, 1);
        let h = random_h(1, 1);
        let conv = random_conv(2, true);
        let want = h.dot(&conv.w_self);
        assert_eq!(sage_layer(&layer, 0, &h.view(), &conv), want);
        assert_eq!(gat_layer(&layer, 0, &h.view(), &conv, 0.2), want);
    }

    #[test]
    fn one_neighbor_identity_passes_neighbor() {
        let layer = single_layer(vec![BlockEdge { src: 1, dst: 0, weight: 1.0 }], 2, 1);
        let h = random_h(2, 3);
        let conv = ConvParams {
            w_self: Array2::zeros((EMBED_DIM, EMBED_DIM)),
            w_nb: Array2::eye(EMBED_DIM),
            attn: None,
        };
        let out = sage_layer(&layer, 0, &h.view(), &conv);
        assert_eq!(out.row(0), h.row(1));
    }

    /// Dense adjacency form of the SAGE layer on a 3-node line graph.
    #[test]
    fn sage_matches_dense_oracle() {
        // 0 -> 1 -> 2, all three nodes are destinations
        let w01 = 0.7;
        let w12 = 0.4;
        let layer = single_layer(
            vec![BlockEdge { src: 0, dst: 1, weight: w01 }, BlockEdge { src: 1, dst: 2, weight: w12 }],
            3,
            3,
        );
        let h = random_h(3, 4);
        let conv = random_conv(5, false);
        let mut a = Array2::<f64>::zeros((3, 3));
        a[[1, 0]] = w01;
        a[[2, 1]] = w12;
        let deg = [1.0f64, 1.0, 1.0];
        let mut want = Array2::zeros((3, EMBED_DIM));
        for i in 0..3 {
            for j in 0..EMBED_DIM {
                let mut acc = 0.0;
                for k in 0..EMBED_DIM {
                    acc += h[[i, k]] * conv.w_self[[k, j]];
                    for src in 0..3 {
                        acc += a[[i, src]] / deg[i] * h[[src, k]] * conv.w_nb[[k, j]];
                    }
                }
                want[[i, j]] = acc;
            }
        }
        let got = sage_layer(&layer, 0, &h.view(), &conv);
        assert!((got - want).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn gat_matches_dense_oracle_on_star() {
        // leaves 1..4 point at center 0
        let ws = [0.1, 0.2, 0.3, 0.4];
        let layer = single_layer(
            (0..4).map(|k| BlockEdge { src: k as u32 + 1, dst: 0, weight: ws[k] }).collect(),
            5,
            1,
        );
        let h = random_h(5, 6);
        let conv = random_conv(7, true);
        let a = conv.attn.as_ref().unwrap();
        let lk = |x: f64| if x > 0.0 { x } else { 0.2 * x };
        let z: Vec<Vec<f64>> = (0..5)
            .map(|n| (0..EMBED_DIM).map(|j| (0..EMBED_DIM).map(|k| h[[n, k]] * conv.w_nb[[k, j]]).sum()).collect())
            .collect();
        let scores: Vec<f64> = (0..4)
            .map(|k| {
                let mut s = 0.0;
                for j in 0..EMBED_DIM {
                    s += a[j] * ws[k] * z[k + 1][j] + a[EMBED_DIM + j] * ws[k] * z[0][j];
                }
                lk(s)
            })
            .collect();
        let denom: f64 = scores.iter().map(|s| s.exp()).sum();
        let alpha: Vec<f64> = scores.iter().map(|s| s.exp() / denom).collect();
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let got = gat_layer(&layer, 0, &h.view(), &conv, 0.2);
        for j in 0..EMBED_DIM {
            let self_term: f64 = (0..EMBED_DIM).map(|k| h[[0, k]] * conv.w_self[[k, j]]).sum();
            let agg: f64 = (0..4).map(|k| alpha[k] * ws[k] * z[k + 1][j]).sum();
            assert!((got[[0, j]] - (self_term + lk(agg))).abs() < 1e-10);
        }
    }

    #[test]
    fn gat_single_neighbor_has_unit_attention() {
        let layer = single_layer(vec![BlockEdge { src: 1, dst: 0, weight: 0.9 }], 2, 1);
        let h = random_h(2, 8);
        let (_, cache) = gat_forward(&layer, 0, &h.view(), &random_conv(9, true), 0.2);
        assert_eq!(cache.alpha, vec![1.0]);
    }

    #[test]
    fn fusion_cases() {
        let mean = zero_params(&cfg(ConvKind::Sage, FusionKind::Mean), 2);
        let a = Array2::from_shape_vec((1, 2), vec![2.0, 4.0]).unwrap();
        let b = Array2::from_shape_vec((1, 2), vec![4.0, 6.0]).unwrap();
        let got = fuse(&[a.clone(), b.clone()], &mean, 0).unwrap();
        assert_eq!(got.row(0).to_vec(), vec![3.0, 5.0]);

        let mut weighted = zero_params(&cfg(ConvKind::Sage, FusionKind::Weighted), 2);
        weighted.fusion_weights = Some(Array2::ones((2, 2)));
        let gw = fuse(&[a.clone(), b.clone()], &weighted, 0).unwrap();
        assert!((gw - got).iter().all(|d| d.abs() < 1e-15));

        let concat = zero_params(&cfg(ConvKind::Sage, FusionKind::Concat), 2);
        let h1 = random_h(3, 1);
        let h2 = random_h(3, 2);
        assert_eq!(fuse(&[h1.clone(), h2.clone()], &concat, 1).unwrap().dim(), (3, 256));
        assert_eq!(fuse(&[h1.clone(), h2], &concat, 0).unwrap().dim(), (3, 128));
        assert!(fuse(&[h1, random_h(2, 3)], &concat, 1).is_err());
    }

    #[test]
    fn final_mlp_cases() {
        let mut p = zero_params(&cfg(ConvKind::Sage, FusionKind::Concat), 2);
        let zero = Array2::zeros((1, 256));
        assert!(final_mlp(&zero.view(), &p).iter().all(|&x| x == 0.0));
        // identity on the first 128 dims of a nonnegative input
        p.w_f1.slice_mut(s![..128, ..]).assign(&Array2::eye(128));
        p.w_f2 = Array2::eye(128);
        let x = Array2::from_shape_fn((1, 256), |(_, j)| j as f64);
        assert_eq!(final_mlp(&x.view(), &p).row(0), x.slice(s![0, ..128]));
    }

    #[test]
    fn no_edges_is_mlp_chain() {
        let g = toy_graph(4, &["A", "B"], &[vec![], vec![]]);
        let p = init_params(&cfg(ConvKind::Sage, FusionKind::Mean), 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = build_block(&g, &[0, 1, 2, 3], &BlockConfig::default(), &[0, 1], &mut rng);
        let out = forward(&block, &p, None).unwrap();
        let mut h = feature_transform(g.features(), &p).unwrap();
        for l in 0..2 {
            let a = h.dot(&p.conv[l][0].w_self);
            let b = h.dot(&p.conv[l][1].w_self);
            h = (a + b) * 0.5;
        }
        let want = final_mlp(&h.view(), &p);
        assert!((out - want).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn zero_dropout_training_equals_inference() {
        let g = toy_graph(5, &["A"], &[vec![(0, 1, 1), (2, 1, 3), (3, 4, 1)]]);
        let mut c = cfg(ConvKind::Gat, FusionKind::Concat);
        c.dropout = 0.0;
        let p = init_params(&c, 1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = build_block(&g, &[1, 4], &BlockConfig::default(), &[0], &mut rng);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(1);
        let train = forward(&block, &p, Some(&mut drop_rng)).unwrap();
        assert_eq!(train, forward(&block, &p, None).unwrap());

        c.dropout = 0.5;
        let p = init_params(&c, 1, 3).unwrap();
        let mut drop_rng = ChaCha8Rng::seed_from_u64(1);
        let train = forward(&block, &p, Some(&mut drop_rng)).unwrap();
        assert_ne!(train, forward(&block, &p, None).unwrap());
    }

    #[test]
    fn neighbor_order_does_not_matter() {
        let edges = vec![
            BlockEdge { src: 1, dst: 0, weight: 0.2 },
            BlockEdge { src: 2, dst: 0, weight: 0.5 },
            BlockEdge { src: 3, dst: 0, weight: 0.3 },
        ];
        let mut rev = edges.clone();
        rev.reverse();
        let h = random_h(4, 10);
        let conv = random_conv(11, true);
        let a = single_layer(edges, 4, 1);
        let b = single_layer(rev, 4, 1);
        let d1 = sage_layer(&a, 0, &h.view(), &conv) - sage_layer(&b, 0, &h.view(), &conv);
        let d2 = gat_layer(&a, 0, &h.view(), &conv, 0.2) - gat_layer(&b, 0, &h.view(), &conv, 0.2);
        assert!(d1.iter().chain(d2.iter()).all(|d| d.abs() < 1e-12));
    }
}
