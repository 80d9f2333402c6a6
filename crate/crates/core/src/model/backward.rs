use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::forward::{leaky_grad, ForwardCache, GatCache};
use super::{ConvKind, ConvParams, FusionKind, ModelParams, HASH_DIM};
use crate::graph::{BlockLayer, SampledBlock};
use crate::{par, Error, Result, EMBED_DIM};

fn relu_mask(pre: &Array2<f64>, mut d: Array2<f64>) -> Array2<f64> {
    d.zip_mut_with(pre, |g, &x| {
        if x <= 0.0 {
            *g = 0.0
        }
    });
    d
}

fn mm_nt(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    par::matmul(&a.view(), &b.t())
}

fn mm_tn(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    par::matmul_tn(a, b)
}

/// Returns gradient of `d_conv` w.r.t. the layer input and accumulates the
/// parameter gradients into `grad`.
fn sage_backward(
    layer: &BlockLayer,
    scenario: usize,
    h_in: &Array2<f64>,
    agg: &Array2<f64>,
    conv: &ConvParams,
    d_conv: &Array2<f64>,
    grad: &mut ConvParams,
) -> Array2<f64> {
    let nd = layer.num_dst;
    let h_dst = h_in.slice(s![..nd, ..]);
    grad.w_self += &mm_tn(&h_dst, &d_conv.view());
    grad.w_nb += &mm_tn(&agg.view(), &d_conv.view());
    let mut d_in = Array2::zeros(h_in.dim());
    d_in.slice_mut(s![..nd, ..]).assign(&mm_nt(d_conv, &conv.w_self));
    let d_agg = mm_nt(d_conv, &conv.w_nb);
    for d in 0..nd {
        let edges = layer.in_edges(scenario, d);
        if edges.is_empty() {
            continue;
        }
        let inv = 1.0 / edges.len() as f64;
        for e in edges {
            d_in.row_mut(e.src as usize).scaled_add(e.weight * inv, &d_agg.row(d));
        }
    }
    d_in
}

#[allow(clippy::too_many_arguments)]
fn gat_backward(
    layer: &BlockLayer,
    scenario: usize,
    h_in: &Array2<f64>,
    cache: &GatCache,
    conv: &ConvParams,
    slope: f64,
    d_conv: &Array2<f64>,
    grad: &mut ConvParams,
) -> Array2<f64> {
    let nd = layer.num_dst;
    let d = EMBED_DIM;
    let attn = conv.attn.as_ref().expect("GAT layer needs an attention vector");
    let (a_src, a_dst) = (attn.slice(s![..d]), attn.slice(s![d..]));
    let h_dst = h_in.slice(s![..nd, ..]);
    grad.w_self += &mm_tn(&h_dst, &d_conv.view());
    let mut d_in = Array2::zeros(h_in.dim());
    d_in.slice_mut(s![..nd, ..]).assign(&mm_nt(d_conv, &conv.w_self));

    let z = &cache.z;
    let n_src = z.nrows();
    let mut d_z = Array2::<f64>::zeros((n_src, d));
    let mut d_p = Array1::<f64>::zeros(n_src);
    let mut d_q = Array1::<f64>::zeros(n_src);
    let offsets = &layer.offsets[scenario];
    let edges_all = &layer.edges[scenario];
    let mut d_alpha = Vec::new();
    for dst in 0..nd {
        let (lo, hi) = (offsets[dst], offsets[dst + 1]);
        if lo == hi {
            continue;
        }
        let d_g: Array1<f64> = d_conv
            .row(dst)
            .iter()
            .zip(cache.g.row(dst))
            .map(|(&u, &g)| u * leaky_grad(g, slope))
            .collect();
        d_alpha.clear();
        let mut weighted = 0.0;
        for (k, e) in edges_all[lo..hi].iter().enumerate() {
            let alpha = cache.alpha[lo + k];
            let src = e.src as usize;
            d_z.row_mut(src).scaled_add(alpha * e.weight, &d_g);
            let da = e.weight * z.row(src).dot(&d_g);
            d_alpha.push(da);
            weighted += alpha * da;
        }
        for (k, e) in edges_all[lo..hi].iter().enumerate() {
            let alpha = cache.alpha[lo + k];
            let d_e = alpha * (d_alpha[k] - weighted);
            let d_score = d_e * leaky_grad(cache.score[lo + k], slope);
            d_p[e.src as usize] += d_score * e.weight;
            d_q[dst] += d_score * e.weight;
        }
    }
    let mut d_attn = grad.attn.take().expect("GAT gradient has an attention slot");
    d_attn.slice_mut(s![..d]).scaled_add(1.0, &z.t().dot(&d_p));
    d_attn.slice_mut(s![d..]).scaled_add(1.0, &z.t().dot(&d_q));
    grad.attn = Some(d_attn);
    for n in 0..n_src {
        let mut row = d_z.row_mut(n);
        if d_p[n] != 0.0 {
            row.scaled_add(d_p[n], &a_src);
        }
        if d_q[n] != 0.0 {
            row.scaled_add(d_q[n], &a_dst);
        }
    }
    grad.w_nb += &mm_tn(&h_in.view(), &d_z.view());
    d_in += &mm_nt(&d_z, &conv.w_nb);
    d_in
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient `d_out` with respect to the seed embeddings.
pub fn backward(
    block: &SampledBlock,
    params: &ModelParams,
    cache: &ForwardCache,
    d_out: &Array2<f64>,
) -> Result<ModelParams> {
    if d_out.dim() != cache.out.dim() {
        return Err(Error::InvalidArgument(format!(
            "output gradient has shape {:?}, expected {:?}",
            d_out.dim(),
            cache.out.dim()
        )));
    }
    let cfg = &params.config;
    let mut grad = params.zeros_like();
    let slope = cfg.leaky_slope;

    // final MLP
    let r_f1 = cache.y_f1.mapv(|x| x.max(0.0));
    grad.w_f2 = mm_tn(&r_f1.view(), &d_out.view());
    grad.b_f2 = d_out.sum_axis(Axis(0));
    let d_y = relu_mask(&cache.y_f1, mm_nt(d_out, &params.w_f2));
    let h_last = cache.h.last().expect("at least one level");
    grad.w_f1 = mm_tn(&h_last.view(), &d_y.view());
    grad.b_f1 = d_y.sum_axis(Axis(0));
    let mut d_h = mm_nt(&d_y, &params.w_f1);

    let s_count = params.num_scenarios;
    let inv_s = 1.0 / s_count as f64;
    for l in (0..block.num_layers()).rev() {
        let layer = &block.layers[l];
        let lc = &cache.layers[l];
        let d_fused = match &lc.mask {
            Some(m) => d_h * m,
            None => d_h,
        };
        let d_conv: Vec<Array2<f64>> = match cfg.fusion {
            FusionKind::Mean => (0..s_count).map(|_| &d_fused * inv_s).collect(),
            FusionKind::Weighted => {
                let w = params.fusion_weights.as_ref().expect("weighted fusion has weights");
                let gw = grad.fusion_weights.as_mut().expect("weighted fusion has weights");
                (0..s_count)
                    .map(|s| {
                        gw[[l, s]] = (&d_fused * &lc.conv_out[s]).sum() * inv_s;
                        &d_fused * (w[[l, s]] * inv_s)
                    })
                    .collect()
            }
            FusionKind::Concat => {
                let d_cat = match &lc.concat {
                    Some(cat) => {
                        grad.concat_proj[l] = mm_tn(&cat.view(), &d_fused.view());
                        mm_nt(&d_fused, &params.concat_proj[l])
                    }
                    None => d_fused,
                };
                (0..s_count)
                    .map(|s| d_cat.slice(s![.., s * EMBED_DIM..(s + 1) * EMBED_DIM]).to_owned())
                    .collect()
            }
        };
        let h_in = &cache.h[l];
        let mut d_in = Array2::zeros(h_in.dim());
        for s in 0..s_count {
            let conv = &params.conv[l][s];
            let g = &mut grad.conv[l][s];
            d_in += &match cfg.conv {
                ConvKind::Sage => sage_backward(layer, s, h_in, &lc.sage_agg[s], conv, &d_conv[s], g),
                ConvKind::Gat => gat_backward(layer, s, h_in, &lc.gat[s], conv, slope, &d_conv[s], g),
            };
        }
        d_h = d_in;
    }

    // input MLP and embedding tables
    let r_m1 = cache.z_m1.mapv(|x| x.max(0.0));
    grad.w_m2 = mm_tn(&r_m1.view(), &d_h.view());
    grad.b_m2 = d_h.sum_axis(Axis(0));
    let d_z = relu_mask(&cache.z_m1, mm_nt(&d_h, &params.w_m2));
    grad.w_m1 = mm_tn(&cache.x0.view(), &d_z.view());
    grad.b_m1 = d_z.sum_axis(Axis(0));
    let d_x = mm_nt(&d_z, &params.w_m1);
    for (i, row) in block.features.iter().enumerate() {
        for (k, (table, b)) in [
            (&mut grad.emb_keyword, row.keyword_bucket),
            (&mut grad.emb_tag, row.tag_bucket),
            (&mut grad.emb_id, row.id_bucket),
        ]
        .into_iter()
        .enumerate()
        {
            table
                .row_mut(b as usize)
                .scaled_add(1.0, &d_x.slice(s![i, k * HASH_DIM..(k + 1) * HASH_DIM]));
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::tests::toy_graph;
    use crate::graph::{build_block, BlockConfig};
    use crate::model::{forward_cached, init_params, ModelConfig};

    /// Loss `Σ c ⊙ out` against central differences on a small block.
    fn check(conv: ConvKind, fusion: FusionKind, dropout: f64) {
        let edges = vec![
            vec![(0, 1, 2), (2, 1, 1), (3, 0, 1), (4, 2, 3), (1, 4, 1)],
            vec![(1, 0, 1), (3, 1, 2), (4, 3, 1), (2, 4, 5)],
        ];
        let g = toy_graph(6, &["A", "B"], &edges);
        let cfg = ModelConfig {
            conv,
            fusion,
            dropout,
            hash_buckets: 16,
            ..Default::default()
        };
        let mut params = init_params(&cfg, 2, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (_, t) in params.tensors_mut() {
            for x in t.iter_mut() {
                *x += rng.random_range(-0.05..0.05);
            }
        }
        let block = build_block(&g, &[1, 4, 5], &BlockConfig::default(), &[0, 1], &mut rng);
        let c = Array2::from_shape_fn((3, EMBED_DIM), |_| rng.random_range(-1.0..1.0));
        let loss = |p: &ModelParams| {
            let mut drop = ChaCha8Rng::seed_from_u64(9);
            (forward_cached(&block, p, Some(&mut drop)).unwrap().out * &c).sum()
        };
        let mut drop = ChaCha8Rng::seed_from_u64(9);
        let cache = forward_cached(&block, &params, Some(&mut drop)).unwrap();
        let grad = backward(&block, &params, &cache, &c).unwrap();
        let analytic: Vec<(String, Vec<f64>)> =
            grad.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
        let h = 1e-6;
        for (ti, (name, a)) in analytic.iter().enumerate() {
            let picks: Vec<usize> = if a.len() <= 40 {
                (0..a.len()).collect()
            } else {
                let mut p: Vec<usize> = (0..20).map(|_| rng.random_range(0..a.len())).collect();
                // entries that actually receive gradient
                p.extend(a.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, _)| i).take(20));
                p
            };
            for i in picks {
                let orig = params.tensors()[ti].1[i];
                params.tensors_mut()[ti].1[i] = orig + h;
                let up = loss(&params);
                params.tensors_mut()[ti].1[i] = orig - h;
                let down = loss(&params);
                params.tensors_mut()[ti].1[i] = orig;
                let num = (up - down) / (2.0 * h);
                let rel = (a[i] - num).abs() / a[i].abs().max(num.abs()).max(1e-5);
                assert!(rel < 1e-4, "{name}[{i}]: analytic {} numeric {num}", a[i]);
            }
        }
    }

    #[test]
    fn sage_concat_matches_finite_differences() {
        check(ConvKind::Sage, FusionKind::Concat, 0.0);
    }

    #[test]
    fn gat_weighted_matches_finite_differences() {
        check(ConvKind::Gat, FusionKind::Weighted, 0.0);
    }

    #[test]
    fn dropout_mask_is_differentiated() {
        check(ConvKind::Gat, FusionKind::Mean, 0.5);
    }

    #[test]
    fn unused_buckets_get_zero_gradient() {
        let g = toy_graph(3, &["A"], &[vec![(0, 1, 1)]]);
        let cfg = ModelConfig {
            hash_buckets: 16,
            ..Default::default()
        };
        let params = init_params(&cfg, 1, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = build_block(&g, &[1], &BlockConfig::default(), &[0], &mut rng);
        let cache = forward_cached(&block, &params, None).unwrap();
        let grad = backward(&block, &params, &cache, &Array2::ones((1, EMBED_DIM))).unwrap();
        let used: Vec<usize> = block.features.iter().map(|f| f.id_bucket as usize).collect();
        for b in 0..16 {
            if !used.contains(&b) {
                assert!(grad.emb_id.row(b).iter().all(|&x| x == 0.0));
            }
        }
        assert!(backward(&block, &params, &cache, &Array2::ones((2, EMBED_DIM))).is_err());
    }
}
