//! Shared fixtures and independent reference implementations.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};

use mgfn_core::eval::{EmbeddingTable, RetrievalConfig, UserQueue, Aggregation};
use mgfn_core::graph::{Csmg, FeatureRow};
use mgfn_core::graph_builder::{build_csmg, clean_records, extract_transition_pairs, InteractionRecord};
use mgfn_core::model::{ConvKind, FusionKind, ModelParams};
use mgfn_core::synthgen::{last_day_cutoff, split_train_validation, DatasetSpec, ItemMeta};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random multi-scenario graph with `n` nodes and about `edges` edges per
/// scenario. Features use `buckets` hash buckets.
pub fn random_graph(n: usize, scenarios: usize, edges: usize, buckets: u32, seed: u64) -> Csmg {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = (0..n).map(|i| format!("n{i:04}")).collect();
    let names = (0..scenarios).map(|s| format!("s{s}")).collect();
    let features = (0..n)
        .map(|_| FeatureRow {
            keyword_bucket: rng.random_range(0..buckets),
            tag_bucket: rng.random_range(0..buckets),
            id_bucket: rng.random_range(0..buckets),
            log_duration: rng.random_range(1.0..6.0),
            log_degree: rng.random_range(0.0..4.0),
        })
        .collect();
    let mut lists = Vec::new();
    let mut watch = Vec::new();
    for _ in 0..scenarios {
        let mut seen = HashSet::new();
        let mut list = Vec::new();
        while list.len() < edges {
            let (s, d) = (rng.random_range(0..n as u32), rng.random_range(0..n as u32));
            if s != d && seen.insert((s, d)) {
                list.push((s, d, rng.random_range(1..6)));
            }
        }
        lists.push(list);
        watch.push((0..n).map(|_| rng.random_range(0..4)).collect());
    }
    Csmg::from_parts(ids, names, buckets, features, watch, &lists, String::new()).unwrap()
}

/// The standard synthetic dataset: catalog, cleaned train and validation
/// records, and the graph over the training window.
pub struct Standard {
    pub catalog: Vec<ItemMeta>,
    pub train: Vec<InteractionRecord>,
    pub validation: Vec<InteractionRecord>,
    pub graph: Csmg,
}

pub const STANDARD_BUCKETS: usize = 5000;

pub fn standard_dataset() -> Standard {
    let (catalog, records) = DatasetSpec::default().generate().unwrap();
    let ids: HashSet<String> = catalog.iter().map(|m| m.item_id.clone()).collect();
    let records = clean_records(&records, &ids);
    let cut = last_day_cutoff(&records).unwrap();
    let (train, validation) = split_train_validation(&records, cut);
    let graph = build_csmg(&extract_transition_pairs(&train), &train, &catalog, STANDARD_BUCKETS).unwrap();
    Standard {
        catalog,
        train,
        validation,
        graph,
    }
}

fn dm(a: &ndarray::Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn dv(a: &ndarray::Array1<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.iter().copied())
}

fn add_row(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut row in m.row_iter_mut() {
        row += b.transpose();
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Whole-graph inference with dense matrices, written from the model
/// definition: every node sees its full in-neighborhood in every scenario.
/// Returns one row per node.
pub fn dense_forward(g: &Csmg, p: &ModelParams) -> DMatrix<f64> {
    let n = g.num_nodes();
    let d = 128;
    let hd = 32;
    let (ekw, etag, eid) = (dm(&p.emb_keyword), dm(&p.emb_tag), dm(&p.emb_id));
    let mut x = DMatrix::zeros(n, 3 * hd + 2);
    for (i, f) in g.features().iter().enumerate() {
        for c in 0..hd {
            x[(i, c)] = ekw[(f.keyword_bucket as usize, c)];
            x[(i, hd + c)] = etag[(f.tag_bucket as usize, c)];
            x[(i, 2 * hd + c)] = eid[(f.id_bucket as usize, c)];
        }
        x[(i, 3 * hd)] = f.log_duration;
        x[(i, 3 * hd + 1)] = f.log_degree;
    }
    let mut z = &x * dm(&p.w_m1);
    add_row(&mut z, &dv(&p.b_m1));
    z.apply(|v| *v = v.max(0.0));
    let mut h = &z * dm(&p.w_m2);
    add_row(&mut h, &dv(&p.b_m2));

    let s_count = g.num_scenarios();
    let slope = p.config.leaky_slope;
    for l in 0..p.config.layers {
        let mut outs = Vec::new();
        for s in 0..s_count {
            let conv = &p.conv[l][s];
            let (w_self, w_nb) = (dm(&conv.w_self), dm(&conv.w_nb));
            // dense normalized adjacency, a[i][j] = ŵ of edge j -> i
            let view = g.scenario_subgraph(s);
            let mut a = DMatrix::<f64>::zeros(n, n);
            let mut has = vec![false; n];
            for i in 0..n {
                let (srcs, counts) = view.in_neighbors(i as u32);
                let mass: f64 = counts.iter().map(|&c| (c as f64 + 1.0).ln()).sum();
                for (&j, &c) in srcs.iter().zip(counts) {
                    a[(i, j as usize)] = (c as f64 + 1.0).ln() / mass;
                    has[i] = true;
                }
            }
            let mut out = &h * &w_self;
            match p.config.conv {
                ConvKind::Sage => {
                    let mut agg = &a * &h;
                    for i in 0..n {
                        let k = view.in_neighbors(i as u32).0.len();
                        if k > 0 {
                            let mut r = agg.row_mut(i);
                            r /= k as f64;
                        }
                    }
                    out += agg * w_nb;
                }
                ConvKind::Gat => {
                    let zz = &h * &w_nb;
                    let attn = conv.attn.as_ref().unwrap();
                    let a_src = DVector::from_iterator(d, attn.iter().take(d).copied());
                    let a_dst = DVector::from_iterator(d, attn.iter().skip(d).copied());
                    let ps = &zz * a_src;
                    let qs = &zz * a_dst;
                    for i in 0..n {
                        if !has[i] {
                            continue;
                        }
                        let nbrs: Vec<usize> = (0..n).filter(|&j| a[(i, j)] > 0.0).collect();
                        let e: Vec<f64> = nbrs.iter().map(|&j| leaky(a[(i, j)] * (ps[j] + qs[i]), slope)).collect();
                        let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let ex: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
                        let tot: f64 = ex.iter().sum();
                        let mut gi = DVector::<f64>::zeros(d);
                        for (k, &j) in nbrs.iter().enumerate() {
                            gi += zz.row(j).transpose() * (ex[k] / tot * a[(i, j)]);
                        }
                        for c in 0..d {
                            out[(i, c)] += leaky(gi[c], slope);
                        }
                    }
                }
            }
            outs.push(out);
        }
        h = match p.config.fusion {
            FusionKind::Mean => outs.iter().fold(DMatrix::zeros(n, d), |acc, o| acc + o) / s_count as f64,
            FusionKind::Weighted => {
                let w = p.fusion_weights.as_ref().unwrap();
                outs.iter().enumerate().fold(DMatrix::zeros(n, d), |acc, (s, o)| acc + o * w[[l, s]]) / s_count as f64
            }
            FusionKind::Concat => {
                let mut cat = DMatrix::zeros(n, d * s_count);
                for (s, o) in outs.iter().enumerate() {
                    cat.view_mut((0, s * d), (n, d)).copy_from(o);
                }
                if l + 1 < p.config.layers {
                    cat * dm(&p.concat_proj[l])
                } else {
                    cat
                }
            }
        };
    }
    let mut y = &h * dm(&p.w_f1);
    add_row(&mut y, &dv(&p.b_f1));
    y.apply(|v| *v = v.max(0.0));
    let mut out = y * dm(&p.w_f2);
    add_row(&mut out, &dv(&p.b_f2));
    out
}

/// The retrieval strategy by brute force: full sorts, no batching, no
/// shared neighbor lists.
pub fn exhaustive_retrieve(table: &EmbeddingTable, queue: &UserQueue, cfg: &RetrievalConfig) -> Vec<String> {
    let ids = table.ids();
    let v = table.vectors();
    let dot = |a: usize, b: usize| -> f64 { (0..v.ncols()).map(|c| v[[a, c]] * v[[b, c]]).sum() };
    let order = |a: &(usize, f64), b: &(usize, f64)| -> Ordering { b.1.partial_cmp(&a.1).unwrap().then(ids[a.0].cmp(&ids[b.0])) };
    let start = queue.items.len().saturating_sub(cfg.queue_len);
    let rows: Vec<usize> = queue.items[start..].iter().filter_map(|id| table.row_of(id)).collect();
    let mut candidates = BTreeSet::new();
    for &q in &rows {
        let mut all: Vec<(usize, f64)> = (0..ids.len()).filter(|&i| i != q).map(|i| (i, dot(q, i))).collect();
        all.sort_by(order);
        candidates.extend(all.into_iter().take(cfg.per_query_k).map(|p| p.0));
    }
    let mut scored: Vec<(usize, f64)> = candidates
        .into_iter()
        .filter(|&c| !queue.history.contains(&ids[c]))
        .map(|c| {
            let s = match cfg.aggregation {
                Aggregation::Max => rows.iter().map(|&q| dot(q, c)).fold(f64::NEG_INFINITY, f64::max),
                Aggregation::Sum => rows.iter().map(|&q| dot(q, c)).sum(),
            };
            (c, s)
        })
        .collect();
    scored.sort_by(order);
    scored.into_iter().take(cfg.final_k).map(|(i, _)| ids[i].clone()).collect()
}
