//! Binary graph file.
//!
//! All integers and floats are little-endian; floats are stored as IEEE-754
//! bit patterns so a round trip is exact.
//!
//! ```text
//! magic            b"CSMG"
//! version          u32 (= 1)
//! metadata         str
//! n_nodes          u32
//! n_scenarios      u32
//! hash_buckets     u32
//! scenario ids     str × n_scenarios
//! item ids         str × n_nodes
//! features         n_nodes × (keyword u32, tag u32, id u32, log_duration f64, log_degree f64)
//! watch counts     n_scenarios × n_nodes × u32
//! per scenario     nnz u64, offsets (n_nodes + 1) × u64, targets nnz × u32, counts nnz × u32
//! checksum         u64 FNV-1a of every preceding byte
//! ```
//! `str` is a u32 byte length followed by UTF-8 bytes. Adjacency is the
//! out-CSR of each scenario with targets sorted per row; in-adjacency is
//! rebuilt on load.

use super::{Csmg, FeatureRow};
use crate::binio::{corrupt, Reader, Writer};
use crate::Result;

pub const GRAPH_MAGIC: &[u8; 4] = b"CSMG";
pub const GRAPH_VERSION: u32 = 1;

pub fn serialize(g: &Csmg) -> Vec<u8> {
    let mut w = Writer::new(GRAPH_MAGIC, GRAPH_VERSION);
    w.str(&g.metadata);
    w.u32(g.num_nodes() as u32);
    w.u32(g.num_scenarios() as u32);
    w.u32(g.hash_buckets);
    for s in &g.scenarios {
        w.str(s);
    }
    for id in &g.item_ids {
        w.str(id);
    }
    for f in &g.features {
        w.u32(f.keyword_bucket);
        w.u32(f.tag_bucket);
        w.u32(f.id_bucket);
        w.f64(f.log_duration);
        w.f64(f.log_degree);
    }
    for counts in &g.watch_counts {
        for &c in counts {
            w.u32(c);
        }
    }
    for csr in &g.out_adj {
        w.u64(csr.nnz() as u64);
        for &o in &csr.offsets {
            w.u64(o as u64);
        }
        for &t in &csr.targets {
            w.u32(t);
        }
        for &c in &csr.counts {
            w.u32(c);
        }
    }
    w.finish()
}

pub fn deserialize(bytes: &[u8]) -> Result<Csmg> {
    const WHAT: &str = "graph";
    let mut r = Reader::open(bytes, GRAPH_MAGIC, GRAPH_VERSION, WHAT)?;
    let metadata = r.str()?;
    let n = r.u32()? as usize;
    let n_scen = r.u32()? as usize;
    let buckets = r.u32()?;
    // every node needs at least its id length and a feature row
    if n > r.remaining() / 32 || n_scen > r.remaining() / 4 {
        return Err(corrupt(WHAT, "counts exceed remaining data"));
    }
    let scenarios = (0..n_scen).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let item_ids = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let mut features = Vec::with_capacity(n);
    for _ in 0..n {
        features.push(FeatureRow {
            keyword_bucket: r.u32()?,
            tag_bucket: r.u32()?,
            id_bucket: r.u32()?,
            log_duration: r.f64()?,
            log_degree: r.f64()?,
        });
    }
    let watch_counts = (0..n_scen)
        .map(|_| (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let mut edge_lists = Vec::with_capacity(n_scen);
    for _ in 0..n_scen {
        let nnz = r.len(r.remaining() / 8)?;
        let offsets = (0..=n).map(|_| r.u64().map(|o| o as usize)).collect::<Result<Vec<_>>>()?;
        if offsets[0] != 0 || offsets[n] != nnz || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(corrupt(WHAT, "malformed offsets"));
        }
        let targets = (0..nnz).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let counts = (0..nnz).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let mut edges = Vec::with_capacity(nnz);
        for src in 0..n {
            for k in offsets[src]..offsets[src + 1] {
                edges.push((src as u32, targets[k], counts[k]));
            }
        }
        edge_lists.push(edges);
    }
    r.expect_end()?;
    Csmg::from_parts(item_ids, scenarios, buckets, features, watch_counts, &edge_lists, metadata)
}
