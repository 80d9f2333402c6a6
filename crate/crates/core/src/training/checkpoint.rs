//! Checkpoint file: model config, parameters and Adam state.
//!
//! ```text
//! magic "MGFNCKPT", u32 version
//! str metadata
//! u32 conv, u32 fusion, u64 layers, f64 dropout, u64 hash_buckets, f64 leaky_slope
//! u64 num_scenarios
//! f64 lr, f64 beta1, f64 beta2, f64 eps, u64 step
//! u64 tensor count, then per tensor: str name, f64s value, f64s m, f64s v
//! u64 FNV-1a checksum of everything before it
//! ```
//!
//! Integers and floats are little-endian; floats are stored as raw bits so
//! the round trip is exact.

use super::OptimizerState;
use crate::binio::{corrupt, Reader, Writer};
use crate::model::{init_params, ConvKind, FusionKind, ModelConfig, ModelParams};
use crate::Result;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MGFNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const WHAT: &str = "checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
}

pub fn serialize_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    w.str(&ck.metadata);
    let c = &ck.params.config;
    w.u32(match c.conv {
        ConvKind::Sage => 0,
        ConvKind::Gat => 1,
    });
    w.u32(match c.fusion {
        FusionKind::Mean => 0,
        FusionKind::Weighted => 1,
        FusionKind::Concat => 2,
    });
    w.u64(c.layers as u64);
    w.f64(c.dropout);
    w.u64(c.hash_buckets as u64);
    w.f64(c.leaky_slope);
    w.u64(ck.params.num_scenarios as u64);
    let o = &ck.optimizer;
    for x in [o.lr, o.beta1, o.beta2, o.eps] {
        w.f64(x);
    }
    w.u64(o.step);
    let p = ck.params.tensors();
    let m = o.m.tensors();
    let v = o.v.tensors();
    w.u64(p.len() as u64);
    for ((name, pv), ((_, mv), (_, vv))) in p.iter().zip(m.iter().zip(v.iter())) {
        w.str(name);
        w.f64s(pv);
        w.f64s(mv);
        w.f64s(vv);
    }
    w.finish()
}

pub fn deserialize_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::open(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, WHAT)?;
    let metadata = r.str()?;
    let conv = match r.u32()? {
        0 => ConvKind::Sage,
        1 => ConvKind::Gat,
        k => return Err(corrupt(WHAT, &format!("unknown conv kind {k}"))),
    };
    let fusion = match r.u32()? {
        0 => FusionKind::Mean,
        1 => FusionKind::Weighted,
        2 => FusionKind::Concat,
        k => return Err(corrupt(WHAT, &format!("unknown fusion kind {k}"))),
    };
    let layers = r.u64()? as usize;
    let dropout = r.f64()?;
    let hash_buckets = r.u64()? as usize;
    let leaky_slope = r.f64()?;
    let num_scenarios = r.u64()? as usize;
    let config = ModelConfig {
        conv,
        fusion,
        layers,
        dropout,
        hash_buckets,
        leaky_slope,
    };
    // guard the allocation in init_params against garbage sizes
    let rough = hash_buckets.saturating_mul(96) + layers.saturating_mul(num_scenarios).saturating_mul(32768);
    if layers > 64 || num_scenarios > 1024 || rough.saturating_mul(8) > r.remaining() {
        return Err(corrupt(WHAT, "model shape exceeds stored data"));
    }
    let mut params = init_params(&config, num_scenarios, 0).map_err(|e| corrupt(WHAT, &e.to_string()))?;
    let lr = r.f64()?;
    let beta1 = r.f64()?;
    let beta2 = r.f64()?;
    let eps = r.f64()?;
    let step = r.u64()?;
    let mut optimizer = OptimizerState::new(&params, lr);
    optimizer.beta1 = beta1;
    optimizer.beta2 = beta2;
    optimizer.eps = eps;
    optimizer.step = step;
    let count = r.u64()? as usize;
    {
        let mut p = params.tensors_mut();
        let mut m = optimizer.m.tensors_mut();
        let mut v = optimizer.v.tensors_mut();
        if count != p.len() {
            return Err(corrupt(WHAT, "tensor count does not match model shape"));
        }
        for i in 0..count {
            let name = r.str()?;
            if name != p[i].0 {
                return Err(corrupt(WHAT, &format!("expected tensor `{}`, found `{name}`", p[i].0)));
            }
            for dst in [&mut p[i].1, &mut m[i].1, &mut v[i].1] {
                let vals = r.f64s()?;
                if vals.len() != dst.len() {
                    return Err(corrupt(WHAT, &format!("tensor `{name}` has wrong length")));
                }
                dst.copy_from_slice(&vals);
            }
        }
    }
    r.expect_end()?;
    Ok(Checkpoint {
        metadata,
        params,
        optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            conv: ConvKind::Gat,
            fusion: FusionKind::Weighted,
            hash_buckets: 8,
            dropout: 0.5,
            ..Default::default()
        };
        let params = init_params(&cfg, 2, 3).unwrap();
        let mut optimizer = OptimizerState::new(&params, 0.005);
        optimizer.step = 17;
        optimizer.m.w_f1.fill(0.25);
        optimizer.v.emb_tag.fill(1e-300);
        Checkpoint {
            metadata: "seed = 3".into(),
            params,
            optimizer,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = serialize_checkpoint(&ck);
        assert_eq!(deserialize_checkpoint(&bytes).unwrap(), ck);
        assert_eq!(serialize_checkpoint(&deserialize_checkpoint(&bytes).unwrap()), bytes);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = serialize_checkpoint(&sample());
        assert!(matches!(deserialize_checkpoint(&bytes[..bytes.len() / 2]), Err(Error::Corrupt { .. })));
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(deserialize_checkpoint(&flipped).is_err());
        let mut version = bytes;
        version[8] = 9;
        assert!(matches!(deserialize_checkpoint(&version), Err(Error::Version { found: 9, .. })));
    }
}
