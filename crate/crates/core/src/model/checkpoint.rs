//! Little-endian binary checkpoints.
//!
//! Layout: `"HCX1"`, version `u32`, then `u64` counts and dims, `u8` policy /
//! mask / frozen-attention flags, `f64` curvature and margin, the seven
//! parameter arrays in [`Family::ALL`] order, and the training state
//! (epoch, best validation MRR, optional Adam moments). Everything numeric is
//! written as raw little-endian bits so round trips are exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AllocationPolicy, Dims, Family, ModelConfig, ParameterStore, SpaceMask};
use crate::error::{Error, Result};
use crate::training::AdamState;

pub const MAGIC: &[u8; 4] = b"HCX1";
pub const VERSION: u32 = 1;

/// Optimizer and early-stopping state saved next to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub epoch: u64,
    pub best_valid_mrr: f64,
    pub adam: Option<AdamState>,
}

impl Default for TrainingState {
    fn default() -> Self {
        Self {
            epoch: 0,
            best_valid_mrr: 0.0,
            adam: None,
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn store(&mut self, s: &ParameterStore) {
        for f in Family::ALL {
            for &v in s.family(f) {
                self.f64(v);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Integrity(format!(
                "file truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("count {v} does not fit in usize")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn store_into(&mut self, s: &mut ParameterStore) -> Result<()> {
        for f in Family::ALL {
            let n = s.family(f).len();
            let bytes = self.take(n * 8)?;
            for (dst, chunk) in s.family_mut(f).iter_mut().zip(bytes.chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        Ok(())
    }
}

/// Serializes a checkpoint into memory.
pub fn encode_checkpoint(store: &ParameterStore, state: &TrainingState) -> Vec<u8> {
    let cfg = &store.config;
    let mut w = Writer(Vec::with_capacity(128 + store.parameter_count() * 8 * 3));
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(store.n_entities as u64);
    w.u64(store.n_relations as u64);
    w.u64(cfg.dims.hyp as u64);
    w.u64(cfg.dims.cplx as u64);
    w.u64(cfg.dims.euc as u64);
    w.u64(cfg.d_base as u64);
    w.u8(match cfg.policy {
        AllocationPolicy::Equal => 0,
        AllocationPolicy::Custom(_) => 1,
    });
    w.u8(cfg.spaces.bits());
    w.u8(u8::from(cfg.attention_frozen));
    w.f64(cfg.curvature);
    w.f64(cfg.ball_margin);
    w.store(store);

    w.u64(state.epoch);
    w.f64(state.best_valid_mrr);
    match &state.adam {
        None => w.u8(0),
        Some(adam) => {
            w.u8(1);
            w.u64(adam.step);
            w.f64(adam.beta1);
            w.f64(adam.beta2);
            w.f64(adam.eps);
            w.store(&adam.m);
            w.store(&adam.v);
        }
    }
    w.0
}

/// Parses a checkpoint produced by [`encode_checkpoint`].
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParameterStore, TrainingState)> {
    if bytes.len() < 4 {
        return Err(Error::Integrity("file shorter than the magic tag".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version} (expected {VERSION})")));
    }
    let n_entities = r.usize()?;
    let n_relations = r.usize()?;
    let dims = Dims {
        hyp: r.usize()?,
        cplx: r.usize()?,
        euc: r.usize()?,
    };
    let d_base = r.usize()?;
    let policy = match r.u8()? {
        0 => AllocationPolicy::Equal,
        1 => AllocationPolicy::Custom(dims),
        p => return Err(Error::Format(format!("unknown allocation policy tag {p}"))),
    };
    let mask = r.u8()?;
    if mask == 0 || mask > 7 {
        return Err(Error::Format(format!("invalid space mask {mask}")));
    }
    let attention_frozen = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::Format(format!("invalid attention flag {v}"))),
    };
    let config = ModelConfig {
        dims,
        d_base,
        policy,
        curvature: r.f64()?,
        ball_margin: r.f64()?,
        spaces: SpaceMask::from_bits(mask),
        attention_frozen,
    };
    config.validate().map_err(|e| Error::Format(e.to_string()))?;

    // refuse absurd shapes before allocating
    let expected = n_entities
        .checked_mul(dims.real_budget())
        .and_then(|e| n_relations.checked_mul(dims.real_budget() + 3).and_then(|r| e.checked_add(r)))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("parameter shape overflows".into()))?;
    if expected > bytes.len() - r.pos {
        return Err(Error::Integrity(format!(
            "file truncated: {} parameter bytes declared, {} available",
            expected,
            bytes.len() - r.pos
        )));
    }

    let mut store = ParameterStore::zeros(config, n_entities, n_relations);
    r.store_into(&mut store)?;

    let epoch = r.u64()?;
    let best_valid_mrr = r.f64()?;
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let beta1 = r.f64()?;
            let beta2 = r.f64()?;
            let eps = r.f64()?;
            let mut m = store.zeros_like();
            let mut v = store.zeros_like();
            r.store_into(&mut m)?;
            r.store_into(&mut v)?;
            Some(AdamState {
                m,
                v,
                step,
                beta1,
                beta2,
                eps,
            })
        }
        v => return Err(Error::Format(format!("invalid optimizer flag {v}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Integrity(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((
        store,
        TrainingState {
            epoch,
            best_valid_mrr,
            adam,
        },
    ))
}

pub fn save_checkpoint(store: &ParameterStore, state: &TrainingState, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(store, state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterStore, TrainingState)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Human-readable `key = value` sidecar describing a checkpoint.
pub fn render_manifest(store: &ParameterStore, state: &TrainingState) -> String {
    let c = &store.config;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("format", format!("{} v{VERSION}", String::from_utf8_lossy(MAGIC)));
    kv("n_entities", store.n_entities.to_string());
    kv("n_relations", store.n_relations.to_string());
    kv("d_base", c.d_base.to_string());
    kv("d_h", c.dims.hyp.to_string());
    kv("d_c", c.dims.cplx.to_string());
    kv("d_e", c.dims.euc.to_string());
    kv(
        "policy",
        match c.policy {
            AllocationPolicy::Equal => "equal".into(),
            AllocationPolicy::Custom(_) => "custom".into(),
        },
    );
    kv("curvature", c.curvature.to_string());
    kv("ball_margin", c.ball_margin.to_string());
    kv(
        "spaces",
        crate::model::Space::ALL
            .iter()
            .filter(|&&sp| c.spaces.is_active(sp))
            .map(|sp| sp.letter())
            .collect(),
    );
    kv("attention_frozen", c.attention_frozen.to_string());
    kv("epoch", state.epoch.to_string());
    kv("best_valid_mrr", state.best_valid_mrr.to_string());
    kv(
        "adam_step",
        state.adam.as_ref().map_or("none".to_string(), |a| a.step.to_string()),
    );
    s
}

pub fn write_manifest(store: &ParameterStore, state: &TrainingState, path: &Path) -> Result<()> {
    fs::write(path, render_manifest(store, state)).map_err(|e| Error::io(path, e))
}
