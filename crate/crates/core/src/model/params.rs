//! Named parameter tensors, initialization and the checkpoint byte format.
//!
//! Checkpoint layout: `ICFG`, format version (u32 LE), header length (u32 LE),
//! JSON header `{model, world, tensors: [{name, shape}]}`, then every tensor
//! as little-endian f32 in header order.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::nn::Real;
use super::{ModelConfig, ModelError};
use crate::world::WorldConfig;

const MAGIC: &[u8; 4] = b"ICFG";
pub const FORMAT_VERSION: u32 = 1;
pub const TIME_FEATURES: usize = 8;

/// Tensor indices into `Params`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Idx {
    pub head_instr_emb: usize,
    pub head_prompt_w: usize,
    pub head_tok_emb: usize,
    pub head_in_w: usize,
    pub head_in_b: usize,
    pub head_hidden: Vec<(usize, usize)>,
    pub head_out_w: usize,
    pub head_out_b: usize,
    pub cond_ref_w: usize,
    pub cond_ref_b: usize,
    pub cond_instr_emb: usize,
    pub cond_trace_emb: usize,
    pub cond_null_trace: usize,
    pub cond_pool_w: usize,
    pub cond_pool_b: usize,
    pub vel: Vec<(usize, usize)>,
    pub vel_out_w: usize,
    pub vel_out_b: usize,
    pub vel_gate_w: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    tensors: Vec<TensorInfo>,
    pub(crate) idx: Idx,
}

impl Layout {
    pub(crate) fn new(cfg: &ModelConfig, vocab: usize, segments: usize) -> Self {
        let mut tensors = Vec::new();
        let mut add = |name: String, shape: Vec<usize>| {
            tensors.push(TensorInfo { name, shape });
            tensors.len() - 1
        };
        let (d, eh, hh) = (cfg.dim, cfg.head_embed, cfg.head_width);
        let refs = super::vocab::MAX_REFS;
        let head_instr_emb = add("head.instr_emb".into(), vec![cfg.max_instr_len, vocab, eh]);
        let head_prompt_w = add("head.prompt.w".into(), vec![hh, refs * d + eh]);
        let head_tok_emb = add("head.tok_emb".into(), vec![vocab, eh]);
        let head_in_w = add("head.in.w".into(), vec![hh, 2 * eh + segments]);
        let head_in_b = add("head.in.b".into(), vec![hh]);
        let head_hidden = (1..cfg.head_layers)
            .map(|k| (add(format!("head.hidden{k}.w"), vec![hh, hh]), add(format!("head.hidden{k}.b"), vec![hh])))
            .collect();
        let head_out_w = add("head.out.w".into(), vec![vocab, hh]);
        let head_out_b = add("head.out.b".into(), vec![vocab]);
        let (hr, ec, c) = (cfg.ref_width, cfg.cond_embed, cfg.ctx_width);
        let cond_ref_w = add("cond.ref.w".into(), vec![hr, d]);
        let cond_ref_b = add("cond.ref.b".into(), vec![hr]);
        let cond_instr_emb = add("cond.instr_emb".into(), vec![cfg.max_instr_len, vocab, ec]);
        let cond_trace_emb = add("cond.trace_emb".into(), vec![segments, vocab, ec]);
        let cond_null_trace = add("cond.null_trace".into(), vec![ec]);
        let cond_pool_w = add("cond.pool.w".into(), vec![c, refs * hr + 2 * ec]);
        let cond_pool_b = add("cond.pool.b".into(), vec![c]);
        let hv = cfg.vel_width;
        let vel = (0..cfg.vel_layers)
            .map(|k| {
                let fan_in = if k == 0 { d + TIME_FEATURES + c + ec } else { hv };
                (add(format!("vel.l{k}.w"), vec![hv, fan_in]), add(format!("vel.l{k}.b"), vec![hv]))
            })
            .collect();
        let vel_out_w = add("vel.out.w".into(), vec![d, hv]);
        let vel_out_b = add("vel.out.b".into(), vec![d]);
        let vel_gate_w = (0..super::flow::TIME_GATES).map(|k| add(format!("vel.gate{k}.w"), vec![d, d + c + ec])).collect();
        let idx = Idx {
            head_instr_emb,
            head_prompt_w,
            head_tok_emb,
            head_in_w,
            head_in_b,
            head_hidden,
            head_out_w,
            head_out_b,
            cond_ref_w,
            cond_ref_b,
            cond_instr_emb,
            cond_trace_emb,
            cond_null_trace,
            cond_pool_w,
            cond_pool_b,
            vel,
            vel_out_w,
            vel_out_b,
            vel_gate_w,
        };
        Layout { tensors, idx }
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    /// Reasoning-head tensors; frozen during alignment.
    pub fn is_head(&self, i: usize) -> bool {
        self.tensors[i].name.starts_with("head.")
    }
}

/// All trainable weights, one flat buffer per tensor.
#[derive(Clone, PartialEq)]
pub struct Params<T> {
    layout: Arc<Layout>,
    data: Vec<Vec<T>>,
}

impl<T> std::fmt::Debug for Params<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let scalars: usize = self.data.iter().map(Vec::len).sum();
        f.debug_struct("Params").field("tensors", &self.data.len()).field("scalars", &scalars).finish()
    }
}

impl<T: Real> Params<T> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = layout.tensors.iter().map(|t| vec![T::zero(); t.numel()]).collect();
        Params { layout, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub(crate) fn idx(&self) -> &Idx {
        &self.layout.idx
    }

    pub fn tensor(&self, i: usize) -> &[T] {
        &self.data[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&[T]> {
        self.layout.tensors.iter().position(|t| t.name == name).map(|i| self.tensor(i))
    }

    pub fn num_tensors(&self) -> usize {
        self.data.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    /// Scalars in tensor order; used for finite-difference checks.
    pub fn flat(&self) -> impl Iterator<Item = T> + '_ {
        self.data.iter().flatten().copied()
    }

    pub fn flat_locate(&self, mut k: usize) -> (usize, usize) {
        for (i, t) in self.data.iter().enumerate() {
            if k < t.len() {
                return (i, k);
            }
            k -= t.len();
        }
        panic!("flat index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.flat().all(|v| v.is_finite())
    }

    /// `self += alpha · other`, skipping tensors where `mask` is false.
    pub fn add_scaled_masked(&mut self, alpha: T, other: &Params<T>, mask: impl Fn(usize) -> bool) {
        for (i, (d, o)) in self.data.iter_mut().zip(&other.data).enumerate() {
            if mask(i) {
                super::nn::scaled_add_acc(d, alpha, o);
            }
        }
    }

    pub fn add_scaled(&mut self, alpha: T, other: &Params<T>) {
        self.add_scaled_masked(alpha, other, |_| true);
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().flatten().for_each(|v| *v = *v * alpha);
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params { layout: self.layout.clone(), data: self.data.iter().map(|t| t.iter().map(|v| U::of(v.f64())).collect()).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().map(|v| v.f64().abs()).fold(0.0, f64::max)
    }
}

impl Params<f32> {
    /// Seeded initialization: weights `N(0, 1/fan_in)`, embeddings `N(0, 0.3²)`,
    /// zero biases and a zero reasoning-head output layer.
    pub fn init(layout: Arc<Layout>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(layout.clone());
        for (i, info) in layout.tensors.iter().enumerate() {
            let std = if info.name == "head.out.w" || info.name.starts_with("vel.gate") || info.name.ends_with(".b") {
                continue;
            } else if info.name.ends_with(".w") {
                1.0 / (info.shape[1] as f64).sqrt()
            } else {
                0.3
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in p.data[i].iter_mut() {
                *v = normal.sample(&mut rng) as f32;
            }
        }
        p
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    world: WorldConfig,
    tensors: Vec<TensorInfo>,
}

/// A model configuration, its world and its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub world: WorldConfig,
    pub params: Params<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header { model: self.model.clone(), world: self.world.clone(), tensors: self.params.layout.tensors.clone() };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.params.flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing ICFG magic"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != FORMAT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported format version {version}")));
        }
        let len = word(8) as usize;
        let body = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
        let model = super::Model::new(header.model.clone(), header.world.clone())?;
        if model.layout().tensors != header.tensors {
            return Err(bad("tensor table does not match the configuration"));
        }
        let mut params = Params::<f32>::zeros(model.layout().clone());
        let mut at = 12 + len;
        for t in params.data.iter_mut() {
            let n = t.len() * 4;
            let chunk = bytes.get(at..at + n).ok_or_else(|| bad("truncated tensor data"))?;
            for (v, b) in t.iter_mut().zip(chunk.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
            }
            at += n;
        }
        if at != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint { model: header.model, world: header.world, params })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
