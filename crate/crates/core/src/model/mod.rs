//! The trainable policy: a reasoning head that writes traces token by token,
//! a conditioning encoder, and a rectified-flow velocity network.
//!
//! Every forward pass has a hand-written backward pass. All code is generic
//! over the scalar type so gradients can be checked in `f64` while training
//! runs in `f32`.

mod flow;
mod head;
pub mod nn;
mod params;
pub mod vocab;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{ImageVec, TaskInstance, WorldConfig};

pub use flow::{rectified_pair, time_features, transition_log_density, FlowExample, Generation, SampleMode};
pub use head::{CotExample, SampledTrace};
pub use nn::Real;
pub use params::{Checkpoint, Layout, Params, TensorInfo, FORMAT_VERSION, TIME_FEATURES};
pub use vocab::Vocab;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("word not in vocabulary: {0:?}")]
    UnknownWord(String),
    #[error("{got} reference images exceed the maximum of {max}")]
    TooManyRefs { got: usize, max: usize },
    #[error("reference image has dimension {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("instruction has {len} tokens, maximum is {max}")]
    InstructionTooLong { len: usize, max: usize },
    #[error("trace has {len} tokens, maximum is {max}")]
    TraceTooLong { len: usize, max: usize },
    #[error("numerical fault: {0}")]
    NumericalFault(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Image dimension; must match the world.
    pub dim: usize,
    pub head_width: usize,
    /// Number of tanh layers in the reasoning head.
    pub head_layers: usize,
    pub head_embed: usize,
    pub ref_width: usize,
    pub cond_embed: usize,
    pub ctx_width: usize,
    pub vel_width: usize,
    /// Number of tanh layers in the velocity network.
    pub vel_layers: usize,
    /// Maximum generated trace tokens, EOS included.
    pub max_trace_len: usize,
    pub max_instr_len: usize,
    /// Derived from the world vocabulary when absent.
    pub vocab_size: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            head_width: 64,
            head_layers: 2,
            head_embed: 16,
            ref_width: 32,
            cond_embed: 64,
            ctx_width: 128,
            vel_width: 128,
            vel_layers: 2,
            max_trace_len: 64,
            max_instr_len: 32,
            vocab_size: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [
            ("dim", self.dim),
            ("head_width", self.head_width),
            ("head_layers", self.head_layers),
            ("head_embed", self.head_embed),
            ("ref_width", self.ref_width),
            ("cond_embed", self.cond_embed),
            ("ctx_width", self.ctx_width),
            ("vel_width", self.vel_width),
            ("vel_layers", self.vel_layers),
            ("max_trace_len", self.max_trace_len),
            ("max_instr_len", self.max_instr_len),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Reference images plus instruction text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub refs: Vec<ImageVec>,
    pub instruction: String,
}

impl Prompt {
    pub fn of(task: &TaskInstance) -> Self {
        Prompt { refs: task.ref_images(), instruction: task.instruction.clone() }
    }
}

/// A tokenized prompt with references converted to the scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared<T> {
    refs: Vec<Vec<T>>,
    instr: Vec<u32>,
}

impl<T: Real> Prepared<T> {
    pub fn num_refs(&self) -> usize {
        self.refs.len()
    }

    pub fn cast<U: Real>(&self) -> Prepared<U> {
        Prepared { refs: self.refs.iter().map(|r| r.iter().map(|v| U::of(v.f64())).collect()).collect(), instr: self.instr.clone() }
    }
}

/// Architecture plus vocabulary; weights live in `Params`.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    world: WorldConfig,
    vocab: Arc<Vocab>,
    layout: Arc<Layout>,
}

impl Model {
    pub fn new(mut cfg: ModelConfig, world: WorldConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        world.validate().map_err(|e| ModelError::Config(e.to_string()))?;
        if cfg.dim != world.dim {
            return Err(ModelError::Config(format!("model.dim = {} but world.dim = {}", cfg.dim, world.dim)));
        }
        let vocab = Vocab::new(&world);
        match cfg.vocab_size {
            Some(v) if v != vocab.len() => {
                return Err(ModelError::Config(format!(
                    "model.vocab_size = {v} but the world vocabulary has {} tokens",
                    vocab.len()
                )))
            }
            _ => cfg.vocab_size = Some(vocab.len()),
        }
        let layout = Arc::new(Layout::new(&cfg, vocab.len(), vocab.num_segments()));
        Ok(Model { cfg, world, vocab: Arc::new(vocab), layout })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        Self::new(ck.model.clone(), ck.world.clone())
    }

    /// Config with the vocabulary size resolved.
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn world_config(&self) -> &WorldConfig {
        &self.world
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn init_params(&self, seed: u64) -> Params<f32> {
        Params::init(self.layout.clone(), seed)
    }

    pub fn checkpoint(&self, params: Params<f32>) -> Checkpoint {
        Checkpoint { model: self.cfg.clone(), world: self.world.clone(), params }
    }

    pub fn prepare<T: Real>(&self, prompt: &Prompt) -> Result<Prepared<T>, ModelError> {
        if prompt.refs.len() > vocab::MAX_REFS {
            return Err(ModelError::TooManyRefs { got: prompt.refs.len(), max: vocab::MAX_REFS });
        }
        let mut refs = Vec::with_capacity(prompt.refs.len());
        for r in &prompt.refs {
            if r.dim() != self.cfg.dim {
                return Err(ModelError::Dimension { got: r.dim(), expected: self.cfg.dim });
            }
            if !r.is_finite() {
                return Err(ModelError::NumericalFault("non-finite reference image".into()));
            }
            refs.push(r.0.iter().map(|v| T::of(*v)).collect());
        }
        let instr = self.vocab.words(&prompt.instruction)?;
        if instr.len() > self.cfg.max_instr_len {
            return Err(ModelError::InstructionTooLong { len: instr.len(), max: self.cfg.max_instr_len });
        }
        Ok(Prepared { refs, instr })
    }

    /// Tokenizes trace text for conditioning or supervision (no BOS/EOS).
    pub fn trace_ids(&self, text: &str) -> Result<Vec<u32>, ModelError> {
        let ids = self.vocab.trace_tokens(text)?;
        self.check_trace_len(&ids)?;
        Ok(ids)
    }

    /// Conditioning accepts any sampled output, including one cut off at the budget.
    fn check_condition_len(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.len() > self.cfg.max_trace_len {
            return Err(ModelError::TraceTooLong { len: ids.len(), max: self.cfg.max_trace_len });
        }
        Ok(())
    }

    fn check_trace_len(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.len() + 1 > self.cfg.max_trace_len {
            return Err(ModelError::TraceTooLong { len: ids.len() + 1, max: self.cfg.max_trace_len });
        }
        Ok(())
    }

    /// Conditioning vector: the pooled context followed by the summed trace embedding.
    pub fn encode_context<T: Real>(
        &self,
        params: &Params<T>,
        prompt: &Prepared<T>,
        trace: Option<&[u32]>,
    ) -> Result<Vec<T>, ModelError> {
        if let Some(ids) = trace {
            self.check_condition_len(ids)?;
        }
        Ok(self.context_forward(params, prompt, trace).ctx)
    }

    /// Mean-pooled position-bound instruction embedding.
    fn instr_embedding<T: Real>(&self, table: &[T], width: usize, instr: &[u32]) -> Vec<T> {
        let v = self.vocab.len();
        let mut e = vec![T::zero(); width];
        if instr.is_empty() {
            return e;
        }
        let scale = T::of(1.0 / instr.len() as f64);
        for (k, &tok) in instr.iter().enumerate() {
            let row = &table[(k * v + tok as usize) * width..][..width];
            nn::scaled_add_acc(&mut e, scale, row);
        }
        e
    }

    fn instr_embedding_back<T: Real>(&self, grad: &mut [T], width: usize, instr: &[u32], g: &[T]) {
        let v = self.vocab.len();
        if instr.is_empty() {
            return;
        }
        let scale = T::of(1.0 / instr.len() as f64);
        for (k, &tok) in instr.iter().enumerate() {
            nn::scaled_add_acc(&mut grad[(k * v + tok as usize) * width..][..width], scale, g);
        }
    }
}
