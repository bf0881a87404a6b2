//! Supervised stage: joint trace likelihood and flow matching, with a random
//! share of examples trained without their trace.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iccot::{render_trace, ReasoningTrace};
use crate::model::{CotExample, FlowExample, Model, ModelError, Params, Prepared, Prompt};
use crate::world::{ImageVec, TaskInstance};

pub const CHECKPOINT_FILE: &str = "checkpoint.icfg";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Probability that an example is trained on the null-trace path.
    pub cot_drop_prob: f64,
    pub loss_weight_cot: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

/// Update rule. Adam uses the usual moment estimates with bias correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state over a parameter set.
pub(crate) struct Stepper {
    rule: Optimizer,
    lr: f64,
    t: i32,
    m: Option<Params<f32>>,
    v: Option<Params<f32>>,
}

impl Stepper {
    pub(crate) fn new(rule: Optimizer, lr: f64) -> Self {
        Stepper { rule, lr, t: 0, m: None, v: None }
    }

    /// Returns `params − step(grad)`.
    pub(crate) fn descend(&mut self, params: &Params<f32>, grad: &Params<f32>) -> Params<f32> {
        let mut next = params.clone();
        match self.rule {
            Optimizer::Sgd => next.add_scaled(-(self.lr as f32), grad),
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let m = self.m.get_or_insert_with(|| grad.zeros_like());
                let v = self.v.get_or_insert_with(|| grad.zeros_like());
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..next.num_tensors() {
                    let g = grad.tensor(i);
                    let (mi, vi) = (m.tensor_mut(i), v.tensor_mut(i));
                    for (k, gk) in g.iter().enumerate() {
                        let gk = *gk as f64;
                        mi[k] = (beta1 * mi[k] as f64 + (1.0 - beta1) * gk) as f32;
                        vi[k] = (beta2 * vi[k] as f64 + (1.0 - beta2) * gk * gk) as f32;
                    }
                    let p = next.tensor_mut(i);
                    for k in 0..p.len() {
                        let mh = mi[k] as f64 / c1;
                        let vh = vi[k] as f64 / c2;
                        p[k] -= (self.lr * mh / (vh.sqrt() + eps)) as f32;
                    }
                }
            }
        }
        next
    }
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig { learning_rate: 3e-3, steps: 2000, batch_size: 64, cot_drop_prob: 0.5, loss_weight_cot: 1.0, optimizer: Optimizer::adam(), seed: 0 }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("sft.learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.cot_drop_prob) {
            return bad(format!("sft.cot_drop_prob must be in [0, 1], got {}", self.cot_drop_prob));
        }
        if !(self.loss_weight_cot >= 0.0 && self.loss_weight_cot.is_finite()) {
            return bad(format!("sft.loss_weight_cot must be ≥ 0, got {}", self.loss_weight_cot));
        }
        if self.batch_size == 0 {
            return bad("sft.batch_size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    /// Training stopped; the parameters from before the failing step are kept.
    #[error("numerical fault at step {step}: {message}")]
    Aborted { step: usize, message: String, last_good: Box<Params<f32>> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A supervised example: prompt, reasoning trace and target image.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub prompt: Prompt,
    pub trace: ReasoningTrace,
    pub target: ImageVec,
}

impl From<&TaskInstance> for TrainExample {
    fn from(t: &TaskInstance) -> Self {
        TrainExample { prompt: Prompt::of(t), trace: t.gt_trace.clone(), target: t.gt_image.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMetrics {
    pub step: usize,
    /// Absent when every example in the batch dropped its trace.
    pub cot_loss: Option<f64>,
    pub flow_loss: f64,
}

impl SftMetrics {
    pub fn combined(&self, cot_weight: f64) -> f64 {
        cot_weight * self.cot_loss.unwrap_or(0.0) + self.flow_loss
    }
}

#[derive(Debug, Clone)]
pub struct SftOutput {
    pub params: Params<f32>,
    pub metrics: Vec<SftMetrics>,
}

struct Encoded {
    prompt: Prepared<f32>,
    trace: Vec<u32>,
    target: Vec<f32>,
}

/// Writes one JSON object per line; used for training metrics.
pub(crate) struct JsonlSink(Option<BufWriter<File>>);

impl JsonlSink {
    pub(crate) fn open(dir: Option<&Path>, name: &str) -> Result<Self, std::io::Error> {
        match dir {
            Some(d) => {
                std::fs::create_dir_all(d)?;
                Ok(JsonlSink(Some(BufWriter::new(File::create(d.join(name))?))))
            }
            None => Ok(JsonlSink(None)),
        }
    }

    pub(crate) fn push<S: Serialize>(&mut self, row: &S) -> Result<(), std::io::Error> {
        if let Some(w) = &mut self.0 {
            serde_json::to_writer(&mut *w, row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub(crate) fn finish(self) -> Result<(), std::io::Error> {
        if let Some(mut w) = self.0 {
            w.flush()?;
        }
        Ok(())
    }
}

/// Runs `cfg.steps` gradient steps on `w·cot_loss + flow_loss`.
///
/// With `out` set, metrics stream to `metrics.jsonl` and the final (or, on a
/// numerical fault, the last good) parameters are saved as `checkpoint.icfg`.
pub fn train_sft(
    model: &Model,
    dataset: &[TrainExample],
    init: Params<f32>,
    cfg: &SftConfig,
    out: Option<&Path>,
) -> Result<SftOutput, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::Dataset("dataset is empty".into()));
    }
    let mut encoded = Vec::with_capacity(dataset.len());
    for (i, ex) in dataset.iter().enumerate() {
        if ex.trace.num_refs() != ex.prompt.refs.len() {
            return Err(TrainError::Dataset(format!(
                "example {i}: trace has {} relations for {} references",
                ex.trace.num_refs(),
                ex.prompt.refs.len()
            )));
        }
        encoded.push(Encoded {
            prompt: model.prepare(&ex.prompt)?,
            trace: model.trace_ids(&render_trace(&ex.trace))?,
            target: ex.target.0.iter().map(|v| *v as f32).collect(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stepper = Stepper::new(cfg.optimizer, cfg.learning_rate);
    let mut params = init;
    let mut metrics = Vec::with_capacity(cfg.steps);
    let mut sink = JsonlSink::open(out, METRICS_FILE)?;
    let save = |p: &Params<f32>| -> Result<(), TrainError> {
        if let Some(dir) = out {
            model.checkpoint(p.clone()).save(&dir.join(CHECKPOINT_FILE))?;
        }
        Ok(())
    };
    for step in 0..cfg.steps {
        let mut cot = Vec::new();
        let mut flow = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let e = &encoded[rng.random_range(0..encoded.len())];
            let keep = !rng.random_bool(cfg.cot_drop_prob);
            if keep {
                cot.push(CotExample { prompt: e.prompt.clone(), target: e.trace.clone() });
            }
            flow.push(FlowExample { prompt: e.prompt.clone(), trace: keep.then(|| e.trace.clone()), x0: e.target.clone() });
        }
        let result = sft_gradient(model, &params, &cot, &flow, cfg.loss_weight_cot, &mut rng);
        let (row, grad) = match result {
            Ok((cot_loss, flow_loss, grad)) if grad.is_finite() => (SftMetrics { step, cot_loss, flow_loss }, grad),
            Ok(_) => return abort(step, "non-finite gradient".into(), params, save),
            Err(ModelError::NumericalFault(m)) => return abort(step, m, params, save),
            Err(e) => return Err(e.into()),
        };
        let next = stepper.descend(&params, &grad);
        if !next.is_finite() {
            return abort(step, "non-finite parameters after update".into(), params, save);
        }
        params = next;
        sink.push(&row)?;
        metrics.push(row);
    }
    sink.finish()?;
    save(&params)?;
    Ok(SftOutput { params, metrics })
}

fn abort(
    step: usize,
    message: String,
    last_good: Params<f32>,
    save: impl Fn(&Params<f32>) -> Result<(), TrainError>,
) -> Result<SftOutput, TrainError> {
    save(&last_good)?;
    Err(TrainError::Aborted { step, message, last_good: Box::new(last_good) })
}

/// Gradient of `w·cot + flow` for one batch; cot is normalized over the
/// tokens of the examples that kept their trace.
fn sft_gradient(
    model: &Model,
    p: &Params<f32>,
    cot: &[CotExample<f32>],
    flow: &[FlowExample<f32>],
    cot_weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Option<f64>, f64, Params<f32>), ModelError> {
    let (flow_loss, mut grad) = model.flow_loss(p, flow, rng)?;
    let cot_loss = if cot.is_empty() {
        None
    } else {
        let (loss, g) = model.cot_loss(p, cot)?;
        grad.add_scaled(cot_weight as f32, &g);
        Some(loss as f64)
    };
    if !(flow_loss as f64).is_finite() {
        return Err(ModelError::NumericalFault(format!("flow loss {flow_loss}")));
    }
    Ok((cot_loss, flow_loss as f64, grad))
}
