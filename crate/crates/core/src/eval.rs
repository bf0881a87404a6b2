//! Oracle judge and benchmark runner.
//!
//! The judge decodes a generated image and counts which required features it
//! shows. Aggregates are means of per-sample scores, including `overall`,
//! which is the mean of per-sample geometric means.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::surrogate_reward;
use crate::model::{Checkpoint, Model, ModelError, Prompt, SampleMode};
use crate::world::{caption_of, Feature, ImageVec, TaskInstance, TaskKind, World};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub pf: f64,
    pub sc: f64,
    pub overall: f64,
    pub caption_sim: f64,
}

impl SampleScore {
    pub const ZERO: SampleScore = SampleScore { pf: 0.0, sc: 0.0, overall: 0.0, caption_sim: 0.0 };

    pub fn new(pf: f64, sc: f64, caption_sim: f64) -> Self {
        SampleScore { pf, sc, overall: overall(pf, sc), caption_sim }
    }
}

/// Per-sample overall score: the geometric mean of PF and SC.
pub fn overall(pf: f64, sc: f64) -> f64 {
    (pf * sc).sqrt()
}

fn coverage(wanted: &[Feature], have: &std::collections::BTreeSet<Feature>) -> f64 {
    if wanted.is_empty() {
        return 10.0;
    }
    10.0 * wanted.iter().filter(|f| have.contains(f)).count() as f64 / wanted.len() as f64
}

/// Scores one output. A non-finite image scores zero everywhere.
pub fn judge_sample(world: &World, task: &TaskInstance, generated: &ImageVec) -> SampleScore {
    if !generated.is_finite() || generated.dim() != world.config().dim {
        return SampleScore::ZERO;
    }
    let have = world.decode(generated).feature_set(world.config());
    let pf = coverage(&task.requirements.prompt_following, &have);
    let sc = coverage(&task.requirements.subject_consistency, &have);
    let caption = caption_of(&task.gt_spec, world.config());
    SampleScore::new(pf, sc, surrogate_reward(world, generated, &caption).value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// ODE integration steps.
    pub steps: usize,
    /// Sample a greedy trace and condition on it; otherwise use the null-trace path.
    pub use_cot: bool,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { steps: 50, use_cot: true, seed: 0 }
    }
}

/// One line of the per-sample log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub kind: TaskKind,
    pub num_refs: usize,
    /// Sampled trace text, when reasoning was used.
    pub trace: Option<String>,
    pub trace_parsed: bool,
    /// Set when the model failed on this sample; its scores are then zero.
    pub error: Option<String>,
    pub score: SampleScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub pf: f64,
    pub sc: f64,
    pub overall: f64,
    pub caption_sim: f64,
}

impl Aggregate {
    pub fn of<'a>(scores: impl IntoIterator<Item = &'a SampleScore>) -> Self {
        let mut a = Aggregate::default();
        for s in scores {
            a.count += 1;
            a.pf += s.pf;
            a.sc += s.sc;
            a.overall += s.overall;
            a.caption_sim += s.caption_sim;
        }
        if a.count > 0 {
            let n = a.count as f64;
            a.pf /= n;
            a.sc /= n;
            a.overall /= n;
            a.caption_sim /= n;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub failed: usize,
    pub all: Aggregate,
    pub by_kind: BTreeMap<TaskKind, Aggregate>,
    pub by_ref_count: BTreeMap<usize, Aggregate>,
    /// SHA-256 over the checkpoint bytes, the settings and the suite.
    pub config_digest: String,
}

impl EvalReport {
    pub fn from_samples(records: &[SampleRecord], config_digest: String) -> Self {
        let mut by_kind: BTreeMap<TaskKind, Vec<&SampleScore>> = BTreeMap::new();
        let mut by_refs: BTreeMap<usize, Vec<&SampleScore>> = BTreeMap::new();
        for r in records {
            by_kind.entry(r.kind).or_default().push(&r.score);
            by_refs.entry(r.num_refs).or_default().push(&r.score);
        }
        EvalReport {
            samples: records.len(),
            failed: records.iter().filter(|r| r.error.is_some()).count(),
            all: Aggregate::of(records.iter().map(|r| &r.score)),
            by_kind: by_kind.into_iter().map(|(k, v)| (k, Aggregate::of(v))).collect(),
            by_ref_count: by_refs.into_iter().map(|(k, v)| (k, Aggregate::of(v))).collect(),
            config_digest,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("benchmark suite is empty")]
    EmptySuite,
    #[error("steps must be at least 1")]
    NoSteps,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn config_digest(ck: &Checkpoint, settings: &EvalSettings, suite: &[TaskInstance]) -> String {
    let mut h = Sha256::new();
    h.update(ck.to_bytes());
    h.update(serde_json::to_vec(settings).expect("settings serialize"));
    h.update(serde_json::to_vec(suite).expect("suite serializes"));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Generates and judges every task. Sample `i` uses stream `i` of the seed,
/// so results do not depend on suite order. Model faults are recorded per
/// sample and scored zero.
pub fn run_benchmark(
    ck: &Checkpoint,
    suite: &[TaskInstance],
    settings: &EvalSettings,
) -> Result<(EvalReport, Vec<SampleRecord>), EvalError> {
    if suite.is_empty() {
        return Err(EvalError::EmptySuite);
    }
    if settings.steps == 0 {
        return Err(EvalError::NoSteps);
    }
    let model = Model::from_checkpoint(ck)?;
    let world = World::new(ck.world.clone()).map_err(|e| ModelError::Config(e.to_string()))?;
    let records = suite
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(i as u64);
            let mut rec = SampleRecord {
                index: i,
                kind: task.kind,
                num_refs: task.refs.len(),
                trace: None,
                trace_parsed: false,
                error: None,
                score: SampleScore::ZERO,
            };
            match run_one(&model, &ck.params, task, settings, &mut rng, &mut rec) {
                Ok(image) => rec.score = judge_sample(&world, task, &image),
                Err(e) => rec.error = Some(e.to_string()),
            }
            rec
        })
        .collect::<Vec<_>>();
    let report = EvalReport::from_samples(&records, config_digest(ck, settings, suite));
    Ok((report, records))
}

fn run_one(
    model: &Model,
    params: &crate::model::Params<f32>,
    task: &TaskInstance,
    settings: &EvalSettings,
    rng: &mut ChaCha8Rng,
    rec: &mut SampleRecord,
) -> Result<ImageVec, ModelError> {
    let prep = model.prepare::<f32>(&Prompt::of(task))?;
    let trace = if settings.use_cot {
        let s = model.sample_trace(params, &prep, 0.0, rng);
        rec.trace = Some(s.text.clone());
        rec.trace_parsed = s.is_parsed();
        Some(s)
    } else {
        None
    };
    let g = model.generate(params, &prep, trace.as_ref().map(|s| s.content()), settings.steps, SampleMode::Ode, rng)?;
    let image = g.image();
    if !image.is_finite() {
        return Err(ModelError::NumericalFault("generated image is not finite".into()));
    }
    Ok(image)
}

/// Plain-text table: one row per task kind, then per reference count, then the total.
pub fn format_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<20} {:>5} {:>6} {:>6} {:>8} {:>8}", "group", "n", "PF", "SC", "Overall", "CapSim");
    let mut row = |name: String, a: &Aggregate| {
        let _ = writeln!(out, "{name:<20} {:>5} {:>6.2} {:>6.2} {:>8.2} {:>8.4}", a.count, a.pf, a.sc, a.overall, a.caption_sim);
    };
    for (k, a) in &report.by_kind {
        row(k.to_string(), a);
    }
    for (n, a) in &report.by_ref_count {
        row(format!("{n} ref(s)"), a);
    }
    row("all".into(), &report.all);
    out
}
