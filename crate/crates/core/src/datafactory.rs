//! Dataset construction: task sampling, oracle reasoning, target rendering,
//! scoring, optional corruption, threshold filtering and JSONL persistence.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{quality_score, surrogate_reward};
use crate::iccot::ReasoningTrace;
use crate::world::{
    oracle_trace, Feature, ImageVec, Intent, Reference, Requirements, SceneSpec, TaskInstance, TaskKind, World, WorldError,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid kind mix: {0}")]
    Mix(String),
    #[error("invalid filter thresholds: {0}")]
    Thresholds(String),
    #[error("invalid build request: {0}")]
    Build(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
}

/// Sampling weights over `TaskKind::ALL`, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KindMix(pub [f64; 8]);

impl Default for KindMix {
    fn default() -> Self {
        KindMix([0.125; 8])
    }
}

impl KindMix {
    /// All weight on one kind.
    pub fn only(kind: TaskKind) -> Self {
        let mut w = [0.0; 8];
        w[TaskKind::ALL.iter().position(|k| *k == kind).expect("kind is listed")] = 1.0;
        KindMix(w)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.0.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DataError::Mix(format!("weights must be finite and non-negative, got {:?}", self.0)));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::Mix(format!("weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// Surrogate reward of the target image against the trace caption, in [−1, 1].
    pub caption_sim: f64,
    /// Cosine to the nearest clean render, in [0, 1].
    pub quality: f64,
    /// 10 × fraction of required features visible in the decoded target, in [0, 10].
    pub instruction_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Target replaced by the render of an unrelated spec.
    Mismatch,
    /// Gaussian noise added to the target.
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: u64,
    pub task_kind: TaskKind,
    pub refs: Vec<Reference>,
    pub instruction: String,
    pub intent: Intent,
    pub trace: ReasoningTrace,
    pub target_image: ImageVec,
    pub target_spec: SceneSpec,
    pub requirements: Requirements,
    pub scores: Scores,
    /// Ground-truth corruption label, kept for auditing the filter.
    pub corruption: Option<Corruption>,
}

impl DatasetRecord {
    /// The record as a task; `gt_image` is the stored (possibly corrupted) target.
    pub fn to_task(&self) -> TaskInstance {
        TaskInstance {
            kind: self.task_kind,
            refs: self.refs.clone(),
            instruction: self.instruction.clone(),
            intent: self.intent.clone(),
            gt_spec: self.target_spec.clone(),
            gt_image: self.target_image.clone(),
            gt_trace: self.trace.clone(),
            requirements: self.requirements.clone(),
        }
    }
}

/// Corruption settings for `build_records`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub rate: f64,
    /// Share of corrupted records that get a mismatched target; the rest get noise.
    pub mismatch_share: f64,
    /// Per-component noise standard deviation (targets have unit norm).
    pub noise_std: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig { rate: 0.0, mismatch_share: 0.5, noise_std: 0.15 }
    }
}

impl CorruptionConfig {
    pub fn with_rate(rate: f64) -> Self {
        CorruptionConfig { rate, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if !prob(self.rate) {
            return Err(DataError::Build(format!("corruption rate must be in [0, 1], got {}", self.rate)));
        }
        if !prob(self.mismatch_share) {
            return Err(DataError::Build(format!("mismatch_share must be in [0, 1], got {}", self.mismatch_share)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(DataError::Build(format!("noise_std must be finite and ≥ 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

/// Fraction of required features present in the decoded image, times 10.
pub fn instruction_score(world: &World, req: &Requirements, image: &ImageVec) -> f64 {
    let mut wanted: Vec<Feature> = req.prompt_following.iter().chain(&req.subject_consistency).copied().collect();
    wanted.sort();
    wanted.dedup();
    if wanted.is_empty() {
        return 10.0;
    }
    let have = world.decode(image).feature_set(world.config());
    10.0 * wanted.iter().filter(|f| have.contains(f)).count() as f64 / wanted.len() as f64
}

pub fn score_record(world: &World, trace: &ReasoningTrace, req: &Requirements, image: &ImageVec) -> Scores {
    Scores {
        caption_sim: surrogate_reward(world, image, trace.caption()).value,
        quality: quality_score(world, image),
        instruction_score: instruction_score(world, req, image),
    }
}

/// Builds `n` scored records. Each record draws from its own stream of a
/// seed taken from `rng`, so the output depends only on that seed.
pub fn build_records(
    world: &World,
    n: usize,
    mix: &KindMix,
    corruption: &CorruptionConfig,
    rng: &mut impl Rng,
) -> Result<Vec<DatasetRecord>, DataError> {
    if n == 0 {
        return Err(DataError::Build("n must be at least 1".into()));
    }
    mix.validate()?;
    corruption.validate()?;
    let kinds = WeightedIndex::new(mix.0).map_err(|e| DataError::Mix(e.to_string()))?;
    let seed: u64 = rng.random();
    (0..n as u64)
        .map(|id| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(id);
            build_one(world, id, TaskKind::ALL[kinds.sample(&mut r)], corruption, &mut r)
        })
        .collect()
}

fn build_one(
    world: &World,
    id: u64,
    kind: TaskKind,
    corruption: &CorruptionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<DatasetRecord, DataError> {
    let task = world.sample_task(kind, rng)?;
    let trace = oracle_trace(world, &task);
    let spec = task.gt_spec.clone();
    let mut image = world.render(&spec)?;
    let mut label = None;
    if rng.random_bool(corruption.rate) {
        if rng.random_bool(corruption.mismatch_share) {
            let other = loop {
                let s = world.random_spec(rng);
                if s != spec {
                    break s;
                }
            };
            image = world.render(&other)?;
            label = Some(Corruption::Mismatch);
        } else {
            let noise = Normal::new(0.0, corruption.noise_std).expect("validated std");
            image = ImageVec(image.0.iter().map(|v| v + noise.sample(rng)).collect());
            label = Some(Corruption::Noise);
        }
    }
    let scores = score_record(world, &trace, &task.requirements, &image);
    Ok(DatasetRecord {
        id,
        task_kind: kind,
        refs: task.refs,
        instruction: task.instruction,
        intent: task.intent,
        trace,
        target_image: image,
        target_spec: spec,
        requirements: task.requirements,
        scores,
        corruption: label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterThresholds {
    pub min_caption_sim: f64,
    pub min_quality: f64,
    pub min_instruction_score: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds { min_caption_sim: 0.9, min_quality: 0.95, min_instruction_score: 8.0 }
    }
}

impl FilterThresholds {
    /// Every threshold at the bottom of its score's range.
    pub fn permissive() -> Self {
        FilterThresholds { min_caption_sim: -1.0, min_quality: 0.0, min_instruction_score: 0.0 }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let check = |name: &str, v: f64, lo: f64, hi: f64| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(DataError::Thresholds(format!("{name} must be in [{lo}, {hi}], got {v}")))
            }
        };
        check("min_caption_sim", self.min_caption_sim, -1.0, 1.0)?;
        check("min_quality", self.min_quality, 0.0, 1.0)?;
        check("min_instruction_score", self.min_instruction_score, 0.0, 10.0)
    }

    /// First failing rule in the fixed order, or `None` if the record passes.
    pub fn first_failure(&self, s: &Scores) -> Option<FilterRule> {
        if !(s.caption_sim >= self.min_caption_sim) {
            Some(FilterRule::CaptionSim)
        } else if !(s.quality >= self.min_quality) {
            Some(FilterRule::Quality)
        } else if !(s.instruction_score >= self.min_instruction_score) {
            Some(FilterRule::InstructionScore)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterRule {
    CaptionSim,
    Quality,
    InstructionScore,
}

impl FilterRule {
    pub const ALL: [FilterRule; 3] = [FilterRule::CaptionSim, FilterRule::Quality, FilterRule::InstructionScore];
}

/// Each removed record is counted once, under its first failing rule, so
/// `kept + Σ removed_by_rule = total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total: usize,
    pub kept: usize,
    pub removed_by_rule: BTreeMap<FilterRule, usize>,
    pub removal_fraction: f64,
}

pub fn filter_dataset(records: Vec<DatasetRecord>, th: &FilterThresholds) -> (Vec<DatasetRecord>, FilterReport) {
    let total = records.len();
    let mut removed: BTreeMap<FilterRule, usize> = FilterRule::ALL.iter().map(|r| (*r, 0)).collect();
    let mut kept = Vec::with_capacity(total);
    for r in records {
        match th.first_failure(&r.scores) {
            Some(rule) => *removed.get_mut(&rule).expect("all rules present") += 1,
            None => kept.push(r),
        }
    }
    let removal_fraction = if total == 0 { 0.0 } else { 1.0 - kept.len() as f64 / total as f64 };
    let report = FilterReport { total, kept: kept.len(), removed_by_rule: removed, removal_fraction };
    (kept, report)
}

/// Writes one compact JSON object per line.
pub fn write_jsonl_rows<S: Serialize>(rows: &[S], path: &Path) -> Result<usize, DataError> {
    let io = |e: std::io::Error| DataError::Io { path: path.to_path_buf(), source: e };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(rows.len())
}

/// Reads one JSON object per line; blank lines are skipped. Errors carry the
/// 1-based line number.
pub fn read_jsonl_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    read_checked(path, |_: &T| Ok(()))
}

fn read_checked<T: DeserializeOwned>(path: &Path, check: impl Fn(&T) -> Result<(), String>) -> Result<Vec<T>, DataError> {
    let io = |e: std::io::Error| DataError::Io { path: path.to_path_buf(), source: e };
    let file = File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DataError::Parse { path: path.to_path_buf(), line: i + 1, message };
        let row: T = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        check(&row).map_err(err)?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_jsonl(records: &[DatasetRecord], path: &Path) -> Result<usize, DataError> {
    write_jsonl_rows(records, path)
}

/// Reads records and checks each trace against its reference count.
pub fn read_jsonl(path: &Path) -> Result<Vec<DatasetRecord>, DataError> {
    read_checked(path, |r: &DatasetRecord| {
        if r.trace.num_refs() == r.refs.len() {
            Ok(())
        } else {
            Err(format!("trace has {} relations but the record has {} references", r.trace.num_refs(), r.refs.len()))
        }
    })
}

#[cfg(test)]
mod tests;
