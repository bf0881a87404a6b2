//! Configuration, pipeline stages and the command-line front end.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{train_align, AlignConfig};
use crate::datafactory::{build_records, filter_dataset, CorruptionConfig, DataError, DatasetRecord, FilterReport, FilterThresholds, KindMix};
use crate::eval::{run_benchmark, EvalError, EvalReport, EvalSettings, SampleRecord};
use crate::model::{Checkpoint, Model, ModelConfig, ModelError, Params, Prompt, Vocab};
use crate::sft::{train_sft, SftConfig, TrainError, TrainExample};
use crate::world::{TaskInstance, TaskKind, World, WorldConfig, WorldError};

mod cli;

pub use cli::dispatch;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}:{line}:{column}: {message}", path.display())]
    ConfigParse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("inconsistent config: {first} and {second}: {message}")]
    Consistency { first: String, second: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub records: usize,
    pub mix: KindMix,
    pub corruption: CorruptionConfig,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { records: 2500, mix: KindMix::default(), corruption: CorruptionConfig::with_rate(0.2), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of held-out tasks, cycling through the task kinds.
    pub suite_size: usize,
    pub suite_seed: u64,
    pub steps: usize,
    pub use_cot: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { suite_size: 500, suite_seed: 1, steps: 50, use_cot: true, seed: 0 }
    }
}

impl EvalConfig {
    pub fn settings(&self) -> EvalSettings {
        EvalSettings { steps: self.steps, use_cot: self.use_cot, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory that receives every artifact of a run.
    pub run_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { run_dir: PathBuf::from("runs/default") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub sft: SftConfig,
    pub align: AlignConfig,
    pub filter: FilterThresholds,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
}

impl Config {
    /// Sets every stage seed from one value.
    pub fn reseed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.sft.seed = seed;
        self.align.seed = seed;
        self.eval.seed = seed;
        self.eval.suite_seed = seed.wrapping_add(1);
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.world.dim != self.model.dim {
            return Err(HarnessError::Consistency {
                first: "world.dim".into(),
                second: "model.dim".into(),
                message: format!("world.dim = {} but model.dim = {}", self.world.dim, self.model.dim),
            });
        }
        self.world.validate()?;
        self.model.validate()?;
        if let Some(v) = self.model.vocab_size {
            let need = Vocab::new(&self.world).len();
            if v != need {
                return Err(HarnessError::Consistency {
                    first: "model.vocab_size".into(),
                    second: "world".into(),
                    message: format!("model.vocab_size = {v} but the world's words and tag tokens need {need}"),
                });
            }
        }
        self.sft.validate()?;
        self.align.validate()?;
        self.filter.validate()?;
        self.data.mix.validate()?;
        self.data.corruption.validate()?;
        if self.data.records == 0 {
            return Err(HarnessError::Invalid("data.records must be at least 1".into()));
        }
        if self.eval.suite_size == 0 {
            return Err(HarnessError::Invalid("eval.suite_size must be at least 1".into()));
        }
        if self.eval.steps == 0 {
            return Err(HarnessError::Invalid("eval.steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses a JSON config, filling absent fields with defaults, and validates it.
pub fn load_config(path: &Path) -> Result<Config, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })?;
    parse_config(&text, path)
}

pub fn parse_config(text: &str, path: &Path) -> Result<Config, HarnessError> {
    let cfg: Config = serde_json::from_str(text).map_err(|e| HarnessError::ConfigParse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn world(cfg: &Config) -> Result<World, HarnessError> {
    Ok(World::new(cfg.world.clone())?)
}

pub fn model(cfg: &Config) -> Result<Model, HarnessError> {
    Ok(Model::new(cfg.model.clone(), cfg.world.clone())?)
}

pub fn build_data(cfg: &Config) -> Result<Vec<DatasetRecord>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data.seed);
    Ok(build_records(&world(cfg)?, cfg.data.records, &cfg.data.mix, &cfg.data.corruption, &mut rng)?)
}

/// Held-out tasks, kinds in round-robin order.
pub fn eval_suite(cfg: &Config) -> Result<Vec<TaskInstance>, HarnessError> {
    let w = world(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.suite_seed);
    (0..cfg.eval.suite_size).map(|i| Ok(w.sample_task(TaskKind::ALL[i % 8], &mut rng)?)).collect()
}

pub fn sft_stage(cfg: &Config, records: &[DatasetRecord], out: Option<&Path>) -> Result<Params<f32>, HarnessError> {
    let m = model(cfg)?;
    let examples: Vec<TrainExample> = records.iter().map(|r| TrainExample::from(&r.to_task())).collect();
    Ok(train_sft(&m, &examples, m.init_params(cfg.sft.seed), &cfg.sft, out)?.params)
}

pub fn align_stage(
    cfg: &Config,
    init: Params<f32>,
    records: &[DatasetRecord],
    rid: bool,
    out: Option<&Path>,
) -> Result<Params<f32>, HarnessError> {
    let m = model(cfg)?;
    let prompts: Vec<Prompt> = records.iter().map(|r| Prompt::of(&r.to_task())).collect();
    let acfg = AlignConfig { rid_enabled: rid, ..cfg.align.clone() };
    Ok(train_align(&m, &world(cfg)?, init, &prompts, &acfg, out)?.params)
}

pub fn evaluate(
    cfg: &Config,
    params: &Params<f32>,
    suite: &[TaskInstance],
) -> Result<(EvalReport, Vec<SampleRecord>), HarnessError> {
    let ck = model(cfg)?.checkpoint(params.clone());
    Ok(run_benchmark(&ck, suite, &cfg.eval.settings())?)
}

pub const ABLATION_ROWS: [&str; 4] = ["none", "SFT", "SFT+RGA", "SFT+RGA+RID"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub filter: FilterReport,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.name == name).map(|r| &r.report)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<14} {:>6} {:>6} {:>8} {:>8}\n", "setting", "PF", "SC", "Overall", "CapSim");
        for r in &self.rows {
            let a = &r.report.all;
            out += &format!("{:<14} {:>6.2} {:>6.2} {:>8.2} {:>8.4}\n", r.name, a.pf, a.sc, a.overall, a.caption_sim);
        }
        out
    }
}

/// Parameters produced by the ablation stages.
#[derive(Debug, Clone)]
pub struct AblationModels {
    pub init: Params<f32>,
    pub sft: Params<f32>,
    pub rga: Params<f32>,
    pub rid: Params<f32>,
}

/// Builds and filters data, trains SFT, aligns without and with diverse
/// reasoning, and evaluates the untrained model and all three stages on one
/// held-out suite. The "none" row is the untrained initialization.
pub fn run_ablation(cfg: &Config) -> Result<(AblationReport, AblationModels), HarnessError> {
    let (records, filter) = filter_dataset(build_data(cfg)?, &cfg.filter);
    if records.is_empty() {
        return Err(HarnessError::Input("filtering removed every record".into()));
    }
    let init = model(cfg)?.init_params(cfg.sft.seed);
    let sft = sft_stage(cfg, &records, None)?;
    let rga = align_stage(cfg, sft.clone(), &records, false, None)?;
    let rid = align_stage(cfg, sft.clone(), &records, true, None)?;
    let suite = eval_suite(cfg)?;
    let models = AblationModels { init, sft, rga, rid };
    let rows = [&models.init, &models.sft, &models.rga, &models.rid]
        .into_iter()
        .zip(ABLATION_ROWS)
        .map(|(p, name)| Ok(AblationRow { name: name.into(), report: evaluate(cfg, p, &suite)?.0 }))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok((AblationReport { filter, rows }, models))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    Ok(Checkpoint::load(path)?)
}

#[cfg(test)]
mod tests;
