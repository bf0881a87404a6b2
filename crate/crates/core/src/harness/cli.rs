use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use super::*;
use crate::datafactory::{read_jsonl, write_jsonl, write_jsonl_rows};
use crate::embed::surrogate_reward;
use crate::eval::format_table;
use crate::iccot::{parse_trace, render_trace, trace_from_json, trace_to_json};
use crate::model::SampleMode;
use crate::sft::CHECKPOINT_FILE;
use crate::world::caption_of;

#[derive(Debug, Parser)]
#[command(name = "reasoning-flow", version, about = "Reasoning-guided flow generation: data, training, evaluation")]
struct Cli {
    /// JSON config; absent fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stage (overrides the config's seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (overrides paths.run_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a scored dataset and write data.jsonl.
    BuildData {
        #[arg(long)]
        records: Option<usize>,
        /// Fraction of records to corrupt.
        #[arg(long)]
        corruption: Option<f64>,
    },
    /// Filter a dataset by score thresholds; writes filtered.jsonl and filter_report.json.
    Filter {
        #[arg(long)]
        input: PathBuf,
    },
    /// Supervised training on a dataset file.
    TrainSft {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Group-relative alignment starting from a checkpoint.
    TrainAlign {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset whose prompts are used for rollouts.
        #[arg(long)]
        data: PathBuf,
        /// Share one trace across each group.
        #[arg(long)]
        no_rid: bool,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Benchmark a checkpoint on a held-out suite.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        suite_size: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Generate without a reasoning trace.
        #[arg(long)]
        no_cot: bool,
    },
    /// Generate one image for a prompt file ({"refs": [[..]], "instruction": ".."}).
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Use the null-trace path.
        #[arg(long)]
        no_cot: bool,
    },
    /// Parse and validate a trace file (tagged text or JSON) and print both forms.
    InspectCot {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        refs: usize,
    },
    /// Train and evaluate none / SFT / SFT+RGA / SFT+RGA+RID on one suite.
    Ablate {
        #[arg(long)]
        suite_size: Option<usize>,
        #[arg(long)]
        sft_steps: Option<usize>,
        #[arg(long)]
        align_steps: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildData { .. } => "build-data",
            Command::Filter { .. } => "filter",
            Command::TrainSft { .. } => "train-sft",
            Command::TrainAlign { .. } => "train-align",
            Command::Eval { .. } => "eval",
            Command::Infer { .. } => "infer",
            Command::InspectCot { .. } => "inspect-cot",
            Command::Ablate { .. } => "ablate",
        }
    }
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on a domain error, 2 on a usage error.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: Option<u64>,
    version: &'a str,
    config: &'a Config,
    artifacts: Vec<String>,
}

struct Run {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Run {
    fn open(dir: PathBuf) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::Io { path: dir.clone(), source: e })?;
        Ok(Run { dir, artifacts: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), HarnessError> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| HarnessError::Io { path: p, source: e })
    }

    fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(value).expect("artifact serializes") + "\n";
        self.write(name, &text)
    }

    fn finish(mut self, command: &str, seed: Option<u64>, cfg: &Config) -> Result<(), HarnessError> {
        let mut artifacts = std::mem::take(&mut self.artifacts);
        artifacts.sort();
        artifacts.dedup();
        let m = Manifest { command, seed, version: env!("CARGO_PKG_VERSION"), config: cfg, artifacts };
        self.write_json("manifest.json", &m)
    }
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.reseed(s);
    }
    if let Some(o) = &cli.out {
        cfg.paths.run_dir = o.clone();
    }
    let name = cli.command.name();
    if let Command::InspectCot { trace, refs } = &cli.command {
        return inspect_cot(trace, *refs);
    }
    let mut run = Run::open(cfg.paths.run_dir.clone())?;
    match cli.command {
        Command::BuildData { records, corruption } => {
            if let Some(n) = records {
                cfg.data.records = n;
            }
            if let Some(r) = corruption {
                cfg.data.corruption.rate = r;
            }
            cfg.validate()?;
            let recs = build_data(&cfg)?;
            let n = write_jsonl(&recs, &run.path("data.jsonl"))?;
            println!("wrote {n} records to {}", run.dir.join("data.jsonl").display());
        }
        Command::Filter { input } => {
            cfg.validate()?;
            let (kept, report) = filter_dataset(read_jsonl(&input)?, &cfg.filter);
            write_jsonl(&kept, &run.path("filtered.jsonl"))?;
            run.write_json("filter_report.json", &report)?;
            println!("kept {} of {} records ({:.1}% removed)", report.kept, report.total, 100.0 * report.removal_fraction);
        }
        Command::TrainSft { data, steps } => {
            if let Some(s) = steps {
                cfg.sft.steps = s;
            }
            cfg.validate()?;
            let recs = read_jsonl(&data)?;
            run.artifacts.extend([CHECKPOINT_FILE.to_string(), "metrics.jsonl".to_string()]);
            sft_stage(&cfg, &recs, Some(&run.dir))?;
            println!("saved {}", run.dir.join(CHECKPOINT_FILE).display());
        }
        Command::TrainAlign { checkpoint, data, no_rid, steps } => {
            let ck = load_checkpoint(&checkpoint)?;
            cfg.model = ck.model.clone();
            cfg.world = ck.world.clone();
            if let Some(s) = steps {
                cfg.align.steps = s;
            }
            cfg.align.rid_enabled = !no_rid;
            cfg.validate()?;
            let recs = read_jsonl(&data)?;
            run.artifacts.extend([CHECKPOINT_FILE.to_string(), "metrics.jsonl".to_string()]);
            align_stage(&cfg, ck.params, &recs, !no_rid, Some(&run.dir))?;
            println!("saved {}", run.dir.join(CHECKPOINT_FILE).display());
        }
        Command::Eval { checkpoint, suite_size, steps, no_cot } => {
            let ck = load_checkpoint(&checkpoint)?;
            cfg.model = ck.model.clone();
            cfg.world = ck.world.clone();
            if let Some(n) = suite_size {
                cfg.eval.suite_size = n;
            }
            if let Some(k) = steps {
                cfg.eval.steps = k;
            }
            if no_cot {
                cfg.eval.use_cot = false;
            }
            cfg.validate()?;
            let (report, samples) = evaluate(&cfg, &ck.params, &eval_suite(&cfg)?)?;
            write_jsonl_rows(&samples, &run.path("samples.jsonl"))?;
            run.write_json("eval_report.json", &report)?;
            let table = format_table(&report);
            run.write("eval_table.txt", &table)?;
            print!("{table}");
        }
        Command::Infer { checkpoint, prompt, steps, no_cot } => {
            let ck = load_checkpoint(&checkpoint)?;
            cfg.model = ck.model.clone();
            cfg.world = ck.world.clone();
            let prompt: Prompt = serde_json::from_str(&read_text(&prompt)?)
                .map_err(|e| HarnessError::Input(format!("{}: {e}", prompt.display())))?;
            let result = infer(&cfg, &ck, &prompt, steps.unwrap_or(cfg.eval.steps), !no_cot, cli.seed.unwrap_or(cfg.eval.seed))?;
            run.write_json("inference.json", &result)?;
            println!("{}", serde_json::to_string(&result).expect("result serializes"));
        }
        Command::Ablate { suite_size, sft_steps, align_steps } => {
            if let Some(n) = suite_size {
                cfg.eval.suite_size = n;
            }
            if let Some(s) = sft_steps {
                cfg.sft.steps = s;
            }
            if let Some(s) = align_steps {
                cfg.align.steps = s;
            }
            cfg.validate()?;
            let (report, _) = run_ablation(&cfg)?;
            run.write_json("ablation.json", &report)?;
            run.write("ablation.txt", &report.table())?;
            print!("{}", report.table());
        }
        Command::InspectCot { .. } => unreachable!("handled above"),
    }
    run.finish(name, cli.seed, &cfg)
}

#[derive(Debug, Serialize)]
struct Inference {
    trace: Option<String>,
    trace_parsed: bool,
    image: Vec<f64>,
    /// Caption of the decoded image.
    decoded: String,
    /// Surrogate reward of the image against the trace caption, when a trace was used.
    reward: Option<f64>,
}

fn infer(cfg: &Config, ck: &Checkpoint, prompt: &Prompt, steps: usize, use_cot: bool, seed: u64) -> Result<Inference, HarnessError> {
    use rand::SeedableRng;
    if steps == 0 {
        return Err(HarnessError::Invalid("steps must be at least 1".into()));
    }
    let m = Model::from_checkpoint(ck)?;
    let w = world(cfg)?;
    let prep = m.prepare::<f32>(prompt)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let trace = use_cot.then(|| m.sample_trace(&ck.params, &prep, 0.0, &mut rng));
    let g = m.generate(&ck.params, &prep, trace.as_ref().map(|t| t.content()), steps, SampleMode::Ode, &mut rng)?;
    let image = g.image();
    Ok(Inference {
        reward: trace.as_ref().map(|t| surrogate_reward(&w, &image, t.caption()).value),
        trace_parsed: trace.as_ref().is_some_and(|t| t.is_parsed()),
        trace: trace.map(|t| t.text),
        decoded: caption_of(&w.decode(&image), w.config()),
        image: image.0,
    })
}

fn inspect_cot(path: &Path, refs: usize) -> Result<(), HarnessError> {
    let text = read_text(path)?;
    let trace = if text.trim_start().starts_with('{') {
        let t = trace_from_json(&text).map_err(|e| HarnessError::Input(e.to_string()))?;
        if t.num_refs() != refs {
            return Err(HarnessError::Input(format!("trace has {} relations but {refs} references were declared", t.num_refs())));
        }
        t
    } else {
        parse_trace(&text, refs).map_err(|r| HarnessError::Input(format!("invalid trace:\n{r}")))?
    };
    println!("{}", render_trace(&trace));
    println!("{}", trace_to_json(&trace));
    Ok(())
}
