//! The `svq` command line. Exit codes: 0 on success, 1 for usage and
//! configuration errors, 2 for failures while running.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    audit_csv, audit_horizons, config_hash, covering_demo, desk_model, robustness_run,
    run_ablation, run_directory, write_ablation, write_json, write_robustness, write_rows,
    AuditSpec, Axis, CoveringConfig, DatasetSource, ExperimentSpec, VERSION,
};
use crate::data::{self, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, EmbeddingSource, Forecaster, ModelConfig};
use crate::train::{self, Metrics, TrainConfig};

/// Dataset, model and training settings of a single run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub split: SplitSpec,
    pub stride: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            split: SplitSpec::default(),
            stride: 1,
            model: desk_model(),
            train: TrainConfig {
                epochs: 10,
                lr: 1e-3,
                patience: 3,
                ..Default::default()
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "svq",
    version,
    about = "Sparse vector-quantized FFN-free transformer forecaster"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Root directory for results.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and evaluate it on the test split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Evaluate a saved model on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sweep one axis of an experiment specification.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Parameter counts of FFN twins across horizons.
    Params {
        #[command(flatten)]
        common: Common,
    },
    /// Noise-level sweep evaluated on the clean test split.
    Robustness {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Training-fraction sweep.
    Fewshot {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: TrainOverrides,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Nearest-neighbour versus sparse reconstruction of random unit vectors.
    Covering {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        codebook: Option<usize>,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Write token embeddings and the codebook of a saved model as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Which::Pre)]
        which: Which,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Which {
    Pre,
    Post,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                1
            } else {
                2
            }
        }
    }
}

fn load_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
}

fn out_root(common: &Common) -> PathBuf {
    common
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn apply_train_overrides(tc: &mut TrainConfig, o: &TrainOverrides) {
    if let Some(v) = o.epochs {
        tc.epochs = v;
    }
    if let Some(v) = o.lr {
        tc.lr = v;
    }
    if let Some(v) = o.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = o.lambda1 {
        tc.loss.lambda1 = v;
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    split: &'a str,
    seed: u64,
    config_hash: &'a str,
    mse: f64,
    mae: f64,
    smape: f64,
    mase: f64,
    owa: Option<f64>,
    version: &'a str,
}

fn metrics_row<'a>(seed: u64, hash: &'a str, m: &Metrics) -> MetricsRow<'a> {
    MetricsRow {
        split: "test",
        seed,
        config_hash: hash,
        mse: m.mse,
        mae: m.mae,
        smape: m.smape,
        mase: m.mase,
        owa: m.owa,
        version: VERSION,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train {
            common,
            overrides,
            horizon,
        } => {
            let mut rc: RunConfig = load_json(common.config.as_deref())?;
            apply_train_overrides(&mut rc.train, &overrides);
            if let Some(h) = horizon {
                rc.model.horizon = h;
            }
            if let Some(s) = common.seed {
                rc.model.seed = s;
                rc.train.seed = s;
            }
            rc.train.validate()?;
            let series = rc.dataset.load()?;
            rc.model.channels = series.channels;
            rc.model.validate()?;
            let splits = data::make_windows(
                &series,
                &rc.split,
                rc.model.input_length,
                rc.model.horizon,
                rc.stride,
            )?;
            let mut model = Forecaster::new(rc.model.clone())?;
            let report = train::fit(&mut model, &splits.train, &splits.val, &rc.train)?;
            let reference = train::naive2_reference(&splits.test, &splits.train)?;
            let metrics = train::evaluate(&model, &splits.test, &splits.train, Some(&reference))?;
            let hash = config_hash(&serde_json::to_string(&rc)?);
            let dir = run_directory(&out_root(&common), "train")?;
            write_json(&dir.join("config.json"), &rc)?;
            save_checkpoint(&model, dir.join("model.svqm"))?;
            report.write_history_csv(dir.join("history.csv"))?;
            write_rows(
                &dir.join("results.csv"),
                &[metrics_row(rc.train.seed, &hash, &metrics)],
            )?;
            let summary = serde_json::json!({
                "version": VERSION,
                "config_hash": hash,
                "params": model.count_parameters(),
                "training": report.summary_json(),
                "test": metrics,
                "run_dir": dir,
            });
            write_json(&dir.join("summary.json"), &summary)?;
            print_json(&summary)
        }
        Command::Eval { common, checkpoint } => {
            let rc: RunConfig = load_json(common.config.as_deref())?;
            let model = load_checkpoint(&checkpoint)?;
            let cfg = model.config();
            let series = rc.dataset.load()?;
            let splits =
                data::make_windows(&series, &rc.split, cfg.input_length, cfg.horizon, rc.stride)?;
            let reference = train::naive2_reference(&splits.test, &splits.train)?;
            let metrics = train::evaluate(&model, &splits.test, &splits.train, Some(&reference))?;
            if let Some(root) = &common.out_dir {
                let hash = config_hash(&cfg.to_canonical_json());
                let dir = run_directory(root, "eval")?;
                write_json(&dir.join("config.json"), &rc)?;
                write_rows(
                    &dir.join("results.csv"),
                    &[metrics_row(cfg.seed, &hash, &metrics)],
                )?;
                write_json(&dir.join("summary.json"), &metrics)?;
            }
            print_json(&metrics)
        }
        Command::Ablate {
            common,
            overrides,
            repeats,
        } => {
            let spec = sweep_spec(&common, &overrides, repeats, None)?;
            let result = run_ablation(&spec)?;
            let dir = run_directory(&out_root(&common), &spec.name)?;
            write_ablation(&dir, &spec, &result)?;
            finish_sweep(&dir, &result)
        }
        Command::Robustness {
            common,
            overrides,
            repeats,
        } => {
            let spec = sweep_spec(
                &common,
                &overrides,
                repeats,
                Some(Axis::Eta(vec![0.0, 0.01, 0.05, 0.10])),
            )?;
            let (result, table) = robustness_run(&spec)?;
            let dir = run_directory(&out_root(&common), &spec.name)?;
            write_ablation(&dir, &spec, &result)?;
            write_robustness(&dir, &table)?;
            finish_sweep(&dir, &result)
        }
        Command::Fewshot {
            common,
            overrides,
            repeats,
        } => {
            let spec = sweep_spec(
                &common,
                &overrides,
                repeats,
                Some(Axis::FewShot(vec![0.05, 0.10, 1.0])),
            )?;
            let result = run_ablation(&spec)?;
            let dir = run_directory(&out_root(&common), &spec.name)?;
            write_ablation(&dir, &spec, &result)?;
            finish_sweep(&dir, &result)
        }
        Command::Params { common } => {
            let spec: AuditSpec = load_json(common.config.as_deref())?;
            spec.model.validate()?;
            let audit = audit_horizons(&spec)?;
            let csv = audit_csv(&audit)?;
            if let Some(root) = &common.out_dir {
                let dir = run_directory(root, "params")?;
                write_json(&dir.join("config.json"), &spec)?;
                std::fs::write(dir.join("results.csv"), &csv)?;
                write_json(&dir.join("summary.json"), &audit)?;
            }
            print!("{csv}");
            if !audit.strictly_decreasing {
                eprintln!("warning: reduction does not strictly decrease with the horizon");
            }
            Ok(())
        }
        Command::Covering {
            common,
            n,
            codebook,
            t,
            trials,
            epsilon,
        } => {
            let mut cfg: CoveringConfig = load_json(common.config.as_deref())?;
            cfg.n = n.unwrap_or(cfg.n);
            cfg.codebook_size = codebook.unwrap_or(cfg.codebook_size);
            cfg.t = t.unwrap_or(cfg.t);
            cfg.trials = trials.unwrap_or(cfg.trials);
            cfg.epsilon = epsilon.unwrap_or(cfg.epsilon);
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            let report = covering_demo(&cfg)?;
            if let Some(root) = &common.out_dir {
                let dir = run_directory(root, "covering")?;
                write_json(&dir.join("config.json"), &cfg)?;
                write_rows(&dir.join("results.csv"), &[&report.without_config()])?;
                write_json(&dir.join("summary.json"), &report)?;
            }
            print_json(&report)
        }
        Command::ExportEmbeddings {
            common,
            checkpoint,
            which,
        } => {
            let rc: RunConfig = load_json(common.config.as_deref())?;
            let model = load_checkpoint(&checkpoint)?;
            let cfg = model.config();
            let series = rc.dataset.load()?;
            let splits =
                data::make_windows(&series, &rc.split, cfg.input_length, cfg.horizon, rc.stride)?;
            let which = match which {
                Which::Pre => EmbeddingSource::PreQuant,
                Which::Post => EmbeddingSource::PostQuant,
            };
            let dir = run_directory(&out_root(&common), "export-embeddings")?;
            let codebook_path = dir.join("codebook.csv");
            let (rows, cols, codewords) = model.export_embeddings(
                &splits.test,
                which,
                &dir.join("embeddings.csv"),
                Some(&codebook_path),
            )?;
            let summary = serde_json::json!({
                "embeddings": rows,
                "dim": cols,
                "codewords": codewords,
                "source": which,
                "run_dir": dir,
            });
            write_json(&dir.join("summary.json"), &summary)?;
            print_json(&summary)
        }
    }
}

fn sweep_spec(
    common: &Common,
    overrides: &TrainOverrides,
    repeats: Option<usize>,
    axis: Option<Axis>,
) -> Result<ExperimentSpec> {
    let mut spec: ExperimentSpec = load_json(common.config.as_deref())?;
    if let Some(axis) = axis {
        if common.config.is_none() {
            spec.name = axis.name().to_string();
            spec.axis = axis;
        } else if std::mem::discriminant(&spec.axis) != std::mem::discriminant(&axis) {
            return Err(Error::Config(format!(
                "this command sweeps {}, the configuration sweeps {}",
                axis.name(),
                spec.axis.name()
            )));
        }
    }
    apply_train_overrides(&mut spec.train, overrides);
    if let Some(r) = repeats {
        spec.repeats = r;
    }
    if let Some(s) = common.seed {
        spec.seed_base = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn finish_sweep(dir: &Path, result: &super::AblationResult) -> Result<()> {
    print!("{}", std::fs::read_to_string(dir.join("results.csv"))?);
    eprintln!("results written to {}", dir.display());
    if result.incomplete {
        eprintln!("warning: some cells failed; see summary.json");
    }
    Ok(())
}
