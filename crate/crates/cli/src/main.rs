//! `allqa`: train, evaluate and dissect all-purpose QA models.

mod data;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use allqa::data::{synthetic_records, write_synthetic, Split, SyntheticSpec, SyntheticTask};
use allqa::eval::{evaluate_detailed, write_outcomes_tsv};
use allqa::headlens::{
    compare_tasks, layer_summary, rank_heads, read_importance_csv, render_heatmap_svg, write_importance_csv,
    MetricKind,
};
use allqa::model::{load_checkpoint, HeadMask, ModelConfig};
use allqa::training::{train, Hyperparameters, Init};
use allqa::Error;
use anyhow::bail;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use data::{load_dir, load_file, TaskArg};

#[derive(Parser)]
#[command(name = "allqa", version, about = "All-purpose QA models and attention head importance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint, optionally with heads masked.
    Eval(EvalArgs),
    /// Leave-one-out head importance as CSV.
    RankHeads(RankArgs),
    /// Compare two importance CSVs of the same checkpoint.
    Compare(CompareArgs),
    /// Render an importance CSV as an SVG heatmap.
    Plot(PlotArgs),
    /// Write a synthetic dataset as JSON lines.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long)]
    data_dir: PathBuf,
    /// JSON file with hyperparameters and model geometry; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from this checkpoint instead of random weights.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    sequence_length: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    task: TaskArg,
    #[arg(long)]
    data: PathBuf,
    /// Heads to mask as "layer:head,layer:head"; empty keeps all.
    #[arg(long, default_value = "")]
    mask: String,
    /// Also write per-sample predictions as TSV.
    #[arg(long)]
    per_sample: Option<PathBuf>,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long)]
    data: PathBuf,
    /// accuracy or f1; defaults to the task's metric.
    #[arg(long)]
    metric: Option<MetricKind>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Per-layer summary; defaults to `<out stem>.layer_summary.json`.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum SynthTask {
    A,
    B,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, ignore_case = true)]
    task: SynthTask,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 24)]
    context_len: usize,
    #[arg(long, default_value_t = 3)]
    answer_len: usize,
    #[arg(long, default_value_t = 0.8)]
    answerable_fraction: f64,
}

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainConfig {
    task: TaskArg,
    data_dir: PathBuf,
    init: Option<PathBuf>,
    out: PathBuf,
    layers: usize,
    hidden: usize,
    heads: usize,
    #[serde(flatten)]
    hp: Hyperparameters,
}

const MODEL_KEYS: [&str; 3] = ["layers", "hidden", "heads"];

fn resolve_train(args: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg = serde_json::to_value(Hyperparameters::toy())?;
    let obj = cfg.as_object_mut().unwrap();
    for (k, v) in MODEL_KEYS.iter().zip([2, 128, 2]) {
        obj.insert(k.to_string(), json!(v));
    }
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Value = serde_json::from_str(&text).map_err(Error::from)?;
        let Value::Object(file) = file else {
            return Err(Error::Usage(format!("{} must hold a JSON object", path.display())).into());
        };
        for (k, v) in file {
            if !obj.contains_key(&k) {
                return Err(Error::Usage(format!("unknown config key {k:?} in {}", path.display())).into());
            }
            obj.insert(k, v);
        }
    }
    let flags = [
        ("seed", args.seed.map(|v| json!(v))),
        ("epochs", args.epochs.map(|v| json!(v))),
        ("learning_rate", args.learning_rate.map(|v| json!(v))),
        ("batch_size", args.batch_size.map(|v| json!(v))),
        ("sequence_length", args.sequence_length.map(|v| json!(v))),
        ("layers", args.layers.map(|v| json!(v))),
        ("hidden", args.hidden.map(|v| json!(v))),
        ("heads", args.heads.map(|v| json!(v))),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            obj.insert(k.into(), v);
        }
    }
    obj.insert("task".into(), json!(args.task));
    obj.insert("data_dir".into(), json!(args.data_dir));
    obj.insert("init".into(), json!(args.init));
    obj.insert("out".into(), json!(args.out));
    let cfg: TrainConfig = serde_json::from_value(cfg).map_err(|e| Error::Usage(format!("config: {e}")))?;
    cfg.hp.validate()?;
    Ok(cfg)
}

fn announce(command: &str, config: &impl Serialize) {
    let text = serde_json::to_string(config).unwrap_or_default();
    eprintln!("allqa {command}: {text}");
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = resolve_train(&args)?;
    let source = cfg.init.as_deref().map(load_checkpoint).transpose()?;
    if let Some((model, _)) = &source {
        cfg.layers = model.config.n_layers;
        cfg.hidden = model.config.hidden_dim;
        cfg.heads = model.config.n_heads;
    }
    announce("train", &cfg);
    let seq = cfg.hp.max_seq_len;
    let seed = cfg.hp.seed;
    let Some(train_set) = load_dir(&cfg.data_dir, cfg.task, Split::Train, seq, seed)? else {
        bail!(Error::Usage(format!("no {:?} training data under {}", cfg.task, cfg.data_dir.display())));
    };
    let dev = load_dir(&cfg.data_dir, cfg.task, Split::Dev, seq, seed)?;
    eprintln!(
        "allqa train: {} training samples ({} spans downgraded by truncation), {} dev samples",
        train_set.len(),
        train_set.downgraded,
        dev.as_ref().map_or(0, |d| d.len())
    );
    let init = match &source {
        Some((model, _)) => {
            if model.config.max_seq_len < seq {
                bail!(Error::Usage(format!(
                    "checkpoint max_seq_len {} is below sequence_length {seq}",
                    model.config.max_seq_len
                )));
            }
            Init::Transfer(model)
        }
        None => Init::Random(ModelConfig::new(cfg.task.regime(), cfg.layers, cfg.hidden, cfg.heads, seq)),
    };
    let (_, report) = train(cfg.task.regime(), &train_set, dev.as_ref(), &cfg.hp, init, Some(&cfg.out))?;
    for e in &report.epochs {
        eprintln!("allqa train: epoch {} mean loss {:.6}", e.epoch, e.mean_loss);
    }
    eprintln!("allqa train: {:.1}s wall clock", report.wall_clock_secs);
    let mut value = serde_json::to_value(&report)?;
    if let Value::Object(obj) = &mut value {
        obj.remove("wall_clock_secs");
        obj.insert("config".into(), serde_json::to_value(&cfg)?);
    }
    write_json(&cfg.out.join("train_report.json"), &value)
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let (model, _) = load_checkpoint(&args.ckpt)?;
    let mask = HeadMask::parse(&args.mask, &model.config)?;
    announce(
        "eval",
        &json!({"ckpt": args.ckpt, "task": args.task, "data": args.data, "mask": mask.masked_heads()}),
    );
    let ds = args.task.restrict(load_file(&args.data, Split::Dev, model.config.max_seq_len)?);
    let (metrics, outcomes) = evaluate_detailed(&model, &ds, Some(&mask))?;
    if let Some(path) = &args.per_sample {
        write_outcomes_tsv(path, &outcomes)?;
    }
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

fn default_summary(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "importance".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.layer_summary.json"))
}

fn cmd_rank_heads(args: RankArgs) -> anyhow::Result<()> {
    let metric = match (args.metric, args.task) {
        (Some(m), _) => m,
        (None, TaskArg::Boolq) => MetricKind::Accuracy,
        (None, TaskArg::Squad) => MetricKind::F1,
        (None, TaskArg::All) => bail!(Error::Usage("--metric is required with --task all".into())),
    };
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        bail!(Error::Usage("--jobs must be at least 1".into()));
    }
    let summary = args.summary.clone().unwrap_or_else(|| default_summary(&args.out));
    announce(
        "rank-heads",
        &json!({"ckpt": args.ckpt, "task": args.task, "data": args.data, "metric": metric.name(),
                "jobs": jobs, "out": args.out, "summary": summary}),
    );
    let (model, _) = load_checkpoint(&args.ckpt)?;
    let ds = args.task.restrict(load_file(&args.data, Split::Dev, model.config.max_seq_len)?);
    let m = rank_heads(&model, &ds, metric, jobs)?;
    write_importance_csv(&args.out, &m)?;
    write_json(&summary, &layer_summary(&m))
}

fn cmd_compare(args: CompareArgs) -> anyhow::Result<()> {
    announce("compare", &json!({"a": args.a, "b": args.b, "out": args.out}));
    let a = read_importance_csv(&args.a)?;
    let b = read_importance_csv(&args.b)?;
    let report = compare_tasks(&a, &b)?;
    let value = json!({"a": args.a, "b": args.b, "metric_a": a.metric.name(), "metric_b": b.metric.name(),
                       "comparison": report});
    write_json(&args.out, &value)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> anyhow::Result<()> {
    announce("plot", &json!({"in": args.input, "out": args.out}));
    let m = read_importance_csv(&args.input)?;
    std::fs::write(&args.out, render_heatmap_svg(&m)).map_err(|e| Error::io(&args.out, e))?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        context_len: args.context_len,
        answer_len: args.answer_len,
        answerable_fraction: args.answerable_fraction,
        ..SyntheticSpec::new(args.n, args.seed)
    };
    announce("synth", &json!({"task": args.task, "out": args.out, "spec": spec}));
    let task = match args.task {
        SynthTask::A => SyntheticTask::A,
        SynthTask::B => SyntheticTask::B,
    };
    write_synthetic(&args.out, &synthetic_records(&spec, task)?)?;
    Ok(())
}

/// 3 for numeric failures, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .filter_map(|e| e.downcast_ref::<Error>())
        .any(Error::is_numeric);
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::RankHeads(a) => cmd_rank_heads(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
