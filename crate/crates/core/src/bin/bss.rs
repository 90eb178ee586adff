use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bss_vision::cli::{self, RunConfig, Task, TrainPaths, SEED_ENV};
use bss_vision::data::Split;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bss", version, about = "Synthetic stool-form segmentation and classification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value config file; see --list-keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config file and BSS_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra key=value overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint to write; the resolved config goes to <out>.cfg.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: PathBuf,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    freeze_prefix: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// train, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    threshold: Option<f32>,
    /// CSV destination; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with a manifest.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        n: Option<usize>,
        /// uniform3, uniform5, uniform7, skewed or 3, 5 or 7 weights w1,w2,...
        #[arg(long)]
        mix: Option<String>,
        #[arg(long)]
        train_frac: Option<f64>,
        #[arg(long)]
        negatives: Option<usize>,
        /// HEIGHTxWIDTH
        #[arg(long)]
        image_size: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the segmentation network.
    TrainSeg(TrainArgs),
    /// Train the classifier.
    TrainCls(TrainArgs),
    /// Per-image IoU and mean IoU of a segmentation checkpoint.
    EvalSeg(EvalArgs),
    /// Confusion matrix and accuracy of a classifier checkpoint.
    EvalCls(EvalArgs),
    /// Probability map and mask for one PPM image.
    PredictSeg {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Probability map PGM, scaled to 0..255.
        #[arg(long)]
        out_prob: PathBuf,
        /// Thresholded mask PGM.
        #[arg(long)]
        out_mask: PathBuf,
        #[arg(long)]
        threshold: Option<f32>,
    },
    /// Class and probabilities for one PPM image.
    PredictCls {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Cohen's kappa between two one-label-per-line files.
    Kappa { a: PathBuf, b: PathBuf },
    /// List every config key with its default for a task.
    ListKeys {
        #[arg(long, default_value = "seg")]
        task: String,
    },
}

fn pairs(set: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    set.iter()
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| bss_vision::Error::Config(format!("--set expects KEY=VALUE, got '{s}'")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Resolves defaults < BSS_SEED < config file < flags. Without --config,
/// a `<checkpoint>.cfg` sidecar is used when present.
fn resolve(
    task: Task,
    args: &ConfigArgs,
    checkpoint: Option<&Path>,
    mut flags: Vec<(String, String)>,
) -> anyhow::Result<RunConfig> {
    let sidecar = checkpoint.map(cli::sidecar_path).filter(|p| p.exists());
    let file = args.config.clone().or(sidecar);
    let env = std::env::var(SEED_ENV).ok();
    let mut over = pairs(&args.set)?;
    if let Some(s) = args.seed {
        flags.push(("seed".into(), s.to_string()));
    }
    flags.append(&mut over);
    Ok(RunConfig::resolve(task, file.as_deref(), env.as_deref(), &flags)?)
}

fn flag<T: ToString>(key: &str, v: &Option<T>) -> Option<(String, String)> {
    v.as_ref().map(|v| (key.to_string(), v.to_string()))
}

fn train(task: Task, a: &TrainArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let flags = [
        flag("epochs", &a.epochs),
        flag("batch_size", &a.batch_size),
        flag("lr", &a.lr),
        flag("augment", &a.augment),
        flag("freeze_prefix", &a.freeze_prefix),
    ];
    let cfg = resolve(task, &a.cfg, None, flags.into_iter().flatten().collect())?;
    let paths = TrainPaths {
        manifest: &a.manifest,
        checkpoint: &a.out,
        history: &a.history,
        init: a.init.as_deref(),
    };
    cli::train(task, &cfg, &paths, out).with_context(|| format!("training on {}", a.manifest.display()))?;
    Ok(())
}

fn eval(task: Task, a: &EvalArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let cfg = resolve(task, &a.cfg, Some(&a.checkpoint), flag("threshold", &a.threshold).into_iter().collect())?;
    let split = match a.split.as_str() {
        "all" => None,
        s => Some(s.parse::<Split>()?),
    };
    cli::eval(task, &cfg, &a.checkpoint, &a.manifest, split, a.report.as_deref(), out)?;
    Ok(())
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    let stdout = std::io::stdout();
    let out = &mut stdout.lock();
    match cmd {
        Cmd::GenData {
            cfg,
            n,
            mix,
            train_frac,
            negatives,
            image_size,
            out: dir,
        } => {
            let flags = [
                flag("data_n", &n),
                flag("data_mix", &mix),
                flag("data_train_frac", &train_frac),
                flag("data_negatives", &negatives),
                flag("image_size", &image_size),
            ];
            let rc = resolve(Task::Seg, &cfg, None, flags.into_iter().flatten().collect())?;
            cli::gen_data(&rc.data, &dir, out)?;
        }
        Cmd::TrainSeg(a) => train(Task::Seg, &a, out)?,
        Cmd::TrainCls(a) => train(Task::Cls, &a, out)?,
        Cmd::EvalSeg(a) => eval(Task::Seg, &a, out)?,
        Cmd::EvalCls(a) => eval(Task::Cls, &a, out)?,
        Cmd::PredictSeg {
            cfg,
            checkpoint,
            image,
            out_prob,
            out_mask,
            threshold,
        } => {
            let rc = resolve(Task::Seg, &cfg, Some(&checkpoint), flag("threshold", &threshold).into_iter().collect())?;
            cli::predict_seg(&rc, &checkpoint, &image, &out_prob, &out_mask, out)?;
        }
        Cmd::PredictCls { cfg, checkpoint, image } => {
            let rc = resolve(Task::Cls, &cfg, Some(&checkpoint), vec![])?;
            cli::predict_cls(&rc, &checkpoint, &image, out)?;
        }
        Cmd::Kappa { a, b } => {
            cli::kappa(&a, &b, out)?;
        }
        Cmd::ListKeys { task } => {
            let rc = RunConfig::defaults(task.parse()?);
            let desc = RunConfig::keys();
            for ((k, v), (_, d)) in rc.entries().iter().zip(desc) {
                writeln!(out, "{k}={v}  # {d}")?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<bss_vision::Error>())
                .map_or(3, bss_vision::Error::exit_code);
            ExitCode::from(code)
        }
    }
}
