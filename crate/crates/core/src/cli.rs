//! `phantom` command line: train, eval, ablate-k, plot.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure
//! (including divergence).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::config::CliConfig;
use crate::error::{Error, Result};
use crate::metrics::{self, Summary};
use crate::plot;
use crate::trainer::{self, Method, TrainOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Debug, Parser)]
#[command(name = "phantom", version, about = "Phantom-embedding regularized training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write config, metrics, summary and checkpoint.
    Train(RunFlags),
    /// Re-evaluate a run directory (or checkpoint + config) on its test split.
    Eval(EvalArgs),
    /// One phantom run per K, summarized into ablation.csv.
    AblateK(AblateArgs),
    /// SVG curves of train loss, test loss and test accuracy.
    Plot(PlotArgs),
}

#[derive(Debug, Default, Args)]
pub struct RunFlags {
    /// JSON file with flat dotted keys; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    /// fashion | cifar10 | two-moons | blobs
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub beta_a: Option<f64>,
    #[arg(long)]
    pub beta_b: Option<f64>,
    /// plus | minus
    #[arg(long)]
    pub sign: Option<String>,
    /// Fixed alpha instead of Beta draws.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    /// Record wall-clock seconds in metrics.csv.
    #[arg(long)]
    pub wall_time: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// Comma-separated cluster sizes, e.g. 1,2,3,4
    #[arg(long, value_delimiter = ',')]
    pub k_list: Vec<usize>,
    /// Run the K values on separate threads.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub labels: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Builds the effective config: defaults, then `--config`, then flags.
pub fn resolve_config(flags: &RunFlags) -> Result<CliConfig> {
    let mut cfg = match &flags.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(v) = &flags.preset {
        cfg.preset = v.parse()?;
    }
    if let Some(v) = &flags.method {
        cfg.method = v.parse()?;
    }
    if let Some(v) = &flags.data {
        cfg.data = v.parse()?;
    }
    if let Some(v) = &flags.data_dir {
        cfg.data_dir = Some(v.clone());
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = &flags.out {
        cfg.out = v.clone();
    }
    if let Some(v) = flags.k {
        cfg.k = v;
    }
    if let Some(v) = flags.beta_a {
        cfg.beta_a = v;
    }
    if let Some(v) = flags.beta_b {
        cfg.beta_b = v;
    }
    if let Some(v) = &flags.sign {
        cfg.sign = v.parse()?;
    }
    if let Some(v) = flags.alpha {
        cfg.alpha_override = Some(v);
    }
    match (flags.epochs, flags.iters) {
        (Some(e), None) => {
            cfg.epochs = Some(e);
            cfg.iters = None;
        }
        (e, Some(i)) => {
            cfg.iters = Some(i);
            if e.is_some() {
                cfg.epochs = e;
            }
        }
        (None, None) => {}
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.lr0 {
        cfg.lr0 = v;
    }
    if flags.wall_time {
        cfg.wall_time = true;
    }
    cfg.resolve_paths()?;
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("--out {}: {e}", dir.display())))
}

/// Trains per `cfg` and writes the four run artifacts into `cfg.out`.
pub fn train_to_dir(cfg: &CliConfig) -> Result<TrainOutcome> {
    let train_cfg = cfg.train_config()?;
    create_dir(&cfg.out)?;
    let (train, test) = cfg.load_datasets()?;
    let spec = cfg.preset.spec(train.sample_shape(), train.num_classes())?;
    let out_path = |f: &str| cfg.out.join(f);
    fs::write(out_path(CONFIG_FILE), cfg.to_json()?).map_err(|e| Error::io(out_path(CONFIG_FILE), e))?;

    let outcome = trainer::run_training(spec, &train, &test, &train_cfg)?;

    metrics::write_metrics_csv(&outcome.records, out_path(METRICS_FILE))?;
    metrics::write_summary_json(
        &outcome.summary,
        serde_json::json!({
            "method": train_cfg.method,
            "seed": train_cfg.seed,
            "k": train_cfg.cluster_k(),
        }),
        out_path(SUMMARY_FILE),
    )?;
    checkpoint::save(&outcome.model, out_path(CHECKPOINT_FILE))?;
    Ok(outcome)
}

pub fn cmd_train(flags: &RunFlags) -> Result<Summary> {
    let cfg = resolve_config(flags)?;
    log::info!("training {:?} on {} -> {}", cfg.resolved_method()?, cfg.data, cfg.out.display());
    let outcome = train_to_dir(&cfg)?;
    Ok(outcome.summary)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(f64, f64)> {
    let (ckpt, cfg_path) = match (&args.run, &args.checkpoint, &args.config) {
        (Some(run), None, None) => (run.join(CHECKPOINT_FILE), run.join(CONFIG_FILE)),
        (None, Some(c), Some(f)) => (c.clone(), f.clone()),
        _ => {
            return Err(Error::Config(
                "eval: pass either --run DIR or both --checkpoint and --config".into(),
            ))
        }
    };
    let mut cfg = CliConfig::load(&cfg_path)?;
    if let Some(d) = &args.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    cfg.resolve_paths()?;
    let model = checkpoint::load(&ckpt)?;
    let (train, test) = cfg.load_datasets()?;
    let policy = trainer::train_policy(&train, false)?;
    trainer::evaluate(&model, &test, &policy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub k: usize,
    pub summary: std::result::Result<Summary, String>,
}

pub fn cmd_ablate_k(args: &AblateArgs) -> Result<Vec<AblationRow>> {
    if args.k_list.is_empty() {
        return Err(Error::Config("--k-list: at least one K is required".into()));
    }
    let base = resolve_config(&args.run)?;
    create_dir(&base.out)?;
    let run_one = |k: usize| -> AblationRow {
        let mut cfg = base.clone();
        cfg.method = Method::Phantom;
        cfg.baseline = crate::config::BaselineMethod::None;
        cfg.k = k;
        cfg.out = base.out.join(format!("k{k}"));
        let summary = train_to_dir(&cfg).map(|o| o.summary).map_err(|e| {
            log::error!("K={k}: {e}");
            e.to_string()
        });
        AblationRow { k, summary }
    };
    let rows: Vec<AblationRow> = if args.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = args.k_list.iter().map(|&k| s.spawn(move || run_one(k))).collect();
            handles
                .into_iter()
                .zip(&args.k_list)
                .map(|(h, &k)| {
                    h.join().unwrap_or_else(|_| AblationRow {
                        k,
                        summary: Err("worker panicked".into()),
                    })
                })
                .collect()
        })
    } else {
        args.k_list.iter().map(|&k| run_one(k)).collect()
    };

    let path = base.out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["k", "final_acc", "mean5_acc", "max5_acc", "status"])?;
    for row in &rows {
        match &row.summary {
            Ok(s) => w.write_record([
                row.k.to_string(),
                s.final_acc.to_string(),
                s.mean5_acc.to_string(),
                s.max5_acc.to_string(),
                "ok".to_string(),
            ])?,
            Err(e) => w.write_record([row.k.to_string(), String::new(), String::new(), String::new(), format!("error: {e}")])?,
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

pub fn cmd_plot(args: &PlotArgs) -> Result<Vec<PathBuf>> {
    if !args.labels.is_empty() && args.labels.len() != args.metrics.len() {
        return Err(Error::Config(format!(
            "--labels: {} labels for {} metrics files",
            args.labels.len(),
            args.metrics.len()
        )));
    }
    let mut runs = Vec::new();
    for (i, path) in args.metrics.iter().enumerate() {
        let label = args.labels.get(i).cloned().unwrap_or_else(|| {
            path.parent()
                .and_then(|p| p.file_name())
                .or_else(|| path.file_stem())
                .map_or_else(|| format!("run{i}"), |s| s.to_string_lossy().into_owned())
        });
        runs.push((label, metrics::read_metrics_csv(path)?));
    }
    plot::plot_runs(&runs, &args.out)
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Train(flags) => cmd_train(flags).map(|s| {
            println!(
                "final_acc={:.4} mean5_acc={:.4} max5_acc={:.4}",
                s.final_acc, s.mean5_acc, s.max5_acc
            );
        }),
        Command::Eval(args) => cmd_eval(args).map(|(loss, acc)| {
            println!("{}", serde_json::json!({ "test_loss": loss, "test_acc": acc }));
        }),
        Command::AblateK(args) => cmd_ablate_k(args).map(|rows| {
            for r in rows {
                match r.summary {
                    Ok(s) => println!("K={} final_acc={:.4} mean5_acc={:.4} max5_acc={:.4}", r.k, s.final_acc, s.mean5_acc, s.max5_acc),
                    Err(e) => println!("K={} failed: {e}", r.k),
                }
            }
        }),
        Command::Plot(args) => cmd_plot(args).map(|paths| {
            for p in paths {
                println!("{}", p.display());
            }
        }),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
