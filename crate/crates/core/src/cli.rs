//! `even` command line: argument parsing, config resolution and exit codes.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::depth::InputKind;
use crate::error::{Error, Result};
use crate::evaluate::{format_crossval_table, format_table, CrossValResult, MetricsReport};
use crate::pipeline::Run;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "even",
    version,
    about = "Night-time depth estimation with event/enhanced-image fusion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output root; the run lands in `<DIR>/<run_id>/`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Render the synthetic night-driving dataset.
    GenData,
    /// Fit (or materialize) the low-light enhancer.
    TrainEnhance,
    /// Train fusion networks for the fused kinds in `eval.kinds`.
    TrainFusion,
    /// Write fusion images next to every sample.
    ExportFusion,
    /// Train depth networks for `eval.kinds`.
    TrainDepth,
    /// Score depth networks on the test split.
    Eval,
    /// Train and score all seven input kinds.
    Baselines,
    /// Weather-split cross-validation of the full method.
    Crossval,
    /// gen-data, train-enhance, train-fusion, export-fusion, train-depth, eval.
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainEnhance => "train-enhance",
            Command::TrainFusion => "train-fusion",
            Command::ExportFusion => "export-fusion",
            Command::TrainDepth => "train-depth",
            Command::Eval => "eval",
            Command::Baselines => "baselines",
            Command::Crossval => "crossval",
            Command::All => "all",
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::MissingArtifact { .. } => EXIT_MISSING,
        _ => EXIT_RUNTIME,
    }
}

/// Defaults, then `--config`, then `--seed`, then each `--set`, then `--out`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    for pair in &cli.set {
        cfg.apply_override(pair)?;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// What a command produced, for printing.
#[derive(Debug, Default)]
pub struct Outcome {
    pub run_dir: PathBuf,
    pub report_dir: PathBuf,
    pub rows: Vec<(String, MetricsReport)>,
    pub crossval: Vec<CrossValResult>,
}

pub fn execute(command: Command, config: RunConfig) -> Result<Outcome> {
    let kinds = config.eval_kinds()?;
    let mut run = Run::open(config)?;
    let mut rows = Vec::new();
    let mut crossval = Vec::new();
    match command {
        Command::GenData => {
            run.gen_data()?;
        }
        Command::TrainEnhance => {
            run.train_enhance()?;
        }
        Command::TrainFusion => each(&kinds, |k| run.train_fusion(k))?,
        Command::ExportFusion => each(&kinds, |k| run.export_fusion(k))?,
        Command::TrainDepth => each(&kinds, |k| run.train_depth(k))?,
        Command::Eval => rows = run.evaluate(&kinds)?,
        Command::Baselines => rows = run.baselines()?,
        Command::Crossval => crossval = run.crossval()?,
        Command::All => {
            run.gen_data()?;
            run.train_enhance()?;
            each(&kinds, |k| run.train_fusion(k))?;
            each(&kinds, |k| run.export_fusion(k))?;
            each(&kinds, |k| run.train_depth(k))?;
            rows = run.evaluate(&kinds)?;
        }
    }
    let report_dir = run.write_report(command.name(), &rows, &crossval)?;
    Ok(Outcome {
        run_dir: run.dir.clone(),
        report_dir,
        rows,
        crossval,
    })
}

fn each(kinds: &[InputKind], mut f: impl FnMut(InputKind) -> Result<()>) -> Result<()> {
    kinds.iter().try_for_each(|&k| f(k))
}

/// Parses `args` (including the program name), runs the command and returns the exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let result = resolve_config(&cli).and_then(|cfg| execute(cli.command, cfg));
    match result {
        Ok(out) => {
            println!("run    {}", out.run_dir.display());
            println!("report {}", out.report_dir.display());
            if !out.rows.is_empty() {
                print!("\n{}", format_table(&out.rows));
            }
            if !out.crossval.is_empty() {
                print!("\n{}", format_crossval_table(&out.crossval));
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::MissingArtifact { stage, .. } = &e {
                eprintln!("hint: run `even {stage}` with the same configuration first");
            }
            exit_code(&e)
        }
    }
}
