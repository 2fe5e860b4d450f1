use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stage_cil::harness::{cmd_gen, cmd_report, cmd_run, ExperimentConfig, STAGE_METHOD};
use stage_cil::Error;

#[derive(Parser)]
#[command(name = "stagecil", version, about = "Stage-aware class-incremental learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world: train.sfv, test.sfv, truth.json.
    Gen(RunArgs),
    /// Train and evaluate; writes report.json, curve.csv, usage.csv, ledger.json.
    Run(RunArgs),
    /// Recompute every metric from a ledger file.
    Report {
        /// Path to ledger.json.
        ledger: PathBuf,
        /// Also write summary.json and summary.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the world and model seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn prepare(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
        cfg.validate()?;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Failure::Usage("no output directory: pass --out or set output_dir".into()))?;
    Ok((cfg, out))
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen(args) => {
            let (cfg, out) = prepare(&args)?;
            for f in cmd_gen(&cfg, &out, args.force)? {
                println!("wrote {}", show(&f));
            }
        }
        Command::Run(args) => {
            let (cfg, out) = prepare(&args)?;
            let res = cmd_run(&cfg, &out, args.force)?;
            for m in &res.report.methods {
                println!(
                    "{:<10} avg {:.4}  final {:.4}  inter-F {:.4}  intra-F {:.4}",
                    m.method, m.avg_incremental_accuracy, m.final_accuracy, m.inter_forgetting, m.intra_forgetting
                );
            }
            if res.report.method(STAGE_METHOD).is_some() {
                println!("reports in {}", show(&out));
            }
        }
        Command::Report { ledger, out, force } => {
            let summary = cmd_report(&ledger, out.as_deref(), force)?;
            let text = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
            println!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
