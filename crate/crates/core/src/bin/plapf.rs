use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plapf::pipeline::{exit_code, run, ExperimentConfig, RunReport, RunStatus, Task};
use plapf::Error;

#[derive(Parser)]
#[command(name = "plapf", version, about = "Graph framelets with p-Laplacian smoothing: verification and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check filter identity, tight frame, Chebyshev round trip and the p = 2 solver oracle
    Verify(Args),
    /// Denoise noisy node features with each configured model
    Denoise(Args),
    /// Node classification by label spreading or a trained linear head
    Classify(Args),
    /// Dataset counts and homophily
    Stats(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Upper bound on worker threads
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: the configured output, else ./plapf-out)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(task: Task, args: &Args) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Config("configuration must be a JSON object".into()))?;
    match obj.get("task").and_then(|t| t.as_str()) {
        Some(t) if t != task.name() => {
            return Err(Error::Config(format!("config task '{t}' does not match command '{}'", task.name())));
        }
        _ => {
            obj.insert("task".into(), task.name().into());
        }
    }
    let base = args.config.parent().unwrap_or(Path::new(""));
    let mut cfg = ExperimentConfig::from_json_str(&value.to_string(), base)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(report: &RunReport, out: &Path) {
    let mut stdout = std::io::stdout().lock();
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    if report.task == Task::Verify || report.task == Task::Stats {
        let _ = write!(stdout, "{}", report.csv());
    }
    let _ = writeln!(stdout, "wrote {} rows to {}", report.rows.len(), out.join("report.csv").display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, args) = match &cli.command {
        Command::Verify(a) => (Task::Verify, a),
        Command::Denoise(a) => (Task::Denoise, a),
        Command::Classify(a) => (Task::Classify, a),
        Command::Stats(a) => (Task::Stats, a),
    };
    let result = load(task, args).and_then(|cfg| {
        let out = args
            .out
            .clone()
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from("plapf-out"));
        let report = run(&cfg)?;
        report.write(&out)?;
        Ok((report, out))
    });
    match result {
        Ok((report, out)) => {
            print_report(&report, &out);
            if report.status == RunStatus::InvariantFailure {
                eprintln!("error: one or more invariant checks failed");
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
