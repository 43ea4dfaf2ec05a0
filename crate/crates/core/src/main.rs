use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mocap_fuse::pipeline::{run, PipelineConfig, RunContext, RunError, Stage};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Simulate,
    Sync,
    Calibrate,
    Triangulate,
    Fit,
    Evaluate,
    Pipeline,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Self {
        match c {
            Command::Simulate => Stage::Simulate,
            Command::Sync => Stage::Sync,
            Command::Calibrate => Stage::Calibrate,
            Command::Triangulate => Stage::Triangulate,
            Command::Fit => Stage::Fit,
            Command::Evaluate => Stage::Evaluate,
            Command::Pipeline => Stage::Pipeline,
        }
    }
}

/// Motion-capture fusion: sync, calibrate, triangulate, fit and evaluate.
///
/// Log level is read from MOCAP_FUSE_LOG (default "info").
/// Exit codes: 0 ok, 2 bad config or input, 3 fit did not converge, 4 internal error.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Simulator seed (same as --set simulate.seed=N).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted config override, e.g. --set fit.weights.prior=0. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for frame-parallel work.
    #[arg(long)]
    jobs: Option<usize>,
}

fn execute(cli: Cli) -> Result<(), RunError> {
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        overrides.push(format!("simulate.seed={seed}"));
    }
    let config = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| RunError::Internal(e.to_string()))?;
    }
    let ctx = RunContext::new(config, cli.out, cli.jobs)?;
    let manifest = run(cli.command.into(), &ctx)?;
    for s in &manifest.stages {
        log::info!("{} {:.2} s -> {}", s.stage, s.seconds, s.artifacts.join(", "));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOCAP_FUSE_LOG", "info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
