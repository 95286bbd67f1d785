use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use semiblind_crb::commands::{self, CliError, CommandOutput, Overrides};
use semiblind_crb::config::{OutputFormat, RunConfig};

#[derive(Parser)]
#[command(name = "semiblind-crb", version, about = "Cramér-Rao bounds for semi-blind channel estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Channel bound for one configuration.
    Compute(CommonArgs),
    /// Bound over a gamma, pilot-count or precoder sweep (CSV by default).
    Sweep(CommonArgs),
    /// LS attainability experiment on an all-pilot configuration.
    Simulate(CommonArgs),
    /// Finite-difference and Monte-Carlo consistency checks.
    Verify(CommonArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output file; defaults to `output.path` from the config, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this value.
    #[arg(long)]
    threads: Option<usize>,
}

type Handler = fn(&RunConfig) -> Result<CommandOutput, CliError>;

fn run(args: &CommonArgs, cmd: Handler) -> Result<i32, CliError> {
    let mut cfg = RunConfig::load(&args.config).map_err(|e| CliError::Config(e.to_string()))?;
    Overrides {
        format: args.format.map(|f| match f {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
        }),
        trials: args.trials,
        seed: args.seed,
    }
    .apply(&mut cfg);
    let out = commands::with_threads(args.threads, || cmd(&cfg))?;
    match args.out.as_deref().or(cfg.output.path.as_deref()) {
        Some(path) => write(path, &out.text)?,
        None => print!("{}", out.text),
    }
    Ok(out.exit_code)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, cmd): (&CommonArgs, Handler) = match &cli.command {
        Command::Compute(a) => (a, commands::cmd_compute),
        Command::Sweep(a) => (a, commands::cmd_sweep),
        Command::Simulate(a) => (a, commands::cmd_simulate),
        Command::Verify(a) => (a, commands::cmd_verify),
    };
    let code = match run(args, cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
