use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thermoform_cli::{commands, CliError, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "thermoform", version, about = "Pressure, equilibrium states and stability sweeps for interval maps")]
struct Cli {
    /// Experiment config (sectioned TOML).
    #[arg(long, global = true, default_value = "thermoform.toml")]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write SVG charts.
    #[arg(long, global = true)]
    plot: bool,
    /// Worker threads; overrides `output.threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Sampling seed; overrides `output.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Cylinder partition at depth `run.partition_depth`.
    Partition,
    /// Hofbauer tower and its transitive component (CSV and DOT).
    Tower,
    /// First-return inducing scheme over the base cylinder.
    Induce,
    /// Pressure P(-t log|Df|) for each `run.t`.
    Pressure,
    /// Gibbs state, projected equilibrium measure and density for each `run.t`.
    Equilibrium,
    /// Perturbation ladder sweep for each `run.t`.
    Stability,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.output.plot |= cli.plot;
    if let Some(s) = cli.seed {
        cfg.output.seed = s;
    }
    if let Some(n) = cli.threads.or(cfg.output.threads) {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size thread pool: {e}")))?;
    }
    log::info!("running {:?} for {} with params {:?}", cli.command, cfg.map.family, cfg.map.params);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Partition => commands::cmd_partition(&cfg, &mut out),
        Command::Tower => commands::cmd_tower(&cfg, &mut out),
        Command::Induce => commands::cmd_induce(&cfg, &mut out),
        Command::Pressure => commands::cmd_pressure(&cfg, &mut out),
        Command::Equilibrium => commands::cmd_equilibrium(&cfg, &mut out),
        Command::Stability => commands::cmd_stability(&cfg, &mut out),
    };
    out.flush()?;
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("thermoform: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
