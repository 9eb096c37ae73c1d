use clap::{Parser, Subcommand};
use std::path::PathBuf;
use vortexflow::cli;

#[derive(Parser)]
#[command(
    name = "vortexflow",
    about = "Gradient flow of the abelian vortex functional on flat tori and rectangles",
    version
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gradient flow with the configured integrator.
    Flow(CommonArgs),
    /// Run the gauge-invariant scalar h-flow.
    Hflow(CommonArgs),
    /// Newton-project the initial state onto the vortex equation.
    Project(CommonArgs),
    /// Solve short-time windows by the Picard contraction iteration.
    Picard(CommonArgs),
    /// Run the finite-dimensional moment-map flow on Cⁿ.
    Oracle(CommonArgs),
    /// Run the built-in verification suite.
    Verify(VerifyArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct VerifyArgs {
    /// Optional TOML run configuration (only the seed is used).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(common: &CommonArgs) -> Result<cli::RunConfig, cli::CliError> {
    let mut config = cli::parse_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn dispatch(sub: cli::Subcommand, common: &CommonArgs) -> i32 {
    match load(common) {
        Ok(config) => cli::run(sub, &config),
        Err(e) => {
            eprintln!("{e}");
            1
        }
    }
}

fn main() {
    let _threads = cli::thread_cap();
    let args = Args::parse();
    let code = match &args.command {
        Command::Flow(c) => dispatch(cli::Subcommand::Flow, c),
        Command::Hflow(c) => dispatch(cli::Subcommand::Hflow, c),
        Command::Project(c) => dispatch(cli::Subcommand::Project, c),
        Command::Picard(c) => dispatch(cli::Subcommand::Picard, c),
        Command::Oracle(c) => dispatch(cli::Subcommand::Oracle, c),
        Command::Verify(v) => {
            let seed = match (&v.config, v.seed) {
                (_, Some(seed)) => seed,
                (Some(path), None) => match cli::parse_config(path) {
                    Ok(cfg) => cfg.seed,
                    Err(e) => {
                        eprintln!("{e}");
                        std::process::exit(1);
                    }
                },
                (None, None) => 42,
            };
            cli::run_verify(seed)
        }
    };
    std::process::exit(code);
}
