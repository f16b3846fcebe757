use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;

#[derive(Parser)]
#[command(
    name = "modelpick",
    version,
    about = "Budgeted per-input model selection on a synthetic recognition world"
)]
struct Cli {
    /// Worker threads for parallel evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world from a config and write its snapshot.
    GenWorld {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Snapshot file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an agent; writes checkpoints, steps.csv and manifest.json.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        /// Training config (defaults are used when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint's greedy policy.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Protocol config (defaults are used when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fixed-combination baselines, subset Min/Max rows, the brute-force
    /// best constant combination and a Pareto table.
    Baselines {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Inputs {
    /// World snapshot written by gen-world.
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    pools: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MODELPICK_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::GenWorld { config, seed, out } => commands::gen_world(&config, seed, &out),
        Command::Train {
            inputs,
            config,
            seed,
            out,
        } => commands::train(&inputs.world, &inputs.pools, config.as_deref(), seed, &out),
        Command::Eval {
            inputs,
            checkpoint,
            config,
            out,
        } => commands::eval(
            &inputs.world,
            &inputs.pools,
            &checkpoint,
            config.as_deref(),
            &out,
        ),
        Command::Baselines {
            inputs,
            config,
            out,
        } => commands::baselines(&inputs.world, &inputs.pools, config.as_deref(), &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
