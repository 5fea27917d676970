use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "distopt", about = "Distributed optimization benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; writes trace.csv, summary.json, instance.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Sweep step sizes or RWC cells; writes sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Golden-section tune the algorithm parameter; writes tuned.json.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            quiet,
        } => distopt_cli::cmd_run(&config, &out, seed, quiet),
        Command::Sweep {
            config,
            out,
            seed,
            quiet,
        } => distopt_cli::cmd_sweep(&config, &out, seed, quiet),
        Command::Tune {
            config,
            out,
            seed,
            quiet,
        } => distopt_cli::cmd_tune(&config, &out, seed, quiet),
    };
    std::process::exit(code);
}
