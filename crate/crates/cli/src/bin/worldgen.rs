use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tilesel::world::{generate_world, save_world};
use tilesel_cli::{exit_code, init_logging, load_gen_config, report};

/// Synthetic world generator.
#[derive(Parser)]
#[command(name = "worldgen", version)]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a world and write it as a checksummed JSON file.
    Generate {
        /// Generation settings (JSON); defaults to the full-scale world.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    init_logging();
    let Cmd::Generate { config, seed, out } = Args::parse().cmd;
    let result = load_gen_config(config.as_deref())
        .and_then(|cfg| generate_world(&cfg, seed))
        .and_then(|w| save_world(&w, &out).map(|_| w));
    match result {
        Ok(w) => {
            println!(
                "wrote {} ({} clusters, seed {seed})",
                out.display(),
                w.clusters.len()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            report(&e);
            exit_code(&e)
        }
    }
}
