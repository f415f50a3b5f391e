use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tilesel::baselines::Method;
use tilesel::harness::{
    cost_report, run_experiment, sweep_lambda, train_policy, BudgetSpec, ExperimentConfig,
    ExperimentReport, MethodSpec,
};
use tilesel::world::{generate_world, save_world};
use tilesel::{Error, Result};
use tilesel_cli::{exit_code, init_logging, load_gen_config, report, set_threads};

/// Adaptive high-resolution tile acquisition: training, baselines and reports.
#[derive(Parser)]
#[command(name = "tilesel", version)]
struct Cli {
    /// Config file (JSON). Generation settings for `generate-world`,
    /// an experiment config for every other command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed: world seed for `generate-world`, policy seed for
    /// `train-policy`, the seed list for the evaluation commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config's `out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct WorldArg {
    /// World file; overrides the config's world block.
    #[arg(long)]
    world: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world file.
    GenerateWorld {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one policy and save its checkpoints and history.
    TrainPolicy {
        #[command(flatten)]
        world: WorldArg,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Evaluate every configured method; trains per seed unless a checkpoint is given.
    Eval {
        #[command(flatten)]
        world: WorldArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a single selection method.
    RunBaseline {
        #[command(flatten)]
        world: WorldArg,
        #[arg(long)]
        method: Method,
        #[arg(long, conflicts_with_all = ["k", "matched"])]
        fraction: Option<f64>,
        #[arg(long, conflicts_with = "matched")]
        k: Option<usize>,
        /// Match the trained policy's per-cluster tile count.
        #[arg(long)]
        matched: bool,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train across λ values and write the trade-off table.
    SweepLambda {
        #[command(flatten)]
        world: WorldArg,
        /// Comma-separated; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
    },
    /// Cost of full versus adaptive acquisition.
    CostReport {
        #[arg(long)]
        area: f64,
        #[arg(long)]
        price: f64,
        #[arg(long)]
        fraction: f64,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn experiment_config(cli: &Cli, world: Option<&WorldArg>) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io { path, source } => {
                Error::Config(format!("cannot read {}: {source}", path.display()))
            }
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = world.and_then(|w| w.world.clone()) {
        cfg.world.path = Some(p);
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn print_summary(report: &ExperimentReport, out: &Path) {
    println!("config_hash {}", report.config_hash);
    for r in &report.summary {
        let label = if r.budget.is_empty() {
            r.method.to_string()
        } else {
            format!("{} [{}]", r.method, r.budget)
        };
        println!(
            "{label:<32} r2 {:.4} ± {:.4}  fraction {:.3}  l1 gap {:.2}",
            r.r2.mean, r.r2.std, r.acquisition_fraction.mean, r.mean_l1_gap.mean
        );
    }
    println!("reports in {}", out.display());
}

fn run(cli: &Cli) -> Result<()> {
    set_threads(cli.threads)?;
    match &cli.cmd {
        Command::GenerateWorld { out } => {
            let gen = load_gen_config(cli.config.as_deref())?;
            let seed = cli.seed.unwrap_or(0);
            let world = generate_world(&gen, seed)?;
            save_world(&world, out)?;
            println!("wrote {} ({} clusters, seed {seed})", out.display(), world.clusters.len());
        }
        Command::TrainPolicy { world, out, lambda } => {
            let mut cfg = experiment_config(cli, Some(world))?;
            if let Some(d) = out {
                cfg.out_dir = d.clone();
            }
            if let Some(l) = lambda {
                cfg.train.lambda = *l;
            }
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            let outcome = train_policy(&cfg)?;
            if let Some(last) = outcome.history.records.last() {
                println!(
                    "epoch {}: reward {:.4} fraction {:.3} l1 gap {:.3}",
                    last.epoch, last.mean_reward, last.acq_fraction, last.mean_l1_gap
                );
            }
            println!(
                "checkpoint {}",
                cfg.out_dir
                    .join("checkpoints")
                    .join(format!("seed_{}", cfg.train.seed))
                    .join("final.json")
                    .display()
            );
        }
        Command::Eval { world, checkpoint } => {
            let mut cfg = experiment_config(cli, Some(world))?;
            if let Some(c) = checkpoint {
                cfg.policy_checkpoint = Some(c.clone());
            }
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let report = run_experiment(&cfg)?;
            print_summary(&report, &cfg.out_dir);
        }
        Command::RunBaseline {
            world,
            method,
            fraction,
            k,
            matched,
            out,
        } => {
            let mut cfg = experiment_config(cli, Some(world))?;
            if let Some(d) = out {
                cfg.out_dir = d.clone();
            }
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let budget = match (fraction, k, matched) {
                (Some(f), _, _) => Some(BudgetSpec::Fraction(*f)),
                (_, Some(k), _) => Some(BudgetSpec::Tiles(*k)),
                (_, _, true) => Some(BudgetSpec::Matched),
                _ => None,
            };
            cfg.methods = vec![MethodSpec::new(*method, budget)];
            let report = run_experiment(&cfg)?;
            print_summary(&report, &cfg.out_dir);
        }
        Command::SweepLambda { world, lambdas } => {
            let mut cfg = experiment_config(cli, Some(world))?;
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let lambdas = if lambdas.is_empty() {
                cfg.lambdas.clone()
            } else {
                lambdas.clone()
            };
            let table = sweep_lambda(&cfg, &lambdas)?;
            println!("config_hash {}", table.config_hash);
            for (lambda, frac, r2, n) in table.summary() {
                println!("lambda {lambda}: median fraction {frac:.3}  median r2 {r2:.4}  ({n} runs)");
            }
            println!("reports in {}", cfg.out_dir.display());
        }
        Command::CostReport {
            area,
            price,
            fraction,
            out,
        } => {
            let r = cost_report(*area, *price, *fraction)?;
            let csv = format!(
                "area_km2,price_per_km2,acquisition_fraction,full_cost,adaptive_cost,savings\n\
                 {area},{price},{fraction},{},{},{}\n",
                r.full_cost, r.adaptive_cost, r.savings
            );
            print!("{csv}");
            if let Some(p) = out {
                fs::write(p, csv).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            exit_code(&e)
        }
    }
}
