use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use leocache::runner::{self, RunOptions, Scheme};

#[derive(Parser)]
#[command(name = "leocache", version, about = "LEO satellite edge caching simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one scheme.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Override the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// gtsac, sac_neighbor, pcf or cloud.
        #[arg(long)]
        scheme: Option<Scheme>,
        /// Cache capacity per satellite.
        #[arg(long)]
        capacity: Option<usize>,
        /// Requests per satellite per slot.
        #[arg(long)]
        per_sat: Option<usize>,
        /// Evaluate a saved checkpoint without training.
        #[arg(long, requires = "checkpoint")]
        eval_only: bool,
        #[arg(long, requires = "eval_only")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dump_graphs: bool,
        #[arg(long)]
        dump_requests: bool,
    },
    /// Aggregate evaluation results of finished runs into one CSV table.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> leocache::Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            episodes,
            scheme,
            capacity,
            per_sat,
            eval_only,
            checkpoint,
            dump_graphs,
            dump_requests,
        } => {
            let mut cfg = runner::load_config(&config)?;
            let exp = &mut cfg.experiment;
            if let Some(s) = seed {
                exp.seed = s;
            }
            if let Some(e) = episodes {
                exp.episodes = e;
            }
            if let Some(s) = scheme {
                exp.scheme = s;
            }
            if let Some(c) = capacity {
                exp.capacity = c;
            }
            if let Some(p) = per_sat {
                exp.requests_per_sat = p;
            }
            if eval_only {
                exp.episodes = 0;
            }
            let opts = RunOptions {
                checkpoint,
                dump_graphs,
                dump_requests,
            };
            let summary = runner::run(&cfg, &out, &opts)?;
            let e = summary.eval;
            println!(
                "{} C={} per_sat={}: eval success {:.4}, update traffic {:.4e} bits/slot, reward {:.4}",
                summary.scheme, summary.capacity, summary.per_sat, e.success_rate, e.traffic_update, e.reward
            );
        }
        Command::Compare { dirs, out } => {
            for r in runner::compare(&dirs, &out)? {
                println!(
                    "{:<13} C={} per_sat={} runs={} success {:.4} update {:.4e}",
                    r.scheme.as_str(),
                    r.capacity,
                    r.per_sat,
                    r.runs,
                    r.success_rate,
                    r.traffic_update
                );
            }
        }
    }
    Ok(())
}
