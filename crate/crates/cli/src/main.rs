use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use apprentice::harness::{self, ExperimentConfig};
use clap::{Args, Parser, Subcommand};

/// Apprenticeship learning experiments driven by a TOML config.
#[derive(Parser, Debug)]
#[command(name = "apprentice", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate expert trajectories and store the expert policy.
    GenExpert(Common),
    /// Train one learner and write reports.csv and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Learner to run (default: the first [[learner]] block).
        #[arg(long)]
        learner: Option<String>,
    },
    /// Evaluate a checkpoint against the expert.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file (default: <out>/checkpoints/final.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every learner on shared expert data and write comparison.csv.
    Compare(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment seed (overrides seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation rollouts (overrides evaluation.n_rollouts).
    #[arg(long)]
    eval_rollouts: Option<usize>,
}

impl Common {
    fn load(&self) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(n) = self.eval_rollouts {
            config.evaluation.n_rollouts = n;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        config.validate()?;
        let out = config.output_dir.clone();
        Ok((config, out))
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenExpert(common) => {
            let (config, out) = common.load()?;
            let expert = harness::gen_expert(&config, &out).context("generating expert")?;
            println!(
                "wrote {} expert trajectories to {}",
                expert.batch.len(),
                out.join(harness::EXPERT_FILE).display()
            );
        }
        Command::Train { common, learner } => {
            let (config, out) = common.load()?;
            let outcome =
                harness::train(&config, &out, learner.as_deref()).context("training")?;
            if let Some(last) = outcome.reports.last() {
                println!(
                    "{}: {} iterations, final delta {:.6}, feature gap {:.6}, true cost {:.6} (expert {:.6})",
                    outcome.name,
                    outcome.reports.len(),
                    last.delta,
                    last.phi_gap_norm,
                    last.true_cost,
                    outcome.reference.expert_cost
                );
            }
            println!("reports: {}", out.join("reports.csv").display());
        }
        Command::Evaluate { common, checkpoint } => {
            let (config, out) = common.load()?;
            let metrics = harness::evaluate(&config, &out, checkpoint.as_deref(), None)
                .context("evaluating")?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::Compare(common) => {
            let (config, out) = common.load()?;
            let outcomes = harness::compare(&config, &out).context("comparing")?;
            for o in &outcomes {
                if let Some(last) = o.reports.last() {
                    println!(
                        "{}: final feature gap {:.6}, excess cost {:.6}",
                        o.name, last.phi_gap_norm, last.excess_cost
                    );
                }
            }
            println!("comparison: {}", out.join("comparison.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
