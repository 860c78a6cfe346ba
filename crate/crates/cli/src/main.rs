use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use uavmec::baselines::BaselineKind;
use uavmec::harness::{self, EvalSummary, RunRecord, TrainObserver};
use uavmec::maddpg::TrainDiagnostics;
use uavmec::SimConfig;

#[derive(Parser)]
#[command(name = "uavmec", version, about = "Multi-UAV edge computing: train, evaluate, compare")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per UAV and write a checkpoint.
    Train(Common),
    /// Run a trained checkpoint greedily.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the RANDOM or CIRCLE trajectory baseline.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// `random` or `circle`.
        #[arg(long, default_value = "circle")]
        policy: BaselineKind,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; unspecified keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of UAVs.
    #[arg(long)]
    uavs: Option<usize>,
    /// Number of UEs.
    #[arg(long)]
    ues: Option<usize>,
    /// Training episodes for `train`, evaluation episodes otherwise.
    #[arg(long)]
    episodes: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self, fallback: Option<&Path>) -> Result<SimConfig> {
        let path = self.config.as_deref().or(fallback.filter(|p| p.exists()));
        let mut c = match path {
            Some(p) => SimConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => SimConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(m) = self.uavs {
            c.n_uavs = m;
        }
        if let Some(n) = self.ues {
            c.n_ues = n;
        }
        if let Some(e) = self.episodes {
            c.episodes = e;
        }
        c.validate().context("invalid configuration")?;
        Ok(c)
    }
}

struct Progress {
    every: usize,
    total: usize,
}

impl TrainObserver for Progress {
    fn on_episode(&mut self, r: &RunRecord, diag: &TrainDiagnostics) {
        let done = r.episode + 1;
        if done % self.every == 0 || done == self.total {
            eprintln!(
                "episode {done}/{} reward {:.1} f_e {:.3} f_u {:.3} energy {:.4e} J noise {:.3}",
                self.total,
                r.mean_reward(),
                r.f_e,
                r.f_u,
                r.energy_j,
                diag.noise_std
            );
        }
    }
}

fn report(s: &EvalSummary) {
    println!(
        "{} seed {} over {} episodes: reward {:.2} f_e {:.4} f_u {:.4} energy {:.6e} J objective {:.4}",
        s.policy,
        s.seed,
        s.episodes.len(),
        s.mean_reward,
        s.mean_f_e,
        s.mean_f_u,
        s.mean_energy_j,
        s.mean_objective
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let c = common.config(None)?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs/train"));
            let mut progress = Progress {
                every: (c.episodes / 20).max(1),
                total: c.episodes,
            };
            let outcome = harness::train_with(&c, Some(&out), &mut progress)?;
            let last = &outcome.log[outcome.log.len().saturating_sub(10)..];
            println!(
                "trained {} episodes; last {} mean reward {:.2}; checkpoint in {}",
                outcome.log.len(),
                last.len(),
                harness::mean_reward(last),
                out.join("checkpoint").display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let saved = checkpoint.parent().map(|p| p.join("config.toml"));
            let mut c = common.config(saved.as_deref())?;
            if common.episodes.is_none() {
                c.episodes = 20;
            }
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs/eval"));
            let s = harness::evaluate(&checkpoint, &c, c.episodes, Some(&out))?;
            report(&s);
        }
        Command::Baseline { common, policy } => {
            let mut c = common.config(None)?;
            if common.episodes.is_none() {
                c.episodes = 20;
            }
            if c.episodes == 0 {
                bail!("need at least one episode");
            }
            let out = common
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("runs/{policy}")));
            let s = harness::run_baseline(policy, &c, c.episodes, Some(&out))?;
            report(&s);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
