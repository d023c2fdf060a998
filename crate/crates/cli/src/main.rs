use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use v2xslice::agent::AgentCheckpoint;
use v2xslice::config::parse_config;
use v2xslice::engine;
use v2xslice::selftest;
use v2xslice::{Agent, Controller, Error, SimConfig};

#[derive(Parser)]
#[command(name = "v2xslice", version, about = "Two-slice V2V network slicing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Master seed, overriding the one in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a rule-based controller.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// `baseline` or `fixed:<action index>`.
        #[arg(long)]
        controller: Controller,
    },
    /// Train the DQN controller and write a checkpoint and training log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides `run.train_episodes`.
        #[arg(long)]
        episodes: Option<u64>,
    },
    /// Greedy evaluation of a trained checkpoint (or any other controller).
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the configured controller.
        #[arg(long)]
        controller: Option<Controller>,
    },
    /// Gradient check and toy-MDP check.
    Selftest,
}

fn load(common: &Common) -> anyhow::Result<SimConfig> {
    let mut cfg = match &common.config {
        Some(path) => parse_config(path)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(dir: &Path, cfg: &SimConfig) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    cfg.write_resolved(dir)?;
    Ok(())
}

fn evaluate_and_export(cfg: &SimConfig, agent: Option<&Agent>, out: &Path) -> anyhow::Result<()> {
    let started = Instant::now();
    let ev = engine::evaluate(cfg, agent)?;
    ev.export(out)?;
    let s = &ev.summary;
    eprintln!(
        "{}: safety delivered {:.4}, autonomous delivered {:.4}, mean revenue {:.4} ({:.1} s)",
        s.controller,
        s.safety.delivered_ratio,
        s.autonomous.delivered_ratio,
        s.mean_revenue,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { common, controller } => {
            if controller == Controller::Drl {
                return Err(Error::Config("simulate takes `baseline` or `fixed:<index>`; use evaluate for drl".into()).into());
            }
            let mut cfg = load(&common)?;
            cfg.controller = controller;
            prepare_out(&common.out, &cfg)?;
            evaluate_and_export(&cfg, None, &common.out)
        }
        Command::Train { common, episodes } => {
            let mut cfg = load(&common)?;
            cfg.controller = Controller::Drl;
            if let Some(e) = episodes {
                cfg.run.train_episodes = e;
                cfg.validate()?;
            }
            prepare_out(&common.out, &cfg)?;
            let started = Instant::now();
            let mut agent = engine::new_agent(&cfg);
            let log = engine::train_agent_with(&cfg, &mut agent, cfg.run.train_episodes, |e, rows| {
                let mean = rows.iter().map(|r| r.revenue).sum::<f64>() / rows.len().max(1) as f64;
                eprintln!(
                    "episode {e}: mean revenue {mean:.4}, epsilon {:.3} ({:.1} s)",
                    rows.last().map_or(0.0, |r| r.epsilon),
                    started.elapsed().as_secs_f64()
                );
            })?;
            engine::write_train_log(&common.out.join("train_log.csv"), &log)?;
            agent.checkpoint().save(&common.out.join("checkpoint.json"))?;
            eprintln!(
                "trained {} cycles, {} updates ({:.1} s)",
                agent.cycle,
                agent.updates,
                started.elapsed().as_secs_f64()
            );
            Ok(())
        }
        Command::Evaluate {
            common,
            checkpoint,
            controller,
        } => {
            let mut cfg = load(&common)?;
            if let Some(c) = controller {
                cfg.controller = c;
            }
            let agent = match (&checkpoint, cfg.controller) {
                (Some(path), _) => Some(Agent::from_checkpoint(AgentCheckpoint::load(path)?)?),
                (None, Controller::Drl) => {
                    return Err(Error::Config("evaluating the drl controller needs --checkpoint".into()).into())
                }
                (None, _) => None,
            };
            prepare_out(&common.out, &cfg)?;
            evaluate_and_export(&cfg, agent.as_ref(), &common.out)
        }
        Command::Selftest => {
            let started = Instant::now();
            let grad = selftest::gradient_check(1, 1e-5)?;
            println!(
                "gradient check: {} parameters, max relative error {:.3e} [{}]",
                grad.params,
                grad.max_rel_error,
                if grad.passed(1e-4) { "ok" } else { "FAIL" }
            );
            let toy = selftest::toy_mdp_check(1, 20_000, 0.05)?;
            println!(
                "toy MDP: {} steps, max Q error {:.4}, policy {} [{}]",
                toy.steps,
                toy.max_q_error,
                if toy.policy_matches { "matches" } else { "differs" },
                if toy.passed(0.05) { "ok" } else { "FAIL" }
            );
            eprintln!("selftest took {:.1} s", started.elapsed().as_secs_f64());
            if grad.passed(1e-4) && toy.passed(0.05) {
                Ok(())
            } else {
                anyhow::bail!("selftest failed")
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
