use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use ohprl::envs::EnvId;
use ohprl::intervention::OverrideMailbox;
use ohprl::runtime::service::{LiveBoard, Service};
use ohprl::runtime::{checkpoint, eval, trace, train, RunConfig, TrainHooks};
use ohprl::Result;

#[derive(Parser)]
#[command(name = "ohprl", version, about = "Preference-gated actor-critic training from interventions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set learner.utd=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        config.apply_overrides(&self.set)?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and write a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Single-threaded deterministic interleaving.
        #[arg(long)]
        lockstep: bool,
    },
    /// Evaluate a checkpoint without intervention.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the checkpoint's environment.
        #[arg(long)]
        env: Option<EnvId>,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        /// Defaults to the run's held-out evaluation seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the gate over a grid of agent positions as CSV (x,y,beta).
    ExportGateField {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        resolution: usize,
        #[arg(long, default_value = "gate_field.csv")]
        out: PathBuf,
        /// Reset seed supplying the non-agent observation features.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train with the live WebSocket service attached.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        lockstep: bool,
    },
    /// Re-simulate a trace and check it step for step.
    ReplayTrace {
        /// Run directory holding config.txt and trace.jsonl.
        #[arg(long)]
        run: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, lockstep } => {
            let config = config.resolve()?;
            let out = train(&config, lockstep, TrainHooks::default())?;
            let successes = out.episodes.iter().filter(|e| e.success).count();
            println!(
                "run {}: {} env steps, {} learner steps, {} episodes ({} successful)",
                out.run_dir.display(),
                out.env_steps,
                out.learner_steps,
                out.episodes.len(),
                successes
            );
        }
        Command::Eval {
            checkpoint: dir,
            env,
            episodes,
            seed,
        } => {
            let ckpt = checkpoint::load(&dir)?;
            let config = ckpt.config()?;
            let env_id = env.unwrap_or(config.env_id);
            let report = eval::evaluate(
                &ckpt.nets.policy,
                env_id,
                &config.env,
                episodes,
                seed.unwrap_or(config.eval_seed),
            )?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::ExportGateField {
            checkpoint: dir,
            resolution,
            out,
            seed,
        } => {
            let ckpt = checkpoint::load(&dir)?;
            let config = ckpt.config()?;
            let rows = eval::gate_field(&ckpt.nets, config.env_id, &config.env, resolution, seed)?;
            eval::write_gate_field(&out, &rows)?;
            println!("wrote {} cells to {}", rows.len(), out.display());
        }
        Command::Serve { config, lockstep } => {
            let config = config.resolve()?;
            let board = Arc::new(LiveBoard::new(Arc::new(OverrideMailbox::new())));
            let period = Duration::from_secs_f64(1.0 / config.serve_frame_rate);
            let service = Service::bind(&config.serve_bind, board.clone(), period / 4)?;
            eprintln!("serving on ws://{}", service.local_addr());
            let hooks = TrainHooks {
                board: Some(board),
                step_pace: Some(period),
                ..Default::default()
            };
            let out = train(&config, lockstep, hooks)?;
            println!("run {} finished after {} env steps", out.run_dir.display(), out.env_steps);
        }
        Command::ReplayTrace { run } => {
            let config = RunConfig::load(&run.join("config.txt"))?;
            let summary = trace::replay_trace(&run.join("trace.jsonl"), config.env_id, &config.env)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
