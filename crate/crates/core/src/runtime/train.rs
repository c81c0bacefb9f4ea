//! Run orchestration: prefill, then the actor and learner either
//! interleaved on one thread (lockstep) or running concurrently.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envs::{Env, ACTION_DIM};
use crate::error::{Error, Result};
use crate::intervention::{oracle_policy, Intervenor, OverrideMailbox, ScriptedIntervenor};
use crate::learner::{Learner, Mode, Nets, UpdateReport};
use crate::nets::{policy_sample, ParamSet};
use crate::replay::{prefill, BufferPair, Transition};
use crate::runtime::actor::{ActorLoop, StepOutcome};
use crate::runtime::checkpoint;
use crate::runtime::config::RunConfig;
use crate::runtime::metrics::{EpisodeRecord, MetricsRow, MetricsWriter, ProgressTracker};
use crate::runtime::service::LiveBoard;
use crate::runtime::trace::TraceWriter;

// seed families kept apart from the training episodes
const DEMO_SEED_OFFSET: u64 = 1 << 40;
const ROLLOUT_SEED_OFFSET: u64 = 2 << 40;
const ACTOR_RNG_SALT: u64 = 0x6163_746f;
const PREFILL_RNG_SALT: u64 = 0x7072_6566;

/// Optional attachments for a run. The defaults give a headless run with
/// the scripted intervenor from the config.
#[derive(Default)]
pub struct TrainHooks {
    /// Replaces the configured intervenor.
    pub intervenor: Option<Box<dyn Intervenor>>,
    /// Override mailbox handed to the configured intervenor.
    pub mailbox: Option<Arc<OverrideMailbox>>,
    /// Receives frames and metrics snapshots.
    pub board: Option<Arc<LiveBoard>>,
    /// Sleep after every environment step (live sessions).
    pub step_pace: Option<Duration>,
    /// Set to end the run early; the final checkpoint is still written.
    pub stop: Option<Arc<AtomicBool>>,
}

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub episodes: Vec<EpisodeRecord>,
    pub buffers: BufferPair,
    /// Buffer sizes right after prefill.
    pub prefill_online: usize,
    pub prefill_pref: usize,
    pub nets: Nets,
    pub env_steps: u64,
    pub learner_steps: u64,
    pub last_report: Option<UpdateReport>,
    pub final_checkpoint: PathBuf,
}

/// Scripted demonstrations on their own seed family. Each must succeed.
pub fn generate_demos(config: &RunConfig) -> Result<Vec<Vec<Transition>>> {
    (0..config.prefill_demos as u64)
        .map(|k| {
            let seed = config.env_seed.wrapping_add(DEMO_SEED_OFFSET).wrapping_add(k);
            let (mut env, first) = Env::reset(config.env_id, &config.env, seed);
            let mut obs = first.observation;
            let mut steps = Vec::new();
            while env.is_active() {
                let a = oracle_policy(&config.oracle, env.params(), env.state()).to_vec();
                let r = env.step(&a)?;
                steps.push(Transition {
                    s: std::mem::replace(&mut obs, r.observation.clone()),
                    a,
                    r: r.reward,
                    d: r.done,
                    s_next: r.observation,
                });
            }
            if !steps.last().is_some_and(|t| t.d) {
                return Err(Error::Validation(format!("demonstration on seed {seed} did not succeed")));
            }
            Ok(steps)
        })
        .collect()
}

/// Intervention-free rollouts of `policy` on their own seed family.
pub fn generate_rollouts(config: &RunConfig, policy: &ParamSet, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Transition>>> {
    (0..config.prefill_rollouts as u64)
        .map(|k| {
            let seed = config.env_seed.wrapping_add(ROLLOUT_SEED_OFFSET).wrapping_add(k);
            let (mut env, first) = Env::reset(config.env_id, &config.env, seed);
            let mut obs = first.observation;
            let mut steps = Vec::new();
            while env.is_active() {
                let noise: Vec<f64> = (0..ACTION_DIM).map(|_| StandardNormal.sample(rng)).collect();
                let a = policy_sample(policy, &obs, &noise)?.action;
                let r = env.step(&a)?;
                steps.push(Transition {
                    s: std::mem::replace(&mut obs, r.observation.clone()),
                    a,
                    r: r.reward,
                    d: r.done,
                    s_next: r.observation,
                });
            }
            Ok(steps)
        })
        .collect()
}

/// Whether the learner can draw the batches its mode needs.
fn ready(mode: Mode, buffers: &BufferPair) -> bool {
    !buffers.pref.is_empty() && (mode == Mode::Bc || !buffers.online.is_empty())
}

/// Everything a run writes besides checkpoints.
struct RunFiles {
    dir: PathBuf,
    metrics: MetricsWriter,
    tracker: ProgressTracker,
    episodes: Vec<EpisodeRecord>,
    board: Option<Arc<LiveBoard>>,
}

impl RunFiles {
    fn record(&mut self, ep: EpisodeRecord, report: Option<&UpdateReport>, version: u64) -> Result<()> {
        let (rolling, ema) = self.tracker.record(&ep);
        let row = MetricsRow::new(&ep, rolling, ema, report, version);
        self.metrics.write(&row)?;
        if let Some(b) = &self.board {
            b.publish_metrics(&row);
        }
        self.episodes.push(ep);
        Ok(())
    }

    fn checkpoint_dir(&self, label: &str) -> PathBuf {
        self.dir.join("checkpoints").join(label)
    }
}

fn stopped(stop: &Option<Arc<AtomicBool>>) -> bool {
    stop.as_ref().is_some_and(|s| s.load(Ordering::Acquire))
}

impl Session<'_> {
    fn running(&self) -> bool {
        let cap = self.config.max_episodes;
        self.actor.env_steps() < self.config.total_env_steps
            && (cap == 0 || self.actor.episode() < cap)
            && !stopped(&self.stop)
    }
}

/// Runs a full training session and writes its directory.
pub fn train(config: &RunConfig, lockstep: bool, hooks: TrainHooks) -> Result<TrainOutcome> {
    config.validate()?;
    let dir = config.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let config_path = dir.join("config.txt");
    std::fs::write(&config_path, config.to_text()).map_err(|e| Error::io(&config_path, e))?;

    let obs_dim = config.env_id.obs_dim();
    let learner = Learner::new(config.learner.clone(), obs_dim, ACTION_DIM)?;

    let mut prefill_rng = ChaCha8Rng::seed_from_u64(config.learner.seed ^ PREFILL_RNG_SALT);
    let demos = generate_demos(config)?;
    let rollouts = generate_rollouts(config, &learner.nets().policy, &mut prefill_rng)?;
    let buffers = prefill(
        &demos,
        &rollouts,
        config.online_capacity,
        config.pref_capacity,
        &mut prefill_rng,
    )?;
    let (prefill_online, prefill_pref) = (buffers.online.len(), buffers.pref.len());

    let TrainHooks {
        intervenor,
        mailbox,
        board,
        step_pace,
        stop,
    } = hooks;
    let intervenor = intervenor.unwrap_or_else(|| {
        Box::new(ScriptedIntervenor::new(
            config.intervention,
            config.oracle.clone(),
            mailbox.or_else(|| board.as_ref().map(|b| b.mailbox().clone())),
        ))
    });
    let mut actor = ActorLoop::new(
        config.env_id,
        &config.env,
        config.env_seed,
        intervenor,
        Arc::new(learner.nets().policy.clone()),
        config.learner.seed ^ ACTOR_RNG_SALT,
    );
    if config.write_traces {
        actor = actor.with_trace(TraceWriter::create(&dir.join("trace.jsonl"))?);
    }
    if let Some(b) = &board {
        actor = actor.with_board(b.clone());
    }
    let files = RunFiles {
        metrics: MetricsWriter::create(&dir.join("metrics.csv"))?,
        tracker: ProgressTracker::new(config.metrics_window, config.metrics_ema_k),
        episodes: Vec::new(),
        board,
        dir: dir.clone(),
    };
    let ctx = Session {
        config,
        actor,
        files,
        step_pace,
        stop,
    };
    let mut run = if lockstep {
        ctx.run_lockstep(learner, buffers)?
    } else {
        ctx.run_async(learner, buffers)?
    };
    run.prefill_online = prefill_online;
    run.prefill_pref = prefill_pref;
    if config.write_traces {
        run.buffers.write_jsonl(&dir.join("buffers"))?;
    }
    Ok(run)
}

struct Session<'a> {
    config: &'a RunConfig,
    actor: ActorLoop,
    files: RunFiles,
    step_pace: Option<Duration>,
    stop: Option<Arc<AtomicBool>>,
}

impl Session<'_> {
    fn after_step(&mut self, outcome: StepOutcome, report: Option<&UpdateReport>) -> Result<()> {
        if let Some(ep) = outcome.episode_end {
            self.files.record(ep, report, self.actor.policy_version())?;
        }
        if let Some(p) = self.step_pace {
            std::thread::sleep(p);
        }
        Ok(())
    }

    fn periodic_checkpoint(&self, nets: &Nets, learner_steps: u64) -> Result<()> {
        let n = self.actor.env_steps();
        if n % self.config.eval_every == 0 && n < self.config.total_env_steps {
            checkpoint::save(
                &self.files.checkpoint_dir(&format!("step_{n}")),
                self.config,
                nets,
                n,
                learner_steps,
            )?;
        }
        Ok(())
    }

    fn finish(
        mut self,
        nets: Nets,
        buffers: BufferPair,
        learner_steps: u64,
        last_report: Option<UpdateReport>,
    ) -> Result<TrainOutcome> {
        self.actor.flush()?;
        self.files.metrics.flush()?;
        let env_steps = self.actor.env_steps();
        let final_checkpoint = checkpoint::save(
            &self.files.checkpoint_dir("final"),
            self.config,
            &nets,
            env_steps,
            learner_steps,
        )?;
        Ok(TrainOutcome {
            run_dir: self.files.dir,
            episodes: self.files.episodes,
            buffers,
            prefill_online: 0,
            prefill_pref: 0,
            nets,
            env_steps,
            learner_steps,
            last_report,
            final_checkpoint,
        })
    }

    /// Act, store, then exactly `utd` learner steps; the actor always
    /// runs the newest policy.
    fn run_lockstep(mut self, mut learner: Learner, mut buffers: BufferPair) -> Result<TrainOutcome> {
        let utd = self.config.learner.utd;
        let mode = self.config.learner.mode;
        let mut last_report = None;
        while self.running() {
            let outcome = self.actor.step()?;
            outcome.data.clone().push_into(&mut buffers);
            if ready(mode, &buffers) {
                for _ in 0..utd {
                    last_report = Some(learner.step(&buffers)?);
                }
                self.actor.set_policy(Arc::new(learner.nets().policy.clone()));
            }
            self.after_step(outcome, last_report.as_ref())?;
            self.periodic_checkpoint(learner.nets(), learner.steps())?;
        }
        let steps = learner.steps();
        let nets = learner.nets().clone();
        self.finish(nets, buffers, steps, last_report)
    }

    /// Learner on its own thread, throttled to `utd` steps per environment
    /// step, publishing parameters every `sync_every` learner steps.
    fn run_async(mut self, learner: Learner, buffers: BufferPair) -> Result<TrainOutcome> {
        let shared = Arc::new(Shared {
            buffers: Mutex::new(buffers),
            env_steps: AtomicU64::new(0),
            done: AtomicBool::new(false),
            published: Mutex::new(None),
            report: Mutex::new(None),
            failure: Mutex::new(None),
        });
        let utd = self.config.learner.utd as u64;
        let sync_every = self.config.learner.sync_every.max(1) as u64;
        let mode = self.config.learner.mode;
        let worker = {
            let shared = shared.clone();
            std::thread::spawn(move || learner_thread(learner, &shared, utd, sync_every, mode))
        };

        let mut seen_version = None;
        let mut result = Ok(());
        let mut latest_nets: Option<Arc<Nets>> = None;
        while self.running() {
            if shared.failure.lock().unwrap_or_else(|e| e.into_inner()).is_some() {
                break;
            }
            if let Some((nets, version)) = lock(&shared.published).clone() {
                if seen_version != Some(version) {
                    seen_version = Some(version);
                    self.actor.set_policy(Arc::new(nets.policy.clone()));
                    latest_nets = Some(nets);
                }
            }
            let outcome = match self.actor.step() {
                Ok(o) => o,
                Err(e) => {
                    result = Err(e);
                    break;
                }
            };
            outcome.data.clone().push_into(&mut lock(&shared.buffers));
            shared.env_steps.fetch_add(1, Ordering::Release);
            let report = lock(&shared.report).clone();
            if let Err(e) = self.after_step(outcome, report.as_ref()) {
                result = Err(e);
                break;
            }
            if let Some(nets) = &latest_nets {
                let steps = lock(&shared.report).as_ref().map_or(0, |r| r.step + 1);
                if let Err(e) = self.periodic_checkpoint(nets, steps) {
                    result = Err(e);
                    break;
                }
            }
        }
        shared.done.store(true, Ordering::Release);
        let learner = worker
            .join()
            .map_err(|_| Error::Protocol("learner thread panicked".into()))?;
        if let Some(e) = lock(&shared.failure).take() {
            return Err(e);
        }
        result?;
        let shared = Arc::try_unwrap(shared).map_err(|_| Error::Protocol("learner state still shared".into()))?;
        let buffers = shared.buffers.into_inner().unwrap_or_else(|e| e.into_inner());
        let last_report = shared.report.into_inner().unwrap_or_else(|e| e.into_inner());
        let steps = learner.steps();
        let nets = learner.nets().clone();
        self.finish(nets, buffers, steps, last_report)
    }
}

struct Shared {
    buffers: Mutex<BufferPair>,
    env_steps: AtomicU64,
    done: AtomicBool,
    /// Latest published parameters and the learner step they came from.
    published: Mutex<Option<(Arc<Nets>, u64)>>,
    report: Mutex<Option<UpdateReport>>,
    failure: Mutex<Option<Error>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn learner_thread(mut learner: Learner, shared: &Shared, utd: u64, sync_every: u64, mode: Mode) -> Learner {
    while !shared.done.load(Ordering::Acquire) {
        let budget = utd * shared.env_steps.load(Ordering::Acquire);
        if learner.steps() >= budget {
            std::thread::sleep(Duration::from_micros(200));
            continue;
        }
        let batch = {
            let buffers = lock(&shared.buffers);
            if !ready(mode, &buffers) {
                None
            } else {
                Some(learner.sample(&buffers))
            }
        };
        let step = match batch {
            None => {
                std::thread::sleep(Duration::from_micros(200));
                continue;
            }
            Some(Ok((online, pref))) => learner.step_on(&online, &pref),
            Some(Err(e)) => Err(e),
        };
        match step {
            Ok(report) => {
                *lock(&shared.report) = Some(report);
                if learner.steps() % sync_every == 0 {
                    *lock(&shared.published) = Some((Arc::new(learner.nets().clone()), learner.steps()));
                }
            }
            Err(e) => {
                *lock(&shared.failure) = Some(e);
                break;
            }
        }
    }
    learner
}

/// Loads a run's final checkpoint.
pub fn load_final(run_dir: &Path) -> Result<checkpoint::Checkpoint> {
    checkpoint::load(&run_dir.join("checkpoints").join("final"))
}
