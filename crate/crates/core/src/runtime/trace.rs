//! Per-step episode traces (JSONL) and deterministic re-simulation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{Env, EnvId, EnvParams};
use crate::error::{Error, Result};
use crate::intervention::TriggerReason;
use crate::replay::read_jsonl;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceFlags {
    pub success: bool,
    pub unsafe_contact: bool,
    pub truncated: bool,
    pub intervened: bool,
}

/// One executed step. `p` is the agent position after the step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub episode: u64,
    pub seed: u64,
    pub t: usize,
    pub p: [f64; 2],
    pub a: Vec<f64>,
    pub r: f64,
    pub flags: TraceFlags,
    pub trigger: TriggerReason,
}

pub struct TraceWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, step: &TraceStep) -> Result<()> {
        serde_json::to_writer(&mut self.out, step)?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub episodes: usize,
    pub steps: usize,
    pub successes: usize,
    pub intervened_steps: usize,
}

/// Re-simulates every episode of a trace from its seed and executed
/// actions; any divergence in position, reward or flags is an error.
pub fn replay_trace(path: &Path, env_id: EnvId, params: &EnvParams) -> Result<ReplaySummary> {
    let steps: Vec<TraceStep> = read_jsonl(path)?;
    let mut summary = ReplaySummary {
        episodes: 0,
        steps: 0,
        successes: 0,
        intervened_steps: 0,
    };
    let mut env: Option<(u64, Env)> = None;
    for s in &steps {
        let fresh = match &env {
            Some((ep, _)) => *ep != s.episode,
            None => true,
        };
        if fresh {
            if s.t != 1 {
                return Err(Error::Validation(format!(
                    "episode {} starts at t={} instead of 1",
                    s.episode, s.t
                )));
            }
            env = Some((s.episode, Env::reset(env_id, params, s.seed).0));
            summary.episodes += 1;
        }
        let (_, e) = env.as_mut().expect("episode initialised above");
        let r = e.step(&s.a)?;
        let flags = TraceFlags {
            success: r.info.success,
            unsafe_contact: r.info.unsafe_contact,
            truncated: r.info.truncated,
            intervened: s.flags.intervened,
        };
        if e.state().p != s.p || r.reward != s.r || flags != s.flags || e.state().t != s.t {
            return Err(Error::Validation(format!(
                "trace diverges at episode {} step {}",
                s.episode, s.t
            )));
        }
        summary.steps += 1;
        summary.successes += usize::from(r.info.success);
        summary.intervened_steps += usize::from(s.flags.intervened);
    }
    Ok(summary)
}
