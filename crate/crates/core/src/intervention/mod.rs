//! Per-step action overrides.
//!
//! An intervenor looks at the current state and the policy's proposal and
//! either lets the proposal through or replaces it. Overrides become the
//! preferred action of a [`PreferenceTuple`]; the displaced proposal becomes
//! the weak action.

mod mailbox;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{self, EnvParams, EnvState, ACTION_DIM};
use crate::error::{Error, Result};

pub use mailbox::OverrideMailbox;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionMode {
    Oracle,
    OracleSafeRegion,
    HumanBridge,
    None,
}

impl InterventionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InterventionMode::Oracle => "oracle",
            InterventionMode::OracleSafeRegion => "oracle_safe_region",
            InterventionMode::HumanBridge => "human_bridge",
            InterventionMode::None => "none",
        }
    }
}

impl fmt::Display for InterventionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InterventionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(InterventionMode::Oracle),
            "oracle_safe_region" => Ok(InterventionMode::OracleSafeRegion),
            "human_bridge" => Ok(InterventionMode::HumanBridge),
            "none" => Ok(InterventionMode::None),
            other => Err(Error::Config(format!("unknown intervention mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerReason {
    UnsafeEntry,
    Stall,
    Human,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterventionDecision {
    pub active: bool,
    pub override_action: Option<[f64; 2]>,
    pub trigger_reason: TriggerReason,
}

impl InterventionDecision {
    pub fn inactive() -> Self {
        Self {
            active: false,
            override_action: None,
            trigger_reason: TriggerReason::None,
        }
    }

    fn active(action: [f64; 2], reason: TriggerReason) -> Self {
        Self {
            active: true,
            override_action: Some(clamp_action(action)),
            trigger_reason: reason,
        }
    }
}

/// Scripted intervenor settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    /// Steps without task progress before the stall trigger fires.
    pub stall_steps: usize,
    /// Minimum decrease of the task distance that counts as progress.
    pub progress_eps: f64,
    /// Proportional gain toward the waypoint, in units of `a_max`.
    pub kp: f64,
    /// Consecutive steps back in the safe corridor (or at the safe pose)
    /// that end a latched intervention.
    pub release_steps: usize,
    /// Overrides the environment's default safe pose.
    pub safe_pose: Option<[f64; 2]>,
    /// Radius around the safe pose that counts as arrived.
    pub safe_radius: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            stall_steps: 15,
            progress_eps: 1e-3,
            kp: 1.0,
            release_steps: 3,
            safe_pose: None,
            safe_radius: 0.05,
        }
    }
}

impl OracleParams {
    pub fn validate(&self) -> Result<()> {
        if self.stall_steps == 0 || self.release_steps == 0 {
            return Err(Error::Config(
                "intervention stall_steps and release_steps must be positive".into(),
            ));
        }
        if !(self.kp > 0.0) || !(self.safe_radius > 0.0) {
            return Err(Error::Config("intervention kp and safe_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Per-episode bookkeeping the triggers depend on.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeHistory {
    best_distance: f64,
    steps_since_progress: usize,
    latched: Option<TriggerReason>,
    release_streak: usize,
    steps: usize,
    intervened_steps: usize,
}

impl EpisodeHistory {
    pub fn new(env: &EnvParams, state: &EnvState) -> Self {
        Self {
            best_distance: envs::task_distance(env, state),
            steps_since_progress: 0,
            latched: None,
            release_streak: 0,
            steps: 0,
            intervened_steps: 0,
        }
    }

    pub fn steps_since_progress(&self) -> usize {
        self.steps_since_progress
    }

    pub fn latched(&self) -> Option<TriggerReason> {
        self.latched
    }

    pub fn intervened_steps(&self) -> usize {
        self.intervened_steps
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Records the outcome of a step taken under `decision`.
    pub fn observe(
        &mut self,
        mode: InterventionMode,
        oracle: &OracleParams,
        env: &EnvParams,
        decision: &InterventionDecision,
        next: &EnvState,
    ) {
        self.steps += 1;
        if decision.active {
            self.intervened_steps += 1;
        }
        let d = envs::task_distance(env, next);
        if d < self.best_distance - oracle.progress_eps {
            self.best_distance = d;
            self.steps_since_progress = 0;
        } else {
            self.steps_since_progress += 1;
        }

        if self.latched.is_none() {
            if decision.active
                && matches!(
                    decision.trigger_reason,
                    TriggerReason::UnsafeEntry | TriggerReason::Stall
                )
            {
                self.latched = Some(decision.trigger_reason);
                self.release_streak = 0;
            } else {
                return;
            }
        }
        let released_region = match mode {
            InterventionMode::OracleSafeRegion => {
                let pose = safe_pose(oracle, env, next);
                envs::norm(envs::sub(next.p, pose)) <= oracle.safe_radius
                    && !envs::is_unsafe(env, next)
            }
            _ => envs::in_safe_corridor(env, next),
        };
        self.release_streak = if released_region {
            self.release_streak + 1
        } else {
            0
        };
        if self.release_streak >= oracle.release_steps {
            self.latched = None;
            self.release_streak = 0;
            // progress is measured afresh from the hand-back point
            self.best_distance = d;
            self.steps_since_progress = 0;
        }
    }
}

fn safe_pose(oracle: &OracleParams, env: &EnvParams, state: &EnvState) -> [f64; 2] {
    oracle
        .safe_pose
        .unwrap_or_else(|| envs::default_safe_pose(env, state.id))
}

pub fn clamp_action(a: [f64; 2]) -> [f64; 2] {
    [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)]
}

/// The scripted task-completing controller (demonstrations, oracle overrides).
pub fn oracle_policy(oracle: &OracleParams, env: &EnvParams, state: &EnvState) -> [f64; 2] {
    envs::scripted_action(env, state, oracle.kp)
}

/// Full-speed move toward the safe pose with any component that would
/// approach the unsafe region projected out. Outside the region the step is
/// checked after workspace clamping; if the wall would turn it inward the
/// other tangent is tried, then standing still.
pub fn safe_region_action(oracle: &OracleParams, env: &EnvParams, state: &EnvState) -> [f64; 2] {
    let pose = safe_pose(oracle, env, state);
    let delta = envs::sub(pose, state.p);
    let dist = envs::norm(delta);
    if dist <= 1e-12 {
        return [0.0, 0.0];
    }
    let speed = (dist / env.a_max).min(1.0);
    let dir = [delta[0] / dist, delta[1] / dist];
    let (d_unsafe, away) = match envs::unsafe_distance(env, state, state.p) {
        Some((d, g)) if d > 0.0 => (d, g),
        // no region, or already inside it: nothing can get closer
        _ => return clamp_action([dir[0] * speed, dir[1] * speed]),
    };
    let inward = dir[0] * away[0] + dir[1] * away[1];
    let mut candidates = Vec::with_capacity(3);
    if inward >= 0.0 {
        candidates.push(dir);
    } else {
        let t = [dir[0] - inward * away[0], dir[1] - inward * away[1]];
        let n = envs::norm(t);
        if n > 1e-9 {
            candidates.push([t[0] / n, t[1] / n]);
            candidates.push([-t[0] / n, -t[1] / n]);
        } else {
            // safe pose straight through the region: slide along it
            candidates.push([-away[1], away[0]]);
            candidates.push([away[1], -away[0]]);
        }
    }
    for c in candidates {
        let a = clamp_action([c[0] * speed, c[1] * speed]);
        let next = envs::clamp_unit([
            state.p[0] + env.a_max * a[0],
            state.p[1] + env.a_max * a[1],
        ]);
        match envs::unsafe_distance(env, state, next) {
            Some((d, _)) if d < d_unsafe => continue,
            _ => return a,
        }
    }
    [0.0, 0.0]
}

/// One intervention decision for the current step.
pub fn decide(
    mode: InterventionMode,
    oracle: &OracleParams,
    env: &EnvParams,
    state: &EnvState,
    _policy_action: &[f64],
    history: &EpisodeHistory,
    mailbox: Option<&OverrideMailbox>,
) -> InterventionDecision {
    match mode {
        InterventionMode::None => InterventionDecision::inactive(),
        InterventionMode::HumanBridge => match mailbox.and_then(OverrideMailbox::take) {
            Some(a) => InterventionDecision::active(a, TriggerReason::Human),
            None => InterventionDecision::inactive(),
        },
        InterventionMode::Oracle | InterventionMode::OracleSafeRegion => {
            let reason = if let Some(r) = history.latched {
                r
            } else if envs::is_unsafe(env, state) {
                TriggerReason::UnsafeEntry
            } else if history.steps_since_progress >= oracle.stall_steps {
                TriggerReason::Stall
            } else {
                return InterventionDecision::inactive();
            };
            let action = if mode == InterventionMode::Oracle {
                oracle_policy(oracle, env, state)
            } else {
                safe_region_action(oracle, env, state)
            };
            InterventionDecision::active(action, reason)
        }
    }
}

/// Stateful wrapper the actor loop talks to.
pub trait Intervenor: Send {
    fn begin_episode(&mut self, env: &EnvParams, state: &EnvState);
    fn decide(&mut self, env: &EnvParams, state: &EnvState, policy_action: &[f64]) -> InterventionDecision;
    fn observe(&mut self, env: &EnvParams, decision: &InterventionDecision, next: &EnvState);
}

/// Intervenor driven by [`decide`] for one of the configured modes.
pub struct ScriptedIntervenor {
    mode: InterventionMode,
    oracle: OracleParams,
    history: Option<EpisodeHistory>,
    mailbox: Option<Arc<OverrideMailbox>>,
}

impl ScriptedIntervenor {
    pub fn new(mode: InterventionMode, oracle: OracleParams, mailbox: Option<Arc<OverrideMailbox>>) -> Self {
        Self {
            mode,
            oracle,
            history: None,
            mailbox,
        }
    }

    pub fn mode(&self) -> InterventionMode {
        self.mode
    }

    pub fn history(&self) -> Option<&EpisodeHistory> {
        self.history.as_ref()
    }
}

impl Intervenor for ScriptedIntervenor {
    fn begin_episode(&mut self, env: &EnvParams, state: &EnvState) {
        self.history = Some(EpisodeHistory::new(env, state));
    }

    fn decide(&mut self, env: &EnvParams, state: &EnvState, policy_action: &[f64]) -> InterventionDecision {
        let history = self
            .history
            .get_or_insert_with(|| EpisodeHistory::new(env, state));
        decide(
            self.mode,
            &self.oracle,
            env,
            state,
            policy_action,
            history,
            self.mailbox.as_deref(),
        )
    }

    fn observe(&mut self, env: &EnvParams, decision: &InterventionDecision, next: &EnvState) {
        if let Some(h) = self.history.as_mut() {
            h.observe(self.mode, &self.oracle, env, decision, next);
        }
    }
}

/// An intervened step: the executed override paired with the proposal it
/// displaced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTuple {
    pub s: Vec<f64>,
    pub a_p: Vec<f64>,
    pub a_w: Vec<f64>,
    pub r: f64,
    pub d: bool,
    pub s_next: Vec<f64>,
}

/// Pairs the intervenor's action with the policy proposal at the same
/// state. Without a proposal (untrained policy) the weak action is drawn
/// uniformly from the action box.
pub fn make_preference_tuple<R: Rng + ?Sized>(
    s: &[f64],
    preferred: &[f64],
    policy_action: Option<&[f64]>,
    r: f64,
    d: bool,
    s_next: &[f64],
    rng: &mut R,
) -> PreferenceTuple {
    let a_w = match policy_action {
        Some(a) => a.to_vec(),
        None => (0..preferred.len().max(ACTION_DIM))
            .map(|_| rng.gen_range(-1.0..=1.0))
            .collect(),
    };
    PreferenceTuple {
        s: s.to_vec(),
        a_p: preferred.to_vec(),
        a_w,
        r,
        d,
        s_next: s_next.to_vec(),
    }
}

#[cfg(test)]
mod tests;
