//! Deterministic 2-D point-mass tasks with sparse success reward.
//!
//! Both tasks live in the unit square, take position-delta actions in
//! `[-1, 1]^2` scaled by `a_max`, and only ever pay reward 1 on the step that
//! completes the task. Hitting the horizon sets `truncated` and leaves
//! `done = 0` so the critic still bootstraps.

mod press;
mod push;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use press::PressButtonParams;
pub use push::PushBallParams;

pub const ACTION_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    PressButton,
    PushBall,
}

impl EnvId {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvId::PressButton => "press_button",
            EnvId::PushBall => "push_ball",
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvId::PressButton => press::OBS_DIM,
            EnvId::PushBall => push::OBS_DIM,
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "press_button" => Ok(EnvId::PressButton),
            "push_ball" => Ok(EnvId::PushBall),
            other => Err(Error::Config(format!("unknown env id `{other}`"))),
        }
    }
}

/// Geometry, horizons and step size for both tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    /// Largest per-step displacement, in workspace units.
    pub a_max: f64,
    pub press: PressButtonParams,
    pub push: PushBallParams,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            a_max: 0.03,
            press: PressButtonParams::default(),
            push: PushBallParams::default(),
        }
    }
}

impl EnvParams {
    pub fn horizon(&self, id: EnvId) -> usize {
        match id {
            EnvId::PressButton => self.press.horizon,
            EnvId::PushBall => self.push.horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_max > 0.0 && self.a_max < 1.0) {
            return Err(Error::Config(format!("a_max {} outside (0, 1)", self.a_max)));
        }
        self.press.validate()?;
        self.push.validate()
    }
}

/// Task-specific part of the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskState {
    /// Button top-face centre.
    Button { b: [f64; 2] },
    Ball {
        o: [f64; 2],
        ball_v: [f64; 2],
        goal: [f64; 2],
        mu: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub id: EnvId,
    pub p: [f64; 2],
    /// Displacement of the last step.
    pub v: [f64; 2],
    pub task: TaskState,
    pub t: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepInfo {
    pub success: bool,
    pub unsafe_contact: bool,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Active,
    Terminated,
    Truncated,
}

/// One environment instance. Owned by a single actor loop.
#[derive(Clone, Debug)]
pub struct Env {
    params: EnvParams,
    pub(crate) state: EnvState,
    status: Status,
}

impl Env {
    /// Starts a fresh episode for `(id, seed)`.
    pub fn reset(id: EnvId, params: &EnvParams, seed: u64) -> (Self, StepResult) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = match id {
            EnvId::PressButton => press::initial_state(&params.press, seed, &mut rng),
            EnvId::PushBall => push::initial_state(&params.push, seed, &mut rng),
        };
        let env = Self {
            params: params.clone(),
            state,
            status: Status::Active,
        };
        let first = StepResult {
            observation: env.observe(),
            reward: 0.0,
            done: false,
            info: StepInfo::default(),
        };
        (env, first)
    }

    /// Resets this instance in place.
    pub fn reset_in_place(&mut self, seed: u64) -> StepResult {
        let (env, first) = Env::reset(self.state.id, &self.params, seed);
        *self = env;
        first
    }

    pub fn id(&self) -> EnvId {
        self.state.id
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    pub fn observe(&self) -> Vec<f64> {
        observe(&self.params, &self.state)
    }

    /// Advances one step. Actions are clamped to `[-1, 1]^2`.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        match self.status {
            Status::Active => {}
            Status::Terminated => {
                return Err(Error::Protocol("step after terminal success; reset first".into()))
            }
            Status::Truncated => {
                return Err(Error::Protocol("step after truncation; reset first".into()))
            }
        }
        if action.len() != ACTION_DIM {
            return Err(Error::Shape(format!(
                "action has {} components, expected {ACTION_DIM}",
                action.len()
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Protocol(format!("non-finite action {action:?}")));
        }
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        let success = match self.state.id {
            EnvId::PressButton => press::advance(&self.params, &mut self.state, a),
            EnvId::PushBall => push::advance(&self.params, &mut self.state, a),
        };
        self.state.t += 1;
        let unsafe_contact = !success && is_unsafe(&self.params, &self.state);
        let truncated = !success && self.state.t >= self.params.horizon(self.state.id);
        self.status = if success {
            Status::Terminated
        } else if truncated {
            Status::Truncated
        } else {
            Status::Active
        };
        Ok(StepResult {
            observation: self.observe(),
            reward: if success { 1.0 } else { 0.0 },
            done: success,
            info: StepInfo {
                success,
                unsafe_contact,
                truncated,
            },
        })
    }
}

pub(crate) fn clamp_unit(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

pub(crate) fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

pub(crate) fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Flat observation vector for a state.
pub fn observe(params: &EnvParams, state: &EnvState) -> Vec<f64> {
    match state.id {
        EnvId::PressButton => press::observe(params, state),
        EnvId::PushBall => push::observe(params, state),
    }
}

/// Observation of `state` with the agent moved to `p` and its velocity
/// zeroed; used for gate-field sweeps.
pub fn observe_with_agent(params: &EnvParams, state: &EnvState, p: [f64; 2]) -> Vec<f64> {
    let mut s = state.clone();
    s.p = p;
    s.v = [0.0, 0.0];
    observe(params, &s)
}

/// Strict-interior membership of the task's unsafe region.
pub fn is_unsafe(params: &EnvParams, state: &EnvState) -> bool {
    match state.id {
        EnvId::PressButton => press::is_unsafe(&params.press, state),
        EnvId::PushBall => push::is_unsafe(&params.push, state),
    }
}

/// Distance from `p` to the unsafe region and the unit direction that
/// increases it. `None` when the region is empty; direction is zero for
/// points inside.
pub fn unsafe_distance(params: &EnvParams, state: &EnvState, p: [f64; 2]) -> Option<(f64, [f64; 2])> {
    match state.id {
        EnvId::PressButton => Some(press::unsafe_distance(&params.press, state, p)),
        EnvId::PushBall => push::unsafe_distance(&params.push, state, p),
    }
}

/// Target point the scripted intervenor steers toward.
pub fn reference_waypoint(params: &EnvParams, state: &EnvState) -> [f64; 2] {
    match state.id {
        EnvId::PressButton => press::reference_waypoint(&params.press, state),
        EnvId::PushBall => push::reference_waypoint(&params.push, state),
    }
}

/// Scalar that shrinks as the task progresses; drives the stall trigger.
pub fn task_distance(params: &EnvParams, state: &EnvState) -> f64 {
    match state.id {
        EnvId::PressButton => press::task_distance(&params.press, state),
        EnvId::PushBall => push::task_distance(&params.push, state),
    }
}

/// Whether the agent is back in a configuration from which the task can
/// proceed normally; releases a latched oracle intervention.
pub fn in_safe_corridor(params: &EnvParams, state: &EnvState) -> bool {
    match state.id {
        EnvId::PressButton => press::in_corridor(&params.press, state),
        EnvId::PushBall => push::in_corridor(&params.push, state),
    }
}

/// The scripted task controller used for demonstrations and oracle
/// overrides. `kp` is the proportional gain in units of `a_max`.
pub fn scripted_action(params: &EnvParams, state: &EnvState, kp: f64) -> [f64; 2] {
    match state.id {
        EnvId::PressButton => press::scripted_action(params, state, kp),
        EnvId::PushBall => push::scripted_action(params, state, kp),
    }
}

/// Default fixed pose the safe-region intervenor retreats to.
pub fn default_safe_pose(params: &EnvParams, id: EnvId) -> [f64; 2] {
    match id {
        EnvId::PressButton => params.press.safe_pose,
        EnvId::PushBall => params.push.safe_pose,
    }
}

/// `clamp(kp * (target - p) / a_max)` per axis.
pub(crate) fn toward(p: [f64; 2], target: [f64; 2], kp: f64, a_max: f64) -> [f64; 2] {
    [
        (kp * (target[0] - p[0]) / a_max).clamp(-1.0, 1.0),
        (kp * (target[1] - p[1]) / a_max).clamp(-1.0, 1.0),
    ]
}
