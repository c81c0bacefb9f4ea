//! `press_button`: descend onto a button from above without clipping it
//! from the side.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clamp_unit, toward, EnvId, EnvParams, EnvState, TaskState};
use crate::error::{Error, Result};

pub(super) const OBS_DIM: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PressButtonParams {
    pub horizon: usize,
    /// Centre of the button's top face.
    pub button: [f64; 2],
    /// Width of the button top; the approach corridor is this wide.
    pub width: f64,
    /// Width of the unsafe band on either side of the button.
    pub band_width: f64,
    /// Height above the top face the scripted controller keeps while
    /// outside the corridor.
    pub clearance: f64,
    pub start_x: [f64; 2],
    pub start_y: [f64; 2],
    /// Lateral alignment the scripted controller reaches before descending.
    pub align_tol: f64,
    pub safe_pose: [f64; 2],
}

impl Default for PressButtonParams {
    fn default() -> Self {
        Self {
            horizon: 100,
            button: [0.5, 0.2],
            width: 0.08,
            band_width: 0.06,
            clearance: 0.05,
            start_x: [0.1, 0.9],
            start_y: [0.6, 0.9],
            align_tol: 0.005,
            safe_pose: [0.5, 0.85],
        }
    }
}

impl PressButtonParams {
    pub(super) fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("press_button horizon must be positive".into()));
        }
        if self.width <= 0.0 || self.band_width < 0.0 || self.clearance < 0.0 {
            return Err(Error::Config("press_button geometry must be positive".into()));
        }
        if self.start_x[0] > self.start_x[1] || self.start_y[0] > self.start_y[1] {
            return Err(Error::Config("press_button start ranges are inverted".into()));
        }
        if self.start_y[0] <= self.button[1] + self.clearance {
            return Err(Error::Config(
                "press_button start region must lie above the clearance height".into(),
            ));
        }
        Ok(())
    }

    fn half_outer(&self) -> f64 {
        self.width / 2.0 + self.band_width
    }
}

fn button(state: &EnvState) -> [f64; 2] {
    match state.task {
        TaskState::Button { b } => b,
        _ => unreachable!("press_button state without a button"),
    }
}

pub(super) fn initial_state(params: &PressButtonParams, seed: u64, rng: &mut ChaCha8Rng) -> EnvState {
    let x = rng.gen_range(params.start_x[0]..=params.start_x[1]);
    let y = rng.gen_range(params.start_y[0]..=params.start_y[1]);
    EnvState {
        id: EnvId::PressButton,
        p: [x, y],
        v: [0.0, 0.0],
        task: TaskState::Button { b: params.button },
        t: 0,
        seed,
    }
}

pub(super) fn observe(params: &EnvParams, state: &EnvState) -> Vec<f64> {
    let b = button(state);
    vec![
        state.p[0],
        state.p[1],
        state.v[0] / params.a_max,
        state.v[1] / params.a_max,
        b[0] - state.p[0],
        b[1] - state.p[1],
        state.t as f64 / params.press.horizon as f64,
    ]
}

/// Moves the agent; returns whether the step pressed the button.
pub(super) fn advance(params: &EnvParams, state: &mut EnvState, a: [f64; 2]) -> bool {
    let b = button(state);
    let prev = state.p;
    let next = clamp_unit([prev[0] + params.a_max * a[0], prev[1] + params.a_max * a[1]]);
    state.v = [next[0] - prev[0], next[1] - prev[1]];
    state.p = next;

    // success: crosses the top face downward inside the (closed) corridor
    if prev[1] > b[1] && next[1] <= b[1] {
        let frac = (prev[1] - b[1]) / (prev[1] - next[1]);
        let x_cross = prev[0] + frac * (next[0] - prev[0]);
        return (x_cross - b[0]).abs() <= params.press.width / 2.0;
    }
    false
}

/// Side bands and the button body below its top face; open set.
pub(super) fn is_unsafe(params: &PressButtonParams, state: &EnvState) -> bool {
    let b = button(state);
    (state.p[0] - b[0]).abs() < params.half_outer() && state.p[1] < b[1]
}

pub(super) fn unsafe_distance(params: &PressButtonParams, state: &EnvState, p: [f64; 2]) -> (f64, [f64; 2]) {
    let b = button(state);
    let dx = p[0] - b[0];
    let out_x = (dx.abs() - params.half_outer()).max(0.0);
    let out_y = (p[1] - b[1]).max(0.0);
    let dist = out_x.hypot(out_y);
    if dist == 0.0 {
        return (0.0, [0.0, 0.0]);
    }
    (dist, [dx.signum() * out_x / dist, out_y / dist])
}

pub(super) fn reference_waypoint(_params: &PressButtonParams, state: &EnvState) -> [f64; 2] {
    let b = button(state);
    [b[0], state.p[1].max(b[1])]
}

pub(super) fn in_corridor(params: &PressButtonParams, state: &EnvState) -> bool {
    let b = button(state);
    (state.p[0] - b[0]).abs() <= params.width / 2.0 && state.p[1] >= b[1]
}

pub(super) fn task_distance(_params: &PressButtonParams, state: &EnvState) -> f64 {
    let b = button(state);
    (state.p[0] - b[0]).hypot(state.p[1] - b[1])
}

/// Lift clear of the button if low, slide toward the approach line while
/// staying above a 45-degree cone, then descend.
pub(super) fn scripted_action(params: &EnvParams, state: &EnvState, kp: f64) -> [f64; 2] {
    let press = &params.press;
    let b = button(state);
    let p = state.p;
    let dx = b[0] - p[0];
    let half = press.width / 2.0;
    if p[1] < b[1] || (p[1] < b[1] + press.clearance && dx.abs() > half) {
        return [0.0, 1.0];
    }
    let waypoint = reference_waypoint(press, state);
    let lateral = toward(p, waypoint, kp, params.a_max)[0];
    if dx.abs() > press.align_tol {
        let margin = p[1] - (b[1] + press.clearance + dx.abs());
        [lateral, -(margin / params.a_max).clamp(0.0, 1.0)]
    } else {
        [lateral, -1.0]
    }
}
