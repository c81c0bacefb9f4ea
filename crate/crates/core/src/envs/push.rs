//! `push_ball`: shove a sliding disc into a goal region under per-episode
//! random friction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clamp_unit, norm, sub, toward, EnvId, EnvParams, EnvState, TaskState};
use crate::error::{Error, Result};

pub(super) const OBS_DIM: usize = 11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushBallParams {
    pub horizon: usize,
    pub agent_radius: f64,
    pub ball_radius: f64,
    pub goal_radius: f64,
    /// Per-episode friction is uniform in `[mu_lo, mu_hi]`; the ball's
    /// velocity shrinks by the factor `1 - mu` each step.
    pub mu_lo: f64,
    pub mu_hi: f64,
    /// Fraction of the contact displacement imparted as ball velocity.
    pub push_gain: f64,
    /// A ball whose edge is closer than this to a wall can be wedged.
    pub wedge_gap: f64,
    /// Extra radius around a wedgeable ball inside which the agent is unsafe.
    pub wedge_margin: f64,
    pub ball_start_x: [f64; 2],
    pub ball_start_y: [f64; 2],
    pub goal_x: [f64; 2],
    pub goal_y: [f64; 2],
    pub agent_start_x: [f64; 2],
    pub agent_start_y: [f64; 2],
    /// Distance to the push point within which the scripted controller
    /// starts pushing.
    pub align_tol: f64,
    pub safe_pose: [f64; 2],
}

impl Default for PushBallParams {
    fn default() -> Self {
        Self {
            horizon: 200,
            agent_radius: 0.02,
            ball_radius: 0.04,
            goal_radius: 0.06,
            mu_lo: 0.05,
            mu_hi: 0.25,
            push_gain: 0.5,
            wedge_gap: 0.06,
            wedge_margin: 0.03,
            ball_start_x: [0.3, 0.7],
            ball_start_y: [0.3, 0.45],
            goal_x: [0.25, 0.75],
            goal_y: [0.65, 0.8],
            agent_start_x: [0.2, 0.8],
            agent_start_y: [0.08, 0.18],
            align_tol: 0.02,
            safe_pose: [0.5, 0.1],
        }
    }
}

impl PushBallParams {
    pub(super) fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("push_ball horizon must be positive".into()));
        }
        if !(0.0 <= self.mu_lo && self.mu_lo <= self.mu_hi && self.mu_hi < 1.0) {
            return Err(Error::Config(format!(
                "push_ball friction range [{}, {}] must satisfy 0 <= lo <= hi < 1",
                self.mu_lo, self.mu_hi
            )));
        }
        if self.agent_radius <= 0.0 || self.ball_radius <= 0.0 || self.goal_radius <= 0.0 {
            return Err(Error::Config("push_ball radii must be positive".into()));
        }
        Ok(())
    }

    fn contact(&self) -> f64 {
        self.agent_radius + self.ball_radius
    }

    /// Stand-off of the push point behind the ball.
    fn standoff(&self) -> f64 {
        self.contact() + 0.01
    }
}

struct Ball {
    o: [f64; 2],
    ball_v: [f64; 2],
    goal: [f64; 2],
    mu: f64,
}

fn ball(state: &EnvState) -> Ball {
    match state.task {
        TaskState::Ball { o, ball_v, goal, mu } => Ball { o, ball_v, goal, mu },
        _ => unreachable!("push_ball state without a ball"),
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    rng.gen_range(range[0]..=range[1])
}

pub(super) fn initial_state(params: &PushBallParams, seed: u64, rng: &mut ChaCha8Rng) -> EnvState {
    let o = [uniform(rng, params.ball_start_x), uniform(rng, params.ball_start_y)];
    let goal = [uniform(rng, params.goal_x), uniform(rng, params.goal_y)];
    let mu = uniform(rng, [params.mu_lo, params.mu_hi]);
    let mut p = [
        uniform(rng, params.agent_start_x),
        uniform(rng, params.agent_start_y),
    ];
    // never start in contact with the ball
    if norm(sub(p, o)) < params.contact() + 0.02 {
        p[1] = (o[1] - params.contact() - 0.02).max(0.0);
    }
    EnvState {
        id: EnvId::PushBall,
        p,
        v: [0.0, 0.0],
        task: TaskState::Ball {
            o,
            ball_v: [0.0, 0.0],
            goal,
            mu,
        },
        t: 0,
        seed,
    }
}

pub(super) fn observe(params: &EnvParams, state: &EnvState) -> Vec<f64> {
    let b = ball(state);
    vec![
        state.p[0],
        state.p[1],
        state.v[0] / params.a_max,
        state.v[1] / params.a_max,
        b.o[0] - state.p[0],
        b.o[1] - state.p[1],
        b.goal[0] - b.o[0],
        b.goal[1] - b.o[1],
        b.ball_v[0] / params.a_max,
        b.ball_v[1] / params.a_max,
        state.t as f64 / params.push.horizon as f64,
    ]
}

fn clamp_ball(params: &PushBallParams, o: &mut [f64; 2], v: &mut [f64; 2]) -> bool {
    let r = params.ball_radius;
    let mut hit = false;
    for k in 0..2 {
        if o[k] < r {
            o[k] = r;
            v[k] = 0.0;
            hit = true;
        } else if o[k] > 1.0 - r {
            o[k] = 1.0 - r;
            v[k] = 0.0;
            hit = true;
        }
    }
    hit
}

pub(super) fn advance(params: &EnvParams, state: &mut EnvState, a: [f64; 2]) -> bool {
    let push = &params.push;
    let Ball {
        mut o,
        mut ball_v,
        goal,
        mu,
    } = ball(state);

    // ball slides, then friction
    o = [o[0] + ball_v[0], o[1] + ball_v[1]];
    clamp_ball(push, &mut o, &mut ball_v);
    ball_v = [ball_v[0] * (1.0 - mu), ball_v[1] * (1.0 - mu)];

    let prev = state.p;
    let mut next = clamp_unit([prev[0] + params.a_max * a[0], prev[1] + params.a_max * a[1]]);
    let gap = norm(sub(o, next));
    if gap < push.contact() {
        let n = if gap > 1e-12 {
            [(o[0] - next[0]) / gap, (o[1] - next[1]) / gap]
        } else {
            let d = norm(sub(next, prev));
            if d > 1e-12 {
                [(next[0] - prev[0]) / d, (next[1] - prev[1]) / d]
            } else {
                [0.0, 1.0]
            }
        };
        let before = o;
        o = [next[0] + n[0] * push.contact(), next[1] + n[1] * push.contact()];
        let mut scratch = [0.0, 0.0];
        if clamp_ball(push, &mut o, &mut scratch) {
            // wedged against a wall: the agent cannot overlap the ball
            next = clamp_unit([o[0] - n[0] * push.contact(), o[1] - n[1] * push.contact()]);
        }
        ball_v = [
            ball_v[0] + push.push_gain * (o[0] - before[0]),
            ball_v[1] + push.push_gain * (o[1] - before[1]),
        ];
        let speed = norm(ball_v);
        if speed > params.a_max {
            ball_v = [ball_v[0] * params.a_max / speed, ball_v[1] * params.a_max / speed];
        }
    }
    state.v = [next[0] - prev[0], next[1] - prev[1]];
    state.p = next;
    state.task = TaskState::Ball { o, ball_v, goal, mu };
    norm(sub(o, goal)) <= push.goal_radius
}

fn wall_gap(params: &PushBallParams, o: [f64; 2]) -> f64 {
    let r = params.ball_radius;
    (o[0] - r).min(1.0 - r - o[0]).min(o[1] - r).min(1.0 - r - o[1])
}

fn wedge_radius(params: &PushBallParams) -> f64 {
    params.contact() + params.wedge_margin
}

/// Agent pressed up against a ball that sits next to a wall; open set.
pub(super) fn is_unsafe(params: &PushBallParams, state: &EnvState) -> bool {
    let b = ball(state);
    wall_gap(params, b.o) < params.wedge_gap && norm(sub(state.p, b.o)) < wedge_radius(params)
}

pub(super) fn unsafe_distance(
    params: &PushBallParams,
    state: &EnvState,
    p: [f64; 2],
) -> Option<(f64, [f64; 2])> {
    let b = ball(state);
    if wall_gap(params, b.o) >= params.wedge_gap {
        return None;
    }
    let rel = sub(p, b.o);
    let r = norm(rel);
    let dist = (r - wedge_radius(params)).max(0.0);
    if dist == 0.0 {
        return Some((0.0, [0.0, 0.0]));
    }
    Some((dist, [rel[0] / r, rel[1] / r]))
}

fn at_goal(params: &PushBallParams, b: &Ball) -> bool {
    norm(sub(b.o, b.goal)) <= params.goal_radius
}

fn push_direction(b: &Ball) -> [f64; 2] {
    let d = sub(b.goal, b.o);
    let n = norm(d);
    if n > 1e-12 {
        [d[0] / n, d[1] / n]
    } else {
        [0.0, 1.0]
    }
}

pub(super) fn reference_waypoint(params: &PushBallParams, state: &EnvState) -> [f64; 2] {
    let b = ball(state);
    if at_goal(params, &b) {
        return state.p;
    }
    let dir = push_direction(&b);
    [
        b.o[0] - dir[0] * params.standoff(),
        b.o[1] - dir[1] * params.standoff(),
    ]
}

pub(super) fn in_corridor(params: &PushBallParams, state: &EnvState) -> bool {
    if is_unsafe(params, state) {
        return false;
    }
    let b = ball(state);
    at_goal(params, &b) || norm(sub(state.p, reference_waypoint(params, state))) <= params.align_tol + 0.01
}

pub(super) fn task_distance(params: &PushBallParams, state: &EnvState) -> f64 {
    let b = ball(state);
    norm(sub(b.o, b.goal)) + norm(sub(state.p, reference_waypoint(params, state)))
}

/// Work around the ball to the push point behind it, then push along the
/// ball-to-goal line.
pub(super) fn scripted_action(params: &EnvParams, state: &EnvState, kp: f64) -> [f64; 2] {
    let push = &params.push;
    let b = ball(state);
    if at_goal(push, &b) {
        return [0.0, 0.0];
    }
    let dir = push_direction(&b);
    let p = state.p;
    let behind = reference_waypoint(push, state);

    if norm(sub(p, behind)) <= push.align_tol {
        // aligned: drive through the ball along the push line
        let target = [behind[0] + dir[0] * params.a_max, behind[1] + dir[1] * params.a_max];
        return toward(p, target, kp, params.a_max);
    }
    let keep_out = push.contact() + 0.005;
    if segment_distance(b.o, p, behind) >= keep_out {
        return toward(p, behind, kp, params.a_max);
    }
    // orbit the ball on a circle slightly wider than the push point,
    // turning the short way round toward it
    let orbit = push.standoff() + 0.01;
    let rel = sub(p, b.o);
    let r = norm(rel).max(1e-9);
    let radial = [rel[0] / r, rel[1] / r];
    let to_behind = sub(behind, b.o);
    let turn = if radial[0] * to_behind[1] - radial[1] * to_behind[0] >= 0.0 {
        1.0
    } else {
        -1.0
    };
    let tangent = [-radial[1] * turn, radial[0] * turn];
    let correction = ((orbit - r) / params.a_max).clamp(-1.0, 1.0);
    let raw = [
        tangent[0] + radial[0] * correction,
        tangent[1] + radial[1] * correction,
    ];
    let scale = raw[0].abs().max(raw[1].abs()).max(1.0);
    [raw[0] / scale, raw[1] / scale]
}

/// Distance from `c` to the segment `a`-`b`.
fn segment_distance(c: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = sub(b, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return norm(sub(c, a));
    }
    let ac = sub(c, a);
    let t = ((ac[0] * ab[0] + ac[1] * ab[1]) / len2).clamp(0.0, 1.0);
    norm(sub(c, [a[0] + t * ab[0], a[1] + t * ab[1]]))
}
