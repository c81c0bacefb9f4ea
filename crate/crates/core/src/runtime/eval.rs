//! Intervention-free evaluation and gate-field export.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::envs::{self, Env, EnvId, EnvParams, EnvState};
use crate::error::{Error, Result};
use crate::learner::Nets;
use crate::nets::{deterministic_action, gate_value, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_episode_length: f64,
    /// Seconds; hardware dependent.
    pub mean_wall_time: f64,
    pub successes: Vec<bool>,
}

/// Runs `n` episodes on seeds `seed_base..seed_base+n` with an arbitrary
/// state-feedback policy and no intervention.
pub fn evaluate_with<F>(env_id: EnvId, params: &EnvParams, n: usize, seed_base: u64, mut policy: F) -> Result<EvalReport>
where
    F: FnMut(&EnvParams, &EnvState, &[f64]) -> Result<Vec<f64>>,
{
    if n == 0 {
        return Err(Error::Validation("evaluation needs at least one episode".into()));
    }
    let mut successes = Vec::with_capacity(n);
    let mut total_len = 0usize;
    let mut total_time = 0.0;
    for k in 0..n as u64 {
        let start = Instant::now();
        let (mut env, first) = Env::reset(env_id, params, seed_base.wrapping_add(k));
        let mut obs = first.observation;
        let mut success = false;
        while env.is_active() {
            let a = policy(env.params(), env.state(), &obs)?;
            let r = env.step(&a)?;
            obs = r.observation;
            success |= r.info.success;
        }
        total_len += env.state().t;
        total_time += start.elapsed().as_secs_f64();
        successes.push(success);
    }
    let wins = successes.iter().filter(|&&s| s).count();
    Ok(EvalReport {
        episodes: n,
        success_rate: wins as f64 / n as f64,
        mean_episode_length: total_len as f64 / n as f64,
        mean_wall_time: total_time / n as f64,
        successes,
    })
}

/// Evaluates the deterministic policy `tanh(mean)`.
pub fn evaluate(policy: &ParamSet, env_id: EnvId, params: &EnvParams, n: usize, seed_base: u64) -> Result<EvalReport> {
    if policy.input_width() != env_id.obs_dim() {
        return Err(Error::Validation(format!(
            "policy expects {} observation features, {} produces {}",
            policy.input_width(),
            env_id.as_str(),
            env_id.obs_dim()
        )));
    }
    evaluate_with(env_id, params, n, seed_base, |_, _, obs| deterministic_action(policy, obs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateCell {
    pub x: f64,
    pub y: f64,
    pub beta: f64,
}

/// β over a `resolution x resolution` lattice of agent positions (cell
/// centres); everything else in the observation comes from the reset
/// state of `seed`.
pub fn gate_field(nets: &Nets, env_id: EnvId, params: &EnvParams, resolution: usize, seed: u64) -> Result<Vec<GateCell>> {
    let gate = nets
        .gate
        .as_ref()
        .ok_or_else(|| Error::Export("checkpoint has no gate parameters".into()))?;
    if resolution == 0 {
        return Err(Error::Export("grid resolution must be positive".into()));
    }
    if gate.input_width() != env_id.obs_dim() {
        return Err(Error::Export(format!(
            "gate expects {} features, {} produces {}",
            gate.input_width(),
            env_id.as_str(),
            env_id.obs_dim()
        )));
    }
    let (env, _) = Env::reset(env_id, params, seed);
    let mut rows = Vec::with_capacity(resolution * resolution);
    for j in 0..resolution {
        for i in 0..resolution {
            let x = (i as f64 + 0.5) / resolution as f64;
            let y = (j as f64 + 0.5) / resolution as f64;
            let obs = envs::observe_with_agent(params, env.state(), [x, y]);
            rows.push(GateCell {
                x,
                y,
                beta: gate_value(gate, &obs)?.beta,
            });
        }
    }
    Ok(rows)
}

pub fn write_gate_field(path: &Path, rows: &[GateCell]) -> Result<()> {
    let mut text = String::from("x,y,beta\n");
    for r in rows {
        text.push_str(&format!("{},{},{}\n", r.x, r.y, r.beta));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
