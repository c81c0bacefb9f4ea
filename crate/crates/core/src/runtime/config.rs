//! Flat `key = value` run configuration with dotted section keys.
//!
//! ```text
//! # comments start with '#'
//! env.id = press_button
//! learner.mode = ohprl
//! learner.hidden = 32,32
//! intervention.mode = oracle
//! ```
//!
//! [`RunConfig::to_text`] writes every key in a fixed order; that text is
//! what checkpoint manifests hash.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::envs::{EnvId, EnvParams};
use crate::error::{Error, Result};
use crate::intervention::{InterventionMode, OracleParams};
use crate::learner::{Ablation, LearnerConfig, Mode};
use crate::replay::DEFAULT_CAPACITY;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env_id: EnvId,
    pub env: EnvParams,
    /// Training episode `k` resets with seed `env_seed + k`.
    pub env_seed: u64,
    /// First seed of the held-out evaluation set.
    pub eval_seed: u64,
    pub learner: LearnerConfig,
    pub intervention: InterventionMode,
    pub oracle: OracleParams,
    pub prefill_demos: usize,
    pub prefill_rollouts: usize,
    pub online_capacity: usize,
    pub pref_capacity: usize,
    pub total_env_steps: u64,
    /// Also stop after this many finished episodes; 0 means no limit.
    pub max_episodes: u64,
    /// Environment steps between periodic checkpoints.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub metrics_window: usize,
    pub metrics_ema_k: f64,
    pub out_dir: PathBuf,
    pub write_traces: bool,
    pub serve_bind: String,
    pub serve_frame_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env_id: EnvId::PressButton,
            env: EnvParams::default(),
            env_seed: 0,
            eval_seed: 1_000_000,
            learner: LearnerConfig::default(),
            intervention: InterventionMode::Oracle,
            oracle: OracleParams::default(),
            prefill_demos: 20,
            prefill_rollouts: 10,
            online_capacity: DEFAULT_CAPACITY,
            pref_capacity: DEFAULT_CAPACITY,
            total_env_steps: 20_000,
            max_episodes: 0,
            eval_every: 5_000,
            eval_episodes: 50,
            metrics_window: 20,
            metrics_ema_k: 0.1,
            out_dir: PathBuf::from("runs/default"),
            write_traces: true,
            serve_bind: "127.0.0.1:8765".into(),
            serve_frame_rate: 20.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true/false, got `{value}`"))),
    }
}

fn parse_pair(key: &str, value: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("`{key}`: expected `x,y`, got `{value}`")));
    }
    Ok([parse(key, parts[0])?, parse(key, parts[1])?])
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|p| parse(key, p.trim())).collect()
}

fn pair(p: [f64; 2]) -> String {
    format!("{},{}", p[0], p[1])
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let press = &mut self.env.press;
        let push = &mut self.env.push;
        let l = &mut self.learner;
        let o = &mut self.oracle;
        match key.trim() {
            "env.id" => self.env_id = v.parse()?,
            "env.seed" => self.env_seed = parse(key, v)?,
            "env.eval_seed" => self.eval_seed = parse(key, v)?,
            "env.a_max" => self.env.a_max = parse(key, v)?,
            "env.press.horizon" => press.horizon = parse(key, v)?,
            "env.press.button" => press.button = parse_pair(key, v)?,
            "env.press.width" => press.width = parse(key, v)?,
            "env.press.band_width" => press.band_width = parse(key, v)?,
            "env.press.clearance" => press.clearance = parse(key, v)?,
            "env.press.start_x" => press.start_x = parse_pair(key, v)?,
            "env.press.start_y" => press.start_y = parse_pair(key, v)?,
            "env.press.safe_pose" => press.safe_pose = parse_pair(key, v)?,
            "env.push.horizon" => push.horizon = parse(key, v)?,
            "env.push.agent_radius" => push.agent_radius = parse(key, v)?,
            "env.push.ball_radius" => push.ball_radius = parse(key, v)?,
            "env.push.goal_radius" => push.goal_radius = parse(key, v)?,
            "env.push.mu" => [push.mu_lo, push.mu_hi] = parse_pair(key, v)?,
            "env.push.push_gain" => push.push_gain = parse(key, v)?,
            "env.push.wedge_gap" => push.wedge_gap = parse(key, v)?,
            "env.push.wedge_margin" => push.wedge_margin = parse(key, v)?,
            "env.push.safe_pose" => push.safe_pose = parse_pair(key, v)?,
            "learner.mode" => l.mode = v.parse::<Mode>()?,
            "learner.ablation" => l.ablation = v.parse::<Ablation>()?,
            "learner.gamma" => l.gamma = parse(key, v)?,
            "learner.alpha" => l.alpha = parse(key, v)?,
            "learner.lambda_pref" => l.lambda_pref = parse(key, v)?,
            "learner.lr_theta" => l.lr_theta = parse(key, v)?,
            "learner.lr_phi" => l.lr_phi = parse(key, v)?,
            "learner.lr_beta" => l.lr_beta = parse(key, v)?,
            "learner.tau" => l.tau = parse(key, v)?,
            "learner.utd" => l.utd = parse(key, v)?,
            "learner.batch_n" => l.batch_n = parse(key, v)?,
            "learner.fixed_beta_value" => l.fixed_beta_value = parse(key, v)?,
            "learner.twin_critic" => l.twin_critic = parse_bool(key, v)?,
            "learner.sync_every" => l.sync_every = parse(key, v)?,
            "learner.seed" => l.seed = parse(key, v)?,
            "learner.hidden" => l.hidden = parse_list(key, v)?,
            "learner.combined_actor_loss" => l.combined_actor_loss = parse_bool(key, v)?,
            "intervention.mode" => self.intervention = v.parse()?,
            "intervention.stall_steps" => o.stall_steps = parse(key, v)?,
            "intervention.progress_eps" => o.progress_eps = parse(key, v)?,
            "intervention.kp" => o.kp = parse(key, v)?,
            "intervention.release_steps" => o.release_steps = parse(key, v)?,
            "intervention.safe_pose" => {
                o.safe_pose = if v == "default" { None } else { Some(parse_pair(key, v)?) }
            }
            "intervention.safe_radius" => o.safe_radius = parse(key, v)?,
            "prefill.demos" => self.prefill_demos = parse(key, v)?,
            "prefill.rollouts" => self.prefill_rollouts = parse(key, v)?,
            "replay.online_capacity" => self.online_capacity = parse(key, v)?,
            "replay.pref_capacity" => self.pref_capacity = parse(key, v)?,
            "run.total_env_steps" => self.total_env_steps = parse(key, v)?,
            "run.max_episodes" => self.max_episodes = parse(key, v)?,
            "run.eval_every" => self.eval_every = parse(key, v)?,
            "run.eval_episodes" => self.eval_episodes = parse(key, v)?,
            "run.out_dir" => self.out_dir = PathBuf::from(v),
            "run.write_traces" => self.write_traces = parse_bool(key, v)?,
            "metrics.window" => self.metrics_window = parse(key, v)?,
            "metrics.ema_k" => self.metrics_ema_k = parse(key, v)?,
            "serve.bind" => self.serve_bind = v.to_string(),
            "serve.frame_rate" => self.serve_frame_rate = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a whole config text on top of the defaults.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides as given on the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{}` is not key=value", o.as_ref())))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.learner.validate()?;
        self.oracle.validate()?;
        if self.total_env_steps == 0 {
            return Err(Error::Config("run.total_env_steps must be positive".into()));
        }
        if self.eval_every == 0 || self.metrics_window == 0 {
            return Err(Error::Config("run.eval_every and metrics.window must be positive".into()));
        }
        if !(self.metrics_ema_k > 0.0 && self.metrics_ema_k <= 1.0) {
            return Err(Error::Config("metrics.ema_k must lie in (0, 1]".into()));
        }
        if self.online_capacity == 0 || self.pref_capacity == 0 {
            return Err(Error::Config("replay capacities must be positive".into()));
        }
        if !(self.serve_frame_rate > 0.0) {
            return Err(Error::Config("serve.frame_rate must be positive".into()));
        }
        let mode = self.learner.mode;
        let overrides_possible = self.intervention != InterventionMode::None;
        if matches!(mode, Mode::Ohprl) && self.prefill_demos == 0 {
            return Err(Error::Config(
                "mode ohprl needs at least one demonstration episode (prefill.demos)".into(),
            ));
        }
        if mode != Mode::Ohprl && self.prefill_demos == 0 && !overrides_possible {
            return Err(Error::Config(format!(
                "mode {mode} with no demonstrations and intervention none never sees a preferred action"
            )));
        }
        Ok(())
    }

    /// Every key in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.env.press;
        let u = &self.env.push;
        let l = &self.learner;
        let o = &self.oracle;
        vec![
            ("env.id", self.env_id.to_string()),
            ("env.seed", self.env_seed.to_string()),
            ("env.eval_seed", self.eval_seed.to_string()),
            ("env.a_max", self.env.a_max.to_string()),
            ("env.press.horizon", p.horizon.to_string()),
            ("env.press.button", pair(p.button)),
            ("env.press.width", p.width.to_string()),
            ("env.press.band_width", p.band_width.to_string()),
            ("env.press.clearance", p.clearance.to_string()),
            ("env.press.start_x", pair(p.start_x)),
            ("env.press.start_y", pair(p.start_y)),
            ("env.press.safe_pose", pair(p.safe_pose)),
            ("env.push.horizon", u.horizon.to_string()),
            ("env.push.agent_radius", u.agent_radius.to_string()),
            ("env.push.ball_radius", u.ball_radius.to_string()),
            ("env.push.goal_radius", u.goal_radius.to_string()),
            ("env.push.mu", pair([u.mu_lo, u.mu_hi])),
            ("env.push.push_gain", u.push_gain.to_string()),
            ("env.push.wedge_gap", u.wedge_gap.to_string()),
            ("env.push.wedge_margin", u.wedge_margin.to_string()),
            ("env.push.safe_pose", pair(u.safe_pose)),
            ("learner.mode", l.mode.to_string()),
            ("learner.ablation", l.ablation.to_string()),
            ("learner.gamma", l.gamma.to_string()),
            ("learner.alpha", l.alpha.to_string()),
            ("learner.lambda_pref", l.lambda_pref.to_string()),
            ("learner.lr_theta", l.lr_theta.to_string()),
            ("learner.lr_phi", l.lr_phi.to_string()),
            ("learner.lr_beta", l.lr_beta.to_string()),
            ("learner.tau", l.tau.to_string()),
            ("learner.utd", l.utd.to_string()),
            ("learner.batch_n", l.batch_n.to_string()),
            ("learner.fixed_beta_value", l.fixed_beta_value.to_string()),
            ("learner.twin_critic", l.twin_critic.to_string()),
            ("learner.sync_every", l.sync_every.to_string()),
            ("learner.seed", l.seed.to_string()),
            (
                "learner.hidden",
                l.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            ),
            ("learner.combined_actor_loss", l.combined_actor_loss.to_string()),
            ("intervention.mode", self.intervention.to_string()),
            ("intervention.stall_steps", o.stall_steps.to_string()),
            ("intervention.progress_eps", o.progress_eps.to_string()),
            ("intervention.kp", o.kp.to_string()),
            ("intervention.release_steps", o.release_steps.to_string()),
            ("intervention.safe_pose", o.safe_pose.map_or("default".into(), pair)),
            ("intervention.safe_radius", o.safe_radius.to_string()),
            ("prefill.demos", self.prefill_demos.to_string()),
            ("prefill.rollouts", self.prefill_rollouts.to_string()),
            ("replay.online_capacity", self.online_capacity.to_string()),
            ("replay.pref_capacity", self.pref_capacity.to_string()),
            ("run.total_env_steps", self.total_env_steps.to_string()),
            ("run.max_episodes", self.max_episodes.to_string()),
            ("run.eval_every", self.eval_every.to_string()),
            ("run.eval_episodes", self.eval_episodes.to_string()),
            ("run.out_dir", self.out_dir.display().to_string()),
            ("run.write_traces", self.write_traces.to_string()),
            ("metrics.window", self.metrics_window.to_string()),
            ("metrics.ema_k", self.metrics_ema_k.to_string()),
            ("serve.bind", self.serve_bind.clone()),
            ("serve.frame_rate", self.serve_frame_rate.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hex SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trips_every_key() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&[
            "env.id=push_ball",
            "learner.hidden=16,8",
            "intervention.safe_pose=0.4,0.2",
            "env.push.mu=0.1,0.2",
            "learner.ablation=off_target",
        ])
        .unwrap();
        let back = RunConfig::parse_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(RunConfig::default().hash(), cfg.hash());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse_text("# run\n\nlearner.gamma = 0.9  # discount\n").unwrap();
        assert_eq!(cfg.learner.gamma, 0.9);
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(RunConfig::parse_text("learner.gamma 0.9").is_err());
        assert!(RunConfig::parse_text("learner.gama = 0.9").is_err());
        assert!(RunConfig::parse_text("learner.mode = dagger").is_err());
        assert!(RunConfig::parse_text("intervention.mode = telepathy").is_err());
    }

    #[test]
    fn validation_rules() {
        assert!(RunConfig::default().validate().is_ok());
        let mut cfg = RunConfig::default();
        cfg.total_env_steps = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&["learner.mode=bc", "prefill.demos=0", "intervention.mode=none"])
            .unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = RunConfig::default();
        cfg.prefill_demos = 0;
        assert!(cfg.validate().is_err());
    }
}
