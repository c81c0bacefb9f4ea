//! Losses and the four-stage update: base actor-critic step, online gate
//! step, preference gate step, gate-weighted preference actor step.

pub mod losses;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::PreferenceTuple;
use crate::nets::{self, polyak_update, value_and_grad, Adam, GateBatch, Head, ParamSet, Reduce};
use crate::replay::{build_base_batch, BufferPair, Transition};

pub use losses::{
    advantage, critic_target, gate_target, preference_term, ActorLoss, BcLoss, CriticLoss,
    ImitationLoss, OnlineGateLoss, PrefActorLoss, PrefGateLoss, PreferenceBatch, TransitionBatch,
};

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $s),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

string_enum!(Mode {
    Ohprl => "ohprl",
    ReplayOnly => "replay_only",
    Bc => "bc",
    SilRi => "sil_ri",
});

string_enum!(Ablation {
    None => "none",
    FixedBeta => "fixed_beta",
    OffTarget => "off_target",
    WithoutRl => "without_rl",
});

impl Mode {
    pub fn has_gate(&self) -> bool {
        matches!(self, Mode::Ohprl)
    }

    pub fn has_critic(&self) -> bool {
        !matches!(self, Mode::Bc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub lambda_pref: f64,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub lr_beta: f64,
    pub tau: f64,
    pub utd: usize,
    pub batch_n: usize,
    pub mode: Mode,
    pub ablation: Ablation,
    pub fixed_beta_value: f64,
    pub twin_critic: bool,
    pub sync_every: u64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Folds the preference actor term into the base actor step as one
    /// gradient instead of a separate sequential step.
    pub combined_actor_loss: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.1,
            lambda_pref: 1.0,
            lr_theta: 3e-4,
            lr_phi: 3e-4,
            lr_beta: 3e-4,
            tau: 0.005,
            utd: 4,
            batch_n: 128,
            mode: Mode::Ohprl,
            ablation: Ablation::None,
            fixed_beta_value: 0.5,
            twin_critic: true,
            sync_every: 50,
            seed: 0,
            hidden: vec![64, 64],
            combined_actor_loss: false,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("learner.gamma must lie in (0, 1)");
        }
        if !(self.alpha >= 0.0) || !(self.lambda_pref >= 0.0) {
            return bad("learner.alpha and learner.lambda_pref must be non-negative");
        }
        if !(self.lr_theta > 0.0 && self.lr_phi > 0.0 && self.lr_beta > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("learner.tau must lie in [0, 1]");
        }
        if self.utd == 0 || self.batch_n == 0 || self.sync_every == 0 {
            return bad("learner.utd, learner.batch_n and learner.sync_every must be at least 1");
        }
        if !(self.fixed_beta_value > 0.0 && self.fixed_beta_value < 1.0) {
            return bad("learner.fixed_beta_value must lie in (0, 1)");
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return bad("learner.hidden widths must be positive");
        }
        if self.ablation != Ablation::None && self.mode != Mode::Ohprl {
            return Err(Error::Config(format!(
                "ablation `{}` only applies to mode ohprl, not `{}`",
                self.ablation, self.mode
            )));
        }
        Ok(())
    }

    pub fn reduce(&self) -> Reduce {
        if self.twin_critic {
            Reduce::Min
        } else {
            Reduce::First
        }
    }
}

/// All trainable parameters of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Nets {
    pub policy: ParamSet,
    pub critics: Vec<ParamSet>,
    pub critic_targets: Vec<ParamSet>,
    pub gate: Option<ParamSet>,
}

// per-network seed offsets so adding or removing one network never changes
// another's initialization
const SEED_POLICY: u64 = 0x706f_6c69;
const SEED_CRITIC: u64 = 0x6372_6974;
const SEED_GATE: u64 = 0x6761_7465;

impl Nets {
    pub fn init(config: &LearnerConfig, obs_dim: usize, act_dim: usize) -> Result<Self> {
        let seed = config.seed;
        let policy = ParamSet::init(
            &nets::widths(obs_dim, &config.hidden, 2 * act_dim),
            Head::Policy,
            seed ^ SEED_POLICY,
        )?;
        let heads = if config.twin_critic { 2 } else { 1 };
        let critics = (0..heads as u64)
            .map(|k| {
                ParamSet::init(
                    &nets::widths(obs_dim + act_dim, &config.hidden, 1),
                    Head::Critic,
                    (seed ^ SEED_CRITIC).wrapping_add(k),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let gate = if config.mode.has_gate() {
            Some(ParamSet::init(
                &nets::widths(obs_dim, &config.hidden, 1),
                Head::Gate,
                seed ^ SEED_GATE,
            )?)
        } else {
            None
        };
        Ok(Self {
            policy,
            critic_targets: critics.clone(),
            critics,
            gate,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_width()
    }

    pub fn act_dim(&self) -> usize {
        self.policy.output_width() / 2
    }
}

/// Losses and diagnostics of one learner step. Absent entries belong to
/// stages the active mode does not run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub step: u64,
    pub loss_critic: Option<f64>,
    pub loss_actor: Option<f64>,
    pub loss_online_gate: Option<f64>,
    pub loss_pref_gate: Option<f64>,
    pub loss_pref_actor: Option<f64>,
    pub loss_bc: Option<f64>,
    pub mean_beta_online: Option<f64>,
    pub mean_beta_pref: Option<f64>,
    pub mean_advantage: Option<f64>,
    /// Gate weights used by the preference actor step, one per item.
    pub pref_actor_betas: Vec<f64>,
    pub grad_norm_critic: Option<f64>,
    pub grad_norm_actor: Option<f64>,
    pub grad_norm_gate: Option<f64>,
    pub grad_norm_pref_actor: Option<f64>,
    pub policy_version: u64,
    pub critic_version: u64,
    pub gate_version: Option<u64>,
}

// independent randomness per (learner step, stage)
const STAGE_SAMPLE: u64 = 0;
const STAGE_TARGET: u64 = 1;
const STAGE_ACTOR: u64 = 2;
const STAGE_PREF_GATE: u64 = 3;
const STAGE_PREF_ACTOR: u64 = 4;
const STAGES: u64 = 8;

fn l2(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub struct Learner {
    config: LearnerConfig,
    nets: Nets,
    critic_opts: Vec<Adam>,
    actor_opt: Adam,
    gate_opt: Option<Adam>,
    steps: u64,
}

impl Learner {
    pub fn new(config: LearnerConfig, obs_dim: usize, act_dim: usize) -> Result<Self> {
        config.validate()?;
        let nets = Nets::init(&config, obs_dim, act_dim)?;
        Self::from_nets(config, nets)
    }

    pub fn from_nets(config: LearnerConfig, nets: Nets) -> Result<Self> {
        config.validate()?;
        if config.mode.has_gate() && nets.gate.is_none() {
            return Err(Error::Config(format!("mode {} needs a gate network", config.mode)));
        }
        let critic_opts = nets
            .critics
            .iter()
            .map(|c| Adam::new(config.lr_theta, c.len()))
            .collect();
        let actor_opt = Adam::new(config.lr_phi, nets.policy.len());
        let gate_opt = nets.gate.as_ref().map(|g| Adam::new(config.lr_beta, g.len()));
        Ok(Self {
            config,
            nets,
            critic_opts,
            actor_opt,
            gate_opt,
            steps: 0,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn nets(&self) -> &Nets {
        &self.nets
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn stage_rng(&self, stage: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.steps * STAGES + stage);
        rng
    }

    /// Samples from `buffers` and runs one update.
    pub fn step(&mut self, buffers: &BufferPair) -> Result<UpdateReport> {
        let (online, pref) = self.sample(buffers)?;
        self.step_on(&online, &pref)
    }

    /// The batches the next [`Learner::step`] would draw. Lets a threaded
    /// caller sample under the buffer lock and update outside it.
    pub fn sample(&self, buffers: &BufferPair) -> Result<(Vec<Transition>, Vec<PreferenceTuple>)> {
        let mut rng = self.stage_rng(STAGE_SAMPLE);
        let n = self.config.batch_n;
        if self.config.mode == Mode::Bc {
            Ok((Vec::new(), buffers.sample_pref(n, &mut rng)?))
        } else {
            buffers.sample_symmetric(n, &mut rng)
        }
    }

    /// One update on explicit batches.
    pub fn step_on(&mut self, online: &[Transition], pref: &[PreferenceTuple]) -> Result<UpdateReport> {
        let mut report = UpdateReport {
            step: self.steps,
            ..Default::default()
        };
        if self.config.mode == Mode::Bc {
            let stage = format!("bc (learner step {})", self.steps);
            self.bc_step(pref, &mut report, &stage)?;
        } else {
            let base = build_base_batch(online, pref);
            let pb = if pref.is_empty() { None } else { Some(PreferenceBatch::new(pref)?) };
            self.base_step(&base, pb.as_ref(), &mut report)?;
            if self.config.mode == Mode::Ohprl {
                self.gate_steps(online, pb.as_ref(), &mut report)?;
                if !self.config.combined_actor_loss {
                    if let Some(pb) = pb.as_ref() {
                        self.pref_actor_step(pb, &mut report)?;
                    }
                }
            } else if self.config.mode == Mode::SilRi {
                if let Some(pb) = pb.as_ref() {
                    self.imitation_step(pb, &mut report)?;
                }
            }
            for k in 0..self.nets.critics.len() {
                self.nets.critic_targets[k] =
                    polyak_update(&self.nets.critic_targets[k], &self.nets.critics[k], self.config.tau)?;
            }
        }
        report.policy_version = self.nets.policy.version();
        report.critic_version = self.nets.critics[0].version();
        report.gate_version = self.nets.gate.as_ref().map(ParamSet::version);
        self.steps += 1;
        Ok(report)
    }

    fn base_step(
        &mut self,
        base: &[Transition],
        pb: Option<&PreferenceBatch>,
        report: &mut UpdateReport,
    ) -> Result<()> {
        let cfg = &self.config;
        let reduce = cfg.reduce();
        let batch = TransitionBatch::new(base)?;
        let n = batch.n;
        let a_dim = batch.a_dim;

        let mut rng = self.stage_rng(STAGE_TARGET);
        let noise = normals(&mut rng, n * a_dim);
        let y = critic_target(
            &self.nets.policy,
            &self.nets.critic_targets,
            &batch.s_next,
            &batch.r,
            &batch.d,
            cfg.gamma,
            cfg.alpha,
            reduce,
            &noise,
        )?;
        let loss = CriticLoss {
            s: &batch.s,
            a: &batch.a,
            y: &y,
        };
        let refs: Vec<&ParamSet> = self.nets.critics.iter().collect();
        let (lc, grads) = value_and_grad(&loss, &refs)?;
        report.loss_critic = Some(lc);
        report.grad_norm_critic = Some(l2(&grads.concat()));
        let stage = format!("critic (learner step {})", self.steps);
        for (k, g) in grads.iter().enumerate() {
            self.nets.critics[k] = self.critic_opts[k].step(&self.nets.critics[k], g, &stage)?;
        }

        if cfg.ablation == Ablation::WithoutRl {
            return Ok(());
        }
        let mut rng = self.stage_rng(STAGE_ACTOR);
        let noise = normals(&mut rng, n * a_dim);
        let actor = ActorLoss {
            s: &batch.s,
            n,
            noise: &noise,
            critics: &self.nets.critics,
            alpha: cfg.alpha,
            reduce,
        };
        let (la, mut grads) = value_and_grad(&actor, &[&self.nets.policy])?;
        report.loss_actor = Some(la);
        report.grad_norm_actor = Some(l2(&grads[0]));
        if cfg.combined_actor_loss && cfg.mode == Mode::Ohprl {
            if let Some(pb) = pb {
                let (lp, g) = self.pref_actor_value_and_grad(pb, report)?;
                report.loss_pref_actor = Some(lp);
                report.grad_norm_pref_actor = Some(l2(&g));
                for (a, b) in grads[0].iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        let stage = format!("actor (learner step {})", self.steps);
        self.nets.policy = self.actor_opt.step(&self.nets.policy, &grads[0], &stage)?;
        Ok(())
    }

    fn gate_steps(
        &mut self,
        online: &[Transition],
        pb: Option<&PreferenceBatch>,
        report: &mut UpdateReport,
    ) -> Result<()> {
        if self.config.ablation == Ablation::FixedBeta {
            return Ok(());
        }
        let (mut gate, mut opt) = match (self.nets.gate.clone(), self.gate_opt.take()) {
            (Some(g), Some(o)) => (g, o),
            _ => return Err(Error::Config("gate network missing".into())),
        };
        let result = self.fit_gate(&mut gate, &mut opt, online, pb, report);
        self.gate_opt = Some(opt);
        result?;
        self.nets.gate = Some(gate);
        Ok(())
    }

    fn fit_gate(
        &self,
        gate: &mut ParamSet,
        opt: &mut Adam,
        online: &[Transition],
        pb: Option<&PreferenceBatch>,
        report: &mut UpdateReport,
    ) -> Result<()> {
        let mut gnorm = 0.0;
        if !online.is_empty() {
            let ob = TransitionBatch::new(online)?;
            let loss = OnlineGateLoss { s: &ob.s, n: ob.n };
            let mean_beta = GateBatch::forward(gate, &ob.s, ob.n)?.betas.iter().sum::<f64>() / ob.n as f64;
            let (l, g) = value_and_grad(&loss, &[gate])?;
            report.loss_online_gate = Some(l);
            report.mean_beta_online = Some(mean_beta);
            gnorm += l2(&g[0]).powi(2);
            *gate = opt.step(gate, &g[0], &format!("online gate (learner step {})", self.steps))?;
        }
        if let Some(pb) = pb {
            let targets: Vec<f64> = if self.config.ablation == Ablation::OffTarget {
                report.mean_advantage = None;
                vec![0.5; pb.n]
            } else {
                let mut rng = self.stage_rng(STAGE_PREF_GATE);
                let noise = normals(&mut rng, pb.n * pb.a_dim);
                let adv = advantage(
                    &self.nets.policy,
                    &self.nets.critics,
                    &pb.s,
                    &pb.a_p,
                    self.config.reduce(),
                    &noise,
                )?;
                report.mean_advantage = Some(adv.iter().sum::<f64>() / pb.n as f64);
                adv.into_iter().map(gate_target).collect()
            };
            let loss = PrefGateLoss {
                s: &pb.s,
                targets: &targets,
            };
            let mean_beta = GateBatch::forward(gate, &pb.s, pb.n)?.betas.iter().sum::<f64>() / pb.n as f64;
            let (l, g) = value_and_grad(&loss, &[gate])?;
            report.loss_pref_gate = Some(l);
            report.mean_beta_pref = Some(mean_beta);
            gnorm += l2(&g[0]).powi(2);
            *gate = opt.step(gate, &g[0], &format!("preference gate (learner step {})", self.steps))?;
        }
        report.grad_norm_gate = Some(gnorm.sqrt());
        Ok(())
    }

    fn step4_betas(&self, pb: &PreferenceBatch) -> Result<Vec<f64>> {
        if self.config.ablation == Ablation::FixedBeta {
            return Ok(vec![self.config.fixed_beta_value; pb.n]);
        }
        let gate = self
            .nets
            .gate
            .as_ref()
            .ok_or_else(|| Error::Config("gate network missing".into()))?;
        Ok(GateBatch::forward(gate, &pb.s, pb.n)?.betas)
    }

    fn pref_actor_value_and_grad(
        &self,
        pb: &PreferenceBatch,
        report: &mut UpdateReport,
    ) -> Result<(f64, Vec<f64>)> {
        let betas = self.step4_betas(pb)?;
        let mut rng = self.stage_rng(STAGE_PREF_ACTOR);
        let noise = normals(&mut rng, pb.n * pb.a_dim);
        let loss = PrefActorLoss {
            s: &pb.s,
            a_p: &pb.a_p,
            a_w: &pb.a_w,
            betas: &betas,
            noise: &noise,
            weight: self.config.lambda_pref,
        };
        let (l, mut g) = value_and_grad(&loss, &[&self.nets.policy])?;
        report.pref_actor_betas = betas;
        Ok((l, g.remove(0)))
    }

    fn pref_actor_step(&mut self, pb: &PreferenceBatch, report: &mut UpdateReport) -> Result<()> {
        // a zero-weighted term contributes nothing; skipping it keeps the
        // shared optimizer state identical to a run without the term
        if self.config.lambda_pref == 0.0 {
            return Ok(());
        }
        let (l, g) = self.pref_actor_value_and_grad(pb, report)?;
        report.loss_pref_actor = Some(l);
        report.grad_norm_pref_actor = Some(l2(&g));
        let stage = format!("preference actor (learner step {})", self.steps);
        self.nets.policy = self.actor_opt.step(&self.nets.policy, &g, &stage)?;
        Ok(())
    }

    fn imitation_step(&mut self, pb: &PreferenceBatch, report: &mut UpdateReport) -> Result<()> {
        if self.config.lambda_pref == 0.0 {
            return Ok(());
        }
        let mut rng = self.stage_rng(STAGE_PREF_ACTOR);
        let noise = normals(&mut rng, pb.n * pb.a_dim);
        let loss = ImitationLoss {
            s: &pb.s,
            a_p: &pb.a_p,
            noise: &noise,
            n: pb.n,
            weight: self.config.lambda_pref,
        };
        let (l, g) = value_and_grad(&loss, &[&self.nets.policy])?;
        report.loss_pref_actor = Some(l);
        report.grad_norm_pref_actor = Some(l2(&g[0]));
        let stage = format!("imitation actor (learner step {})", self.steps);
        self.nets.policy = self.actor_opt.step(&self.nets.policy, &g[0], &stage)?;
        Ok(())
    }

    fn bc_step(&mut self, pref: &[PreferenceTuple], report: &mut UpdateReport, stage: &str) -> Result<()> {
        let pb = PreferenceBatch::new(pref)?;
        let loss = BcLoss {
            s: &pb.s,
            a_p: &pb.a_p,
            n: pb.n,
        };
        let (l, g) = value_and_grad(&loss, &[&self.nets.policy])?;
        report.loss_bc = Some(l);
        report.grad_norm_actor = Some(l2(&g[0]));
        self.nets.policy = self.actor_opt.step(&self.nets.policy, &g[0], stage)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
