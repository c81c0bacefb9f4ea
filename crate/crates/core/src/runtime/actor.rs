//! The rollout side: propose, ask the intervenor, execute, record.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envs::{Env, EnvId, EnvParams, StepInfo};
use crate::error::Result;
use crate::intervention::{make_preference_tuple, Intervenor, PreferenceTuple, TriggerReason};
use crate::nets::{policy_sample, ParamSet};
use crate::replay::{BufferPair, Transition};
use crate::runtime::metrics::EpisodeRecord;
use crate::runtime::service::LiveBoard;
use crate::runtime::trace::{TraceFlags, TraceStep, TraceWriter};

/// What one environment step contributes to the buffers.
#[derive(Clone, Debug, PartialEq)]
pub enum StepData {
    Online(Transition),
    Preference(PreferenceTuple),
}

impl StepData {
    pub fn push_into(self, buffers: &mut BufferPair) {
        match self {
            StepData::Online(t) => buffers.online.push(t),
            StepData::Preference(t) => buffers.pref.push(t),
        }
    }
}

pub struct StepOutcome {
    pub data: StepData,
    pub info: StepInfo,
    pub trigger: TriggerReason,
    pub episode_end: Option<EpisodeRecord>,
}

pub struct ActorLoop {
    env: Env,
    intervenor: Box<dyn Intervenor>,
    policy: Arc<ParamSet>,
    rng: ChaCha8Rng,
    obs: Vec<f64>,
    seed_base: u64,
    episode: u64,
    seed: u64,
    ep_len: usize,
    ep_intervened: usize,
    ep_unsafe: usize,
    env_steps: u64,
    trace: Option<TraceWriter>,
    board: Option<Arc<LiveBoard>>,
}

impl ActorLoop {
    pub fn new(
        env_id: EnvId,
        params: &EnvParams,
        seed_base: u64,
        intervenor: Box<dyn Intervenor>,
        policy: Arc<ParamSet>,
        rng_seed: u64,
    ) -> Self {
        let (env, first) = Env::reset(env_id, params, seed_base);
        let mut actor = Self {
            env,
            intervenor,
            policy,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            obs: first.observation,
            seed_base,
            episode: 0,
            seed: seed_base,
            ep_len: 0,
            ep_intervened: 0,
            ep_unsafe: 0,
            env_steps: 0,
            trace: None,
            board: None,
        };
        actor.begin_episode();
        actor
    }

    pub fn with_trace(mut self, trace: TraceWriter) -> Self {
        self.trace = Some(trace);
        self
    }

    pub fn with_board(mut self, board: Arc<LiveBoard>) -> Self {
        self.board = Some(board);
        self
    }

    fn begin_episode(&mut self) {
        let params = self.env.params().clone();
        self.intervenor.begin_episode(&params, self.env.state());
        if let Some(board) = &self.board {
            board.publish_frame(&self.env, &StepInfo::default(), false, self.policy.version());
        }
    }

    pub fn set_policy(&mut self, policy: Arc<ParamSet>) {
        self.policy = policy;
    }

    pub fn policy_version(&self) -> u64 {
        self.policy.version()
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    /// One environment step with exactly one buffer contribution.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let noise: Vec<f64> = (0..crate::envs::ACTION_DIM)
            .map(|_| StandardNormal.sample(&mut self.rng))
            .collect();
        let proposal = policy_sample(&self.policy, &self.obs, &noise)?.action;
        let params = self.env.params().clone();
        let decision = self.intervenor.decide(&params, self.env.state(), &proposal);
        let executed: Vec<f64> = match decision.override_action {
            Some(a) => a.to_vec(),
            None => proposal.clone(),
        };
        let result = self.env.step(&executed)?;
        self.intervenor.observe(&params, &decision, self.env.state());
        self.env_steps += 1;
        self.ep_len += 1;
        self.ep_intervened += usize::from(decision.active);
        self.ep_unsafe += usize::from(result.info.unsafe_contact);

        let s = std::mem::replace(&mut self.obs, result.observation.clone());
        let data = if decision.active {
            StepData::Preference(make_preference_tuple(
                &s,
                &executed,
                Some(&proposal),
                result.reward,
                result.done,
                &result.observation,
                &mut self.rng,
            ))
        } else {
            StepData::Online(Transition {
                s,
                a: executed.clone(),
                r: result.reward,
                d: result.done,
                s_next: result.observation.clone(),
            })
        };

        if let Some(trace) = self.trace.as_mut() {
            trace.write(&TraceStep {
                episode: self.episode,
                seed: self.seed,
                t: self.env.state().t,
                p: self.env.state().p,
                a: executed,
                r: result.reward,
                flags: TraceFlags {
                    success: result.info.success,
                    unsafe_contact: result.info.unsafe_contact,
                    truncated: result.info.truncated,
                    intervened: decision.active,
                },
                trigger: decision.trigger_reason,
            })?;
        }
        if let Some(board) = &self.board {
            board.publish_frame(&self.env, &result.info, decision.active, self.policy.version());
        }

        let episode_end = if result.done || result.info.truncated {
            let record = EpisodeRecord {
                episode: self.episode,
                seed: self.seed,
                length: self.ep_len,
                success: result.info.success,
                intervened_steps: self.ep_intervened,
                unsafe_steps: self.ep_unsafe,
                env_step: self.env_steps,
            };
            self.episode += 1;
            self.seed = self.seed_base.wrapping_add(self.episode);
            self.obs = self.env.reset_in_place(self.seed).observation;
            self.ep_len = 0;
            self.ep_intervened = 0;
            self.ep_unsafe = 0;
            self.begin_episode();
            Some(record)
        } else {
            None
        };
        Ok(StepOutcome {
            data,
            info: result.info,
            trigger: decision.trigger_reason,
            episode_end,
        })
    }

    pub fn flush(&mut self) -> Result<()> {
        match self.trace.as_mut() {
            Some(t) => t.flush(),
            None => Ok(()),
        }
    }
}
