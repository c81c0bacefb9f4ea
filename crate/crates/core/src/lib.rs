//! Preference-gated actor-critic training from human (or scripted)
//! interventions on small 2-D manipulation simulators.
//!
//! The crate is organised bottom-up:
//!
//! * [`nets`]: dense networks with exact reverse-mode gradients.
//! * [`envs`]: the `press_button` and `push_ball` sparse-reward tasks.
//! * [`intervention`]: scripted oracle, safe-region variant and the live
//!   override mailbox.
//! * [`replay`]: the online and preference replay buffers.
//! * [`learner`]: losses and the four-stage update step.
//! * [`runtime`]: configuration, actor/learner orchestration, metrics,
//!   checkpoints, gate-field export and the WebSocket service.

pub mod envs;
pub mod error;
pub mod intervention;
pub mod learner;
pub mod nets;
pub mod replay;
pub mod runtime;

pub use error::{Error, Result};
