//! Configuration, actor/learner orchestration, metrics, checkpoints,
//! evaluation and the live WebSocket service.

pub mod actor;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod service;
pub mod trace;
pub mod train;

pub use config::RunConfig;
pub use train::{train, TrainHooks, TrainOutcome};
