//! Small dense networks with hand-written reverse-mode gradients.

pub mod critic;
pub mod gate;
pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod policy;

pub use critic::{q_value, q_values_batch, CriticBatch, Reduce};
pub use gate::{gate_value, sigmoid, GateBatch, GateOutput};
pub use gradcheck::{finite_difference_check, value_and_grad, GradCheckReport, Objective};
pub use mlp::{Activation, ForwardCache, Head, LayerShape, ParamSet};
pub use optim::{polyak_update, Adam};
pub use policy::{
    deterministic_action, policy_sample, sample_batch, PolicyBatch, PolicyOutput, LOG_STD_MAX,
    LOG_STD_MIN, TANH_EPS,
};

use crate::error::{ensure_finite, Result};

/// Evaluates a network on one input and applies its head: sigmoid for a
/// gate, identity for a critic, `(mean, clamped log_std)` for a policy.
pub fn forward(params: &ParamSet, x: &[f64]) -> Result<Vec<f64>> {
    let cache = mlp::forward_batch(params, x, 1)?;
    let raw = cache.output();
    let out = match params.head() {
        Head::Critic => raw.to_vec(),
        Head::Gate => vec![gate::GateBatch::forward(params, x, 1)?.betas[0]],
        Head::Policy => {
            let d = policy::action_dim(params)?;
            raw[..d]
                .iter()
                .copied()
                .chain(raw[d..].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)))
                .collect()
        }
    };
    ensure_finite(&out, "forward")?;
    Ok(out)
}

/// Layer widths `[input, hidden..., output]`.
pub fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}
