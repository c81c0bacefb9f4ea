use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::nets::mlp::{backward_batch, forward_batch, ForwardCache, Head, ParamSet};

/// How twin critic heads are combined into one value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduce {
    Min,
    First,
}

fn check_critic(params: &ParamSet) -> Result<()> {
    if params.head() != Head::Critic || params.output_width() != 1 {
        return Err(Error::Shape(format!(
            "expected a scalar critic head, got {:?} with width {}",
            params.head(),
            params.output_width()
        )));
    }
    Ok(())
}

/// Interleaves `[batch x s_dim]` states and `[batch x a_dim]` actions into
/// `[batch x (s_dim + a_dim)]` critic inputs.
pub fn concat_inputs(states: &[f64], s_dim: usize, actions: &[f64], a_dim: usize) -> Vec<f64> {
    let batch = states.len() / s_dim.max(1);
    debug_assert_eq!(actions.len(), batch * a_dim);
    let mut out = Vec::with_capacity(batch * (s_dim + a_dim));
    for b in 0..batch {
        out.extend_from_slice(&states[b * s_dim..(b + 1) * s_dim]);
        out.extend_from_slice(&actions[b * a_dim..(b + 1) * a_dim]);
    }
    out
}

/// Q-value of a single `(s, a)` pair across one or two critic heads.
pub fn q_value(critics: &[ParamSet], s: &[f64], a: &[f64], reduce: Reduce) -> Result<f64> {
    let heads = q_values_batch(critics, s, a, 1)?;
    Ok(reduce_heads(&heads, 0, reduce).0)
}

/// Per-head values for a batch: `result[head][b]`.
pub fn q_values_batch(
    critics: &[ParamSet],
    states: &[f64],
    actions: &[f64],
    batch: usize,
) -> Result<Vec<Vec<f64>>> {
    Ok(CriticBatch::forward(critics, states, actions, batch)?.values)
}

/// Returns `(value, index of the head that produced it)`.
pub fn reduce_heads(heads: &[Vec<f64>], b: usize, reduce: Reduce) -> (f64, usize) {
    match reduce {
        Reduce::First => (heads[0][b], 0),
        Reduce::Min => {
            let mut best = (heads[0][b], 0);
            for (k, h) in heads.iter().enumerate().skip(1) {
                if h[b] < best.0 {
                    best = (h[b], k);
                }
            }
            best
        }
    }
}

/// Forward state for every critic head over one batch.
pub struct CriticBatch {
    caches: Vec<ForwardCache>,
    pub values: Vec<Vec<f64>>,
    s_dim: usize,
    a_dim: usize,
}

impl CriticBatch {
    pub fn forward(
        critics: &[ParamSet],
        states: &[f64],
        actions: &[f64],
        batch: usize,
    ) -> Result<Self> {
        if critics.is_empty() {
            return Err(Error::Shape("no critic heads".into()));
        }
        let width = critics[0].input_width();
        if batch == 0 || states.len() % batch != 0 || actions.len() % batch != 0 {
            return Err(Error::Shape(format!(
                "critic batch of {batch} does not divide {} states / {} actions",
                states.len(),
                actions.len()
            )));
        }
        let s_dim = states.len() / batch;
        let a_dim = actions.len() / batch;
        if s_dim + a_dim != width {
            return Err(Error::Shape(format!(
                "critic expects input width {width}, got state {s_dim} + action {a_dim}"
            )));
        }
        let inputs = concat_inputs(states, s_dim, actions, a_dim);
        let mut caches = Vec::with_capacity(critics.len());
        let mut values = Vec::with_capacity(critics.len());
        for c in critics {
            check_critic(c)?;
            let cache = forward_batch(c, &inputs, batch)?;
            ensure_finite(cache.output(), "critic forward")?;
            values.push(cache.output().to_vec());
            caches.push(cache);
        }
        Ok(Self {
            caches,
            values,
            s_dim,
            a_dim,
        })
    }

    /// Accumulates gradients of one head given `d loss / d q`; optionally
    /// returns `d loss / d action` (`[batch x a_dim]`).
    pub fn backward_head(
        &self,
        critics: &[ParamSet],
        head: usize,
        d_q: &[f64],
        grads: &mut [f64],
        want_action_grad: bool,
    ) -> Option<Vec<f64>> {
        let dx = backward_batch(&critics[head], &self.caches[head], d_q, grads, want_action_grad)?;
        let batch = self.caches[head].batch();
        let width = self.s_dim + self.a_dim;
        let mut da = Vec::with_capacity(batch * self.a_dim);
        for b in 0..batch {
            da.extend_from_slice(&dx[b * width + self.s_dim..(b + 1) * width]);
        }
        Some(da)
    }

    /// `d q / d action` through heads selected per sample, without
    /// accumulating any parameter gradient.
    pub fn action_grad(&self, critics: &[ParamSet], selected: &[usize], d_q: &[f64]) -> Vec<f64> {
        let batch = selected.len();
        let mut da = vec![0.0; batch * self.a_dim];
        for head in 0..critics.len() {
            let masked: Vec<f64> = (0..batch)
                .map(|b| if selected[b] == head { d_q[b] } else { 0.0 })
                .collect();
            if masked.iter().all(|&v| v == 0.0) {
                continue;
            }
            let mut scratch = critics[head].zeros_like();
            if let Some(dh) = self.backward_head(critics, head, &masked, &mut scratch, true) {
                for (acc, v) in da.iter_mut().zip(dh) {
                    *acc += v;
                }
            }
        }
        da
    }
}
