//! Tanh-squashed Gaussian policy head.
//!
//! The network emits `[mean (d), log_std (d)]`. Actions are sampled with the
//! reparameterization `u = mean + exp(log_std) * noise`, `a = tanh(u)`, so a
//! loss expressed in terms of `a` and `log_prob` can be differentiated back
//! into the policy parameters through [`PolicyBatch::backward`].

use crate::error::{ensure_finite, Error, Result};
use crate::nets::mlp::{backward_batch, forward_batch, ForwardCache, Head, ParamSet};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Stabilizer inside `log(1 - tanh(u)^2 + eps)`.
pub const TANH_EPS: f64 = 1e-6;

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
}

pub fn action_dim(params: &ParamSet) -> Result<usize> {
    if params.head() != Head::Policy {
        return Err(Error::Shape(format!(
            "expected a policy head, got {:?}",
            params.head()
        )));
    }
    let out = params.output_width();
    if out % 2 != 0 {
        return Err(Error::Shape(format!(
            "policy output width {out} is not 2 x action dim"
        )));
    }
    Ok(out / 2)
}

/// Draws one action for state `s` using the supplied standard-normal noise.
pub fn policy_sample(params: &ParamSet, s: &[f64], noise: &[f64]) -> Result<PolicyOutput> {
    let batch = sample_batch(params, s, 1, noise)?;
    Ok(PolicyOutput {
        mean: batch.mean.clone(),
        log_std: batch.log_std.clone(),
        pre_squash: batch.pre_squash.clone(),
        action: batch.actions.clone(),
        log_prob: batch.log_probs[0],
    })
}

/// `tanh(mean)`: the action used for evaluation.
pub fn deterministic_action(params: &ParamSet, s: &[f64]) -> Result<Vec<f64>> {
    let d = action_dim(params)?;
    let cache = forward_batch(params, s, 1)?;
    let out = cache.output();
    let action: Vec<f64> = out[..d].iter().map(|m| m.tanh()).collect();
    ensure_finite(&action, "policy forward")?;
    Ok(action)
}

/// A batch of reparameterized samples with everything needed for the
/// reverse pass.
#[derive(Clone, Debug)]
pub struct PolicyBatch {
    cache: ForwardCache,
    act_dim: usize,
    noise: Vec<f64>,
    raw_log_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
}

pub fn sample_batch(
    params: &ParamSet,
    states: &[f64],
    batch: usize,
    noise: &[f64],
) -> Result<PolicyBatch> {
    let d = action_dim(params)?;
    if noise.len() != batch * d {
        return Err(Error::Shape(format!(
            "expected {} noise values, got {}",
            batch * d,
            noise.len()
        )));
    }
    let cache = forward_batch(params, states, batch)?;
    let out = cache.output();
    let mut mean = Vec::with_capacity(batch * d);
    let mut raw_log_std = Vec::with_capacity(batch * d);
    let mut log_std = Vec::with_capacity(batch * d);
    let mut pre_squash = Vec::with_capacity(batch * d);
    let mut actions = Vec::with_capacity(batch * d);
    let mut log_probs = Vec::with_capacity(batch);
    for b in 0..batch {
        let row = &out[b * 2 * d..(b + 1) * 2 * d];
        let mut lp = 0.0;
        for j in 0..d {
            let m = row[j];
            let raw = row[d + j];
            let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let eps = noise[b * d + j];
            let u = m + ls.exp() * eps;
            let a = u.tanh();
            lp += -0.5 * eps * eps - ls - HALF_LOG_TWO_PI - (1.0 - a * a + TANH_EPS).ln();
            mean.push(m);
            raw_log_std.push(raw);
            log_std.push(ls);
            pre_squash.push(u);
            actions.push(a);
        }
        log_probs.push(lp);
    }
    ensure_finite(&actions, "policy sample")?;
    ensure_finite(&log_probs, "policy log-prob")?;
    Ok(PolicyBatch {
        cache,
        act_dim: d,
        noise: noise.to_vec(),
        raw_log_std,
        mean,
        log_std,
        pre_squash,
        actions,
        log_probs,
    })
}

impl PolicyBatch {
    pub fn batch(&self) -> usize {
        self.cache.batch()
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn action(&self, b: usize) -> &[f64] {
        &self.actions[b * self.act_dim..(b + 1) * self.act_dim]
    }

    /// Accumulates parameter gradients given `d loss / d action` and
    /// `d loss / d log_prob` per sample. Noise is held fixed.
    pub fn backward(
        &self,
        params: &ParamSet,
        d_actions: &[f64],
        d_log_probs: &[f64],
        grads: &mut [f64],
    ) {
        let d = self.act_dim;
        let batch = self.batch();
        assert_eq!(d_actions.len(), batch * d);
        assert_eq!(d_log_probs.len(), batch);
        let mut d_out = vec![0.0; batch * 2 * d];
        for b in 0..batch {
            let dlp = d_log_probs[b];
            for j in 0..d {
                let k = b * d + j;
                let a = self.actions[k];
                let one_minus = 1.0 - a * a;
                // tanh chain rule plus the squash correction term of log_prob
                let du = d_actions[k] * one_minus + dlp * 2.0 * a * one_minus / (one_minus + TANH_EPS);
                let std = self.log_std[k].exp();
                let raw = self.raw_log_std[k];
                let d_ls = du * std * self.noise[k] - dlp;
                d_out[b * 2 * d + j] = du;
                d_out[b * 2 * d + d + j] = if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                    d_ls
                } else {
                    0.0
                };
            }
        }
        backward_batch(params, &self.cache, &d_out, grads, false);
    }
}
