//! Loss functions as [`Objective`]s over explicit parameter lists.
//!
//! Every stochastic loss takes its reparameterization noise as an input so
//! the same draw can be replayed for finite-difference checks.

use crate::error::{Error, Result};
use crate::intervention::PreferenceTuple;
use crate::nets::{sample_batch, sigmoid, CriticBatch, GateBatch, Objective, ParamSet, Reduce};
use crate::replay::Transition;

/// Flat, row-major view of a transition batch.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionBatch {
    pub n: usize,
    pub s_dim: usize,
    pub a_dim: usize,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: Vec<f64>,
    pub d: Vec<f64>,
    pub s_next: Vec<f64>,
}

impl TransitionBatch {
    pub fn new(items: &[Transition]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("empty transition batch".into()))?;
        let (s_dim, a_dim) = (first.s.len(), first.a.len());
        let mut b = Self {
            n: items.len(),
            s_dim,
            a_dim,
            s: Vec::with_capacity(items.len() * s_dim),
            a: Vec::with_capacity(items.len() * a_dim),
            r: Vec::with_capacity(items.len()),
            d: Vec::with_capacity(items.len()),
            s_next: Vec::with_capacity(items.len() * s_dim),
        };
        for t in items {
            if t.s.len() != s_dim || t.s_next.len() != s_dim || t.a.len() != a_dim {
                return Err(Error::Shape("ragged transition batch".into()));
            }
            b.s.extend_from_slice(&t.s);
            b.a.extend_from_slice(&t.a);
            b.r.push(t.r);
            b.d.push(if t.d { 1.0 } else { 0.0 });
            b.s_next.extend_from_slice(&t.s_next);
        }
        Ok(b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceBatch {
    pub n: usize,
    pub s_dim: usize,
    pub a_dim: usize,
    pub s: Vec<f64>,
    pub a_p: Vec<f64>,
    pub a_w: Vec<f64>,
}

impl PreferenceBatch {
    pub fn new(items: &[PreferenceTuple]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("empty preference batch".into()))?;
        let (s_dim, a_dim) = (first.s.len(), first.a_p.len());
        let mut b = Self {
            n: items.len(),
            s_dim,
            a_dim,
            s: Vec::with_capacity(items.len() * s_dim),
            a_p: Vec::with_capacity(items.len() * a_dim),
            a_w: Vec::with_capacity(items.len() * a_dim),
        };
        for t in items {
            if t.s.len() != s_dim || t.a_p.len() != a_dim || t.a_w.len() != a_dim {
                return Err(Error::Shape("ragged preference batch".into()));
            }
            b.s.extend_from_slice(&t.s);
            b.a_p.extend_from_slice(&t.a_p);
            b.a_w.extend_from_slice(&t.a_w);
        }
        Ok(b)
    }
}

/// `y = r + gamma (1 - d) (reduce Q_target(s', a') - alpha log pi(a'|s'))`
/// with `a'` drawn from the current policy using `noise`.
#[allow(clippy::too_many_arguments)]
pub fn critic_target(
    policy: &ParamSet,
    target_critics: &[ParamSet],
    s_next: &[f64],
    r: &[f64],
    d: &[f64],
    gamma: f64,
    alpha: f64,
    reduce: Reduce,
    noise: &[f64],
) -> Result<Vec<f64>> {
    let n = r.len();
    let pb = sample_batch(policy, s_next, n, noise)?;
    let q = CriticBatch::forward(target_critics, s_next, &pb.actions, n)?;
    Ok((0..n)
        .map(|b| {
            let (q_next, _) = crate::nets::critic::reduce_heads(&q.values, b, reduce);
            r[b] + gamma * (1.0 - d[b]) * (q_next - alpha * pb.log_probs[b])
        })
        .collect())
}

/// `A = reduce Q(s, a_p) - reduce Q(s, a~_w)` with a fresh policy sample.
pub fn advantage(
    policy: &ParamSet,
    critics: &[ParamSet],
    s: &[f64],
    a_p: &[f64],
    reduce: Reduce,
    noise: &[f64],
) -> Result<Vec<f64>> {
    let n = a_p.len() / crate::nets::policy::action_dim(policy)?;
    let pb = sample_batch(policy, s, n, noise)?;
    let qp = CriticBatch::forward(critics, s, a_p, n)?;
    let qw = CriticBatch::forward(critics, s, &pb.actions, n)?;
    Ok((0..n)
        .map(|b| {
            crate::nets::critic::reduce_heads(&qp.values, b, reduce).0
                - crate::nets::critic::reduce_heads(&qw.values, b, reduce).0
        })
        .collect())
}

pub fn gate_target(a: f64) -> f64 {
    sigmoid(a)
}

/// One item of the gated preference loss:
/// `beta (||a~ - a_p|| - ||a~ - a_w||)`.
pub fn preference_term(beta: f64, a_tilde: &[f64], a_p: &[f64], a_w: &[f64]) -> f64 {
    beta * (dist(a_tilde, a_p) - dist(a_tilde, a_w))
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `d ||x - y|| / dx`, zero at `x = y`.
fn unit_diff(x: &[f64], y: &[f64], out: &mut [f64], scale: f64) {
    let n = dist(x, y);
    if n == 0.0 {
        return;
    }
    for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
        *o += scale * (a - b) / n;
    }
}

/// Sum over heads of the mean squared residual against a shared target.
/// Parameters: the online critic heads.
pub struct CriticLoss<'a> {
    pub s: &'a [f64],
    pub a: &'a [f64],
    pub y: &'a [f64],
}

impl Objective for CriticLoss<'_> {
    fn value(&self, params: &[&ParamSet]) -> Result<f64> {
        Ok(self.value_and_grad(params)?.0)
    }

    fn value_and_grad(&self, params: &[&ParamSet]) -> Result<(f64, Vec<Vec<f64>>)> {
        let n = self.y.len();
        let critics: Vec<ParamSet> = params.iter().map(|p| (*p).clone()).collect();
        let q = CriticBatch::forward(&critics, self.s, self.a, n)?;
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(critics.len());
        for (head, values) in q.values.iter().enumerate() {
            let mut d_q = Vec::with_capacity(n);
            for b in 0..n {
                let res = values[b] - self.y[b];
                loss += res * res / n as f64;
                d_q.push(2.0 * res / n as f64);
            }
            let mut g = critics[head].zeros_like();
            q.backward_head(&critics, head, &d_q, &mut g, false);
            grads.push(g);
        }
        Ok((loss, grads))
    }
}

/// `mean(alpha log pi(a~|s) - reduce Q(s, a~))`; parameters: `[policy]`,
/// critics frozen.
pub struct ActorLoss<'a> {
    pub s: &'a [f64],
    pub n: usize,
    pub noise: &'a [f64],
    pub critics: &'a [ParamSet],
    pub alpha: f64,
    pub reduce: Reduce,
}

impl Objective for ActorLoss<'_> {
    fn value(&self, params: &[&ParamSet]) -> Result<f64> {
        Ok(self.value_and_grad(params)?.0)
    }

    fn value_and_grad(&self, params: &[&ParamSet]) -> Result<(f64, Vec<Vec<f64>>)> {
        let policy = params[0];
        let n = self.n;
        let pb = sample_batch(policy, self.s, n, self.noise)?;
        let q = CriticBatch::forward(self.critics, self.s, &pb.actions, n)?;
        let mut loss = 0.0;
        let mut selected = Vec::with_capacity(n);
        for b in 0..n {
            let (qv, head) = crate::nets::critic::reduce_heads(&q.values, b, self.reduce);
            selected.push(head);
            loss += (self.alpha * pb.log_probs[b] - qv) / n as f64;
        }
        let d_q = vec![-1.0 / n as f64; n];
        let d_actions = q.action_grad(self.critics, &selected, &d_q);
        let d_lp = vec![self.alpha / n as f64; n];
        let mut g = policy.zeros_like();
        pb.backward(policy, &d_actions, &d_lp, &mut g);
        Ok((loss, vec![g]))
    }
}

/// `mean(beta(s)^2)` over online states; parameters: `[gate]`.
pub struct OnlineGateLoss<'a> {
    pub s: &'a [f64],
    pub n: usize,
}

impl Objective for OnlineGateLoss<'_> {
    fn value(&self, params: &[&ParamSet]) -> Result<f64> {
        Ok(self.value_and_grad(params)?.0)
    }

    fn value_and_grad(&self, params: &[&ParamSet]) -> Result<(f64, Vec<Vec<f64>>)> {
        let gate = params[0];
        let gb = GateBatch::forward(gate, self.s, self.n)?;
        let n = self.n as f64;
        let loss = gb.betas.iter().map(|b| b * b).sum::<f64>() / n;
        let d: Vec<f64> = gb.betas.iter().map(|b| 2.0 * b / n).collect();
        let mut g = gate.zeros_like();
        gb.backward(gate, &d, &mut g);
        Ok((loss, vec![g]))
    }
}

/// `mean((beta(s) - target)^2)`; parameters: `[gate]`, targets constant.
pub struct PrefGateLoss<'a> {
    pub s: &'a [f64],
    pub targets: &'a [f64],
}

impl Objective for PrefGateLoss<'_> {
    fn value(&self, params: &[&ParamSet]) -> Result<f64> {
        Ok(self.value_and_grad(params)?.0)
    }

    fn value_and_grad(&self, params: &[&ParamSet]) -> Result<(f64, Vec<Vec<f64>>)> {
        let gate = params[0];
        let n = self.targets.len();
        let gb = GateBatch::forward(gate, self.s, n)?;
        let mut loss = 0.0;
        let mut d = Vec::with_capacity(n);
        for (b, t) in gb.betas.iter().zip(self.targets) {
            loss += (b - t) * (b - t) / n as f64;
            d.push(2.0 * (b - t) / n as f64);
        }
        let mut g = gate.zeros_like();
        gb.backward(gate, &d, &mut g);
        Ok((loss, vec![g]))
    }
}

/// `weight * mean(beta (||a~ - a_p|| - ||a~ - a_w||))`; parameters:
/// `[policy]`, `betas` constant.
pub struct PrefActorLoss<'a> {
    pub s: &'a [f64],
    pub a_p: &'a [f64],
    pub a_w: &'a [f64],
    pub betas: &'a [f64],
    pub noise: &'a [f64],
    pub weight: f64,
}

impl Objective for PrefActorLoss<'_> {
    fn value(&self, params: &[&ParamSet]) -> Result<f64> {
        Ok(self.value_and_grad(params)?.0)
    }

    fn value_and_grad(&self, params: &[&ParamSet]) -> Result<(f64, Vec<Vec<f64>>)> {
        let policy = params[0];
        let n = self.betas.len();
        let pb = sample_batch(policy, self.s, n, self.noise)?;
        let d = pb.act_dim();
        let mut loss = 0.0;
        let mut d_actions = vec![0.0; n * d];
        for b in 0..n {
            let at = pb.action(b);
            let ap = &self.a_p[b * d..(b + 1) * d];
            let aw = &self.a_w[b * d..(b + 1) * d];
            let beta = self.betas[b];
            loss += self.weight * preference_term(beta, at, ap, aw) / n as f64;
            let scale = self.weight * beta / n as f64;
            let out = &mut d_actions[b * d..(b + 1) * d];
            unit_diff(at, ap, out, scale);
            unit_diff(at, aw, out, -scale);
        }
        let mut g = policy.zeros_like();
        pb.backward(policy, &d_actions, &vec![0.0; n], &mut g);
        Ok((loss, vec![g]))
    }
}

/// `weight * mean(||a~ - a_p||)`: the imitation regulariser of the
/// imitation-regularised baseline. Parameters: `[policy]`.
pub struct ImitationLoss<'a> {
    pub s: &'a [f64],
    pub a_p: &'a [f64],
    pub noise: &'a [f64],
    pub n: usize,
    pub weight: f64,
}

impl Objective for ImitationLoss<'_> {
    fn value(&self, params: &[&ParamSet]) -> Result<f64> {
        Ok(self.value_and_grad(params)?.0)
    }

    fn value_and_grad(&self, params: &[&ParamSet]) -> Result<(f64, Vec<Vec<f64>>)> {
        let policy = params[0];
        let n = self.n;
        let pb = sample_batch(policy, self.s, n, self.noise)?;
        let d = pb.act_dim();
        let mut loss = 0.0;
        let mut d_actions = vec![0.0; n * d];
        for b in 0..n {
            let at = pb.action(b);
            let ap = &self.a_p[b * d..(b + 1) * d];
            loss += self.weight * dist(at, ap) / n as f64;
            unit_diff(at, ap, &mut d_actions[b * d..(b + 1) * d], self.weight / n as f64);
        }
        let mut g = policy.zeros_like();
        pb.backward(policy, &d_actions, &vec![0.0; n], &mut g);
        Ok((loss, vec![g]))
    }
}

/// Behaviour cloning: `mean(||tanh(mean(s)) - a_p||^2)` on the noise-free
/// action. Parameters: `[policy]`.
pub struct BcLoss<'a> {
    pub s: &'a [f64],
    pub a_p: &'a [f64],
    pub n: usize,
}

impl Objective for BcLoss<'_> {
    fn value(&self, params: &[&ParamSet]) -> Result<f64> {
        Ok(self.value_and_grad(params)?.0)
    }

    fn value_and_grad(&self, params: &[&ParamSet]) -> Result<(f64, Vec<Vec<f64>>)> {
        let policy = params[0];
        let n = self.n;
        let d = crate::nets::policy::action_dim(policy)?;
        let pb = sample_batch(policy, self.s, n, &vec![0.0; n * d])?;
        let mut loss = 0.0;
        let mut d_actions = vec![0.0; n * d];
        for k in 0..n * d {
            let res = pb.actions[k] - self.a_p[k];
            loss += res * res / n as f64;
            d_actions[k] = 2.0 * res / n as f64;
        }
        let mut g = policy.zeros_like();
        pb.backward(policy, &d_actions, &vec![0.0; n], &mut g);
        Ok((loss, vec![g]))
    }
}
