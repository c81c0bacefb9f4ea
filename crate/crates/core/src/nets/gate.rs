use crate::error::{ensure_finite, Error, Result};
use crate::nets::mlp::{backward_batch, forward_batch, ForwardCache, Head, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateOutput {
    pub beta: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_gate(params: &ParamSet) -> Result<()> {
    if params.head() != Head::Gate || params.output_width() != 1 {
        return Err(Error::Shape(format!(
            "expected a scalar gate head, got {:?} with width {}",
            params.head(),
            params.output_width()
        )));
    }
    Ok(())
}

pub fn gate_value(params: &ParamSet, s: &[f64]) -> Result<GateOutput> {
    let batch = GateBatch::forward(params, s, 1)?;
    Ok(GateOutput {
        beta: batch.betas[0],
    })
}

pub struct GateBatch {
    cache: ForwardCache,
    pub betas: Vec<f64>,
}

impl GateBatch {
    pub fn forward(params: &ParamSet, states: &[f64], batch: usize) -> Result<Self> {
        check_gate(params)?;
        let cache = forward_batch(params, states, batch)?;
        // keep the output strictly inside (0, 1) even where the logistic rounds
        let betas: Vec<f64> = cache
            .output()
            .iter()
            .map(|&z| sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
            .collect();
        ensure_finite(&betas, "gate forward")?;
        Ok(Self { cache, betas })
    }

    pub fn backward(&self, params: &ParamSet, d_betas: &[f64], grads: &mut [f64]) {
        let d_logits: Vec<f64> = d_betas
            .iter()
            .zip(&self.betas)
            .map(|(d, b)| d * b * (1.0 - b))
            .collect();
        backward_batch(params, &self.cache, &d_logits, grads, false);
    }
}
