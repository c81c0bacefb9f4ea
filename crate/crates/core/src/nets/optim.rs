use crate::error::{ensure_finite, Error, Result};
use crate::nets::mlp::ParamSet;

/// Adam: gradient steps scaled by running first and second moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Applies one descent step and returns the successor parameters.
    pub fn step(&mut self, params: &ParamSet, grads: &[f64], stage: &str) -> Result<ParamSet> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "{stage}: {} grads / {} moments for {} params",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        ensure_finite(grads, stage)?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut values = params.values().to_vec();
        for i in 0..values.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        ensure_finite(&values, stage)?;
        params.successor(values)
    }
}

/// `target' = (1 - tau) * target + tau * online`, with a bumped version.
pub fn polyak_update(target: &ParamSet, online: &ParamSet, tau: f64) -> Result<ParamSet> {
    if !target.same_manifest(online) {
        return Err(Error::Shape(
            "polyak update between parameter sets with different manifests".into(),
        ));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("polyak rate {tau} outside [0, 1]")));
    }
    let values = target
        .values()
        .iter()
        .zip(online.values())
        .map(|(&t, &o)| {
            if tau == 1.0 {
                o
            } else if tau == 0.0 {
                t
            } else {
                (1.0 - tau) * t + tau * o
            }
        })
        .collect();
    target.successor(values)
}
