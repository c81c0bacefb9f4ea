use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Linear,
}

/// What the final layer of a network feeds into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Output splits into `(mean, log_std)` of a tanh-squashed Gaussian.
    Policy,
    /// Linear scalar.
    Critic,
    /// Sigmoid scalar in (0, 1).
    Gate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerShape {
    fn weight_count(&self) -> usize {
        self.inputs * self.outputs
    }

    fn param_count(&self) -> usize {
        self.weight_count() + self.outputs
    }
}

/// Parameters of a dense network stored as one flat array.
///
/// Each layer contributes a row-major `[outputs x inputs]` weight block
/// followed by its bias vector. Values are never mutated in place: updates
/// produce a new `ParamSet` with a bumped version.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    layers: Vec<LayerShape>,
    head: Head,
    values: Vec<f64>,
    version: u64,
}

impl ParamSet {
    /// Deterministic initialization: weights uniform in `±1/sqrt(fan_in)`,
    /// biases zero. Hidden layers use tanh, the last layer is linear.
    pub fn init(widths: &[usize], head: Head, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "layer spec needs at least an input and an output width, got {widths:?}"
            )));
        }
        if let Some(pos) = widths.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!(
                "layer spec {widths:?} has zero width at position {pos}"
            )));
        }
        let n_layers = widths.len() - 1;
        let layers: Vec<LayerShape> = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerShape {
                inputs: w[0],
                outputs: w[1],
                activation: if i + 1 == n_layers {
                    Activation::Linear
                } else {
                    Activation::Tanh
                },
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(layers.iter().map(LayerShape::param_count).sum());
        for layer in &layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for _ in 0..layer.weight_count() {
                values.push(rng.gen_range(-bound..=bound));
            }
            values.extend(std::iter::repeat(0.0).take(layer.outputs));
        }
        Ok(Self {
            layers,
            head,
            values,
            version: 0,
        })
    }

    /// Rebuilds a parameter set from its manifest and raw values.
    pub fn from_parts(
        layers: Vec<LayerShape>,
        head: Head,
        values: Vec<f64>,
        version: u64,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("parameter manifest has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed next layer input {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        if layers.iter().any(|l| l.inputs == 0 || l.outputs == 0) {
            return Err(Error::Config("parameter manifest has a zero-width layer".into()));
        }
        let expected: usize = layers.iter().map(LayerShape::param_count).sum();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "manifest expects {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            layers,
            head,
            values,
            version,
        })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn same_manifest(&self, other: &ParamSet) -> bool {
        self.head == other.head && self.layers == other.layers
    }

    /// Successor parameter set carrying `values` and the next version.
    pub fn successor(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "successor expects {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(Self {
            layers: self.layers.clone(),
            head: self.head,
            values,
            version: self.version + 1,
        })
    }

    /// Same manifest and version with every value replaced; used by tests and
    /// gradient checks.
    pub fn with_values_unversioned(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            layers: self.layers.clone(),
            head: self.head,
            values,
            version: self.version,
        }
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }
}

/// Per-layer activations recorded during a batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    /// `activations[0]` is the input; `activations[l + 1]` is layer `l`'s output.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Raw network output, `[batch x output_width]`.
    pub fn output(&self) -> &[f64] {
        &self.activations[self.activations.len() - 1]
    }
}

/// Forward pass over `batch` row-major inputs.
pub fn forward_batch(params: &ParamSet, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
    let width = params.input_width();
    if inputs.len() != width * batch {
        return Err(Error::Shape(format!(
            "expected {batch} inputs of width {width}, got {} values",
            inputs.len()
        )));
    }
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    activations.push(inputs.to_vec());
    let mut offset = 0;
    for layer in &params.layers {
        let weights = &params.values[offset..offset + layer.weight_count()];
        let bias = &params.values[offset + layer.weight_count()..offset + layer.param_count()];
        offset += layer.param_count();

        let x = activations.last().expect("input pushed above");
        let mut y = vec![0.0; batch * layer.outputs];
        for b in 0..batch {
            let xb = &x[b * layer.inputs..(b + 1) * layer.inputs];
            let yb = &mut y[b * layer.outputs..(b + 1) * layer.outputs];
            for (o, out) in yb.iter_mut().enumerate() {
                let row = &weights[o * layer.inputs..(o + 1) * layer.inputs];
                let z = bias[o] + dot(row, xb);
                *out = match layer.activation {
                    Activation::Tanh => tanh(z),
                    Activation::Linear => z,
                };
            }
        }
        activations.push(y);
    }
    Ok(ForwardCache { batch, activations })
}

/// Reverse pass: accumulates `d loss / d params` into `grads` and, when asked,
/// returns `d loss / d inputs` (`[batch x input_width]`).
pub fn backward_batch(
    params: &ParamSet,
    cache: &ForwardCache,
    d_output: &[f64],
    grads: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let batch = cache.batch;
    assert_eq!(grads.len(), params.values.len());
    assert_eq!(d_output.len(), batch * params.output_width());

    let offsets: Vec<usize> = params
        .layers
        .iter()
        .scan(0, |acc, l| {
            let start = *acc;
            *acc += l.param_count();
            Some(start)
        })
        .collect();

    let mut delta = d_output.to_vec();
    for (l, layer) in params.layers.iter().enumerate().rev() {
        let y = &cache.activations[l + 1];
        if layer.activation == Activation::Tanh {
            for (d, yv) in delta.iter_mut().zip(y) {
                *d *= 1.0 - yv * yv;
            }
        }
        let x = &cache.activations[l];
        let offset = offsets[l];
        let w_count = layer.weight_count();
        let weights = &params.values[offset..offset + w_count];
        let need_dx = l > 0 || want_input_grad;
        let mut dx = if need_dx {
            vec![0.0; batch * layer.inputs]
        } else {
            Vec::new()
        };
        {
            let (gw, gb) = grads[offset..offset + layer.param_count()].split_at_mut(w_count);
            for b in 0..batch {
                let xb = &x[b * layer.inputs..(b + 1) * layer.inputs];
                let db = &delta[b * layer.outputs..(b + 1) * layer.outputs];
                for (o, &d) in db.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, xv) in grow.iter_mut().zip(xb) {
                        *g += d * xv;
                    }
                    if need_dx {
                        let row = &weights[o * layer.inputs..(o + 1) * layer.inputs];
                        let dxb = &mut dx[b * layer.inputs..(b + 1) * layer.inputs];
                        for (g, wv) in dxb.iter_mut().zip(row) {
                            *g += d * wv;
                        }
                    }
                }
            }
        }
        if l == 0 {
            return if want_input_grad { Some(dx) } else { None };
        }
        delta = dx;
    }
    None
}

/// Four independent partial sums so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Hidden-layer tanh through a single `exp`; libm's `tanh` goes through
/// `expm1` and dominated the profile. Absolute error stays near 1e-16.
#[inline]
pub(crate) fn tanh(z: f64) -> f64 {
    if z.abs() > 20.0 {
        return z.signum();
    }
    let e = (2.0 * z).exp();
    (e - 1.0) / (e + 1.0)
}
