use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::linalg::Matrix;
use super::rng::RandomSource;
use super::ParamBlocks;
use crate::error::{config_err, usage_err, Result};

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn fresh_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    /// Used for the output layer.
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Fully connected network. Hidden layers use one activation, the output layer is linear.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Layer>,
    #[serde(skip, default = "fresh_revision")]
    revision: u64,
}

impl PartialEq for MlpParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations recorded by [`MlpParams::forward`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    revision: u64,
    /// `outputs[0]` is the network input, `outputs[l + 1]` the post-activation of layer `l`.
    outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| {
                let (r, c) = l.weight.shape();
                (Matrix::zeros(r, c).expect("layer shape is positive"), vec![0.0; l.bias.len()])
            })
            .collect();
        Self { layers }
    }

    pub fn fill_zero(&mut self) {
        for (w, b) in &mut self.layers {
            w.fill(0.0);
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(config_err("an MLP needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.rows() {
                return Err(config_err(format!(
                    "layer {i}: bias length {} does not match {} output units",
                    l.bias.len(),
                    l.weight.rows()
                )));
            }
            if i > 0 && layers[i - 1].weight.rows() != l.weight.cols() {
                return Err(config_err(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.weight.cols(),
                    i - 1,
                    layers[i - 1].weight.rows()
                )));
            }
        }
        Ok(Self { layers, revision: fresh_revision() })
    }

    /// Random initialisation. `widths` lists every layer width including input and output.
    /// Tanh layers use Glorot-uniform, relu layers He-uniform, biases start at zero.
    pub fn init(widths: &[usize], hidden: Activation, rng: &mut RandomSource) -> Result<Self> {
        if widths.len() < 2 {
            return Err(config_err("an MLP needs an input and an output width"));
        }
        let n = widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let (fan_in, fan_out) = (widths[i], widths[i + 1]);
            let activation = if i + 1 == n { Activation::Linear } else { hidden };
            let limit = match activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let mut weight = Matrix::zeros(fan_out, fan_in)?;
            for w in weight.as_mut_slice() {
                *w = rng.uniform_range(-limit, limit);
            }
            layers.push(Layer { weight, bias: vec![0.0; fan_out], activation });
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to a layer. Invalidates outstanding forward caches.
    pub fn layer_mut(&mut self, i: usize) -> &mut Layer {
        self.revision = fresh_revision();
        &mut self.layers[i]
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.rows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.input_dim() {
            return Err(config_err(format!(
                "MLP input has {} entries, first layer expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(input.to_vec());
        for layer in &self.layers {
            let prev = outputs.last().expect("seeded with input");
            let mut z = layer.weight.matvec(prev);
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi = layer.activation.apply(*zi + bi);
            }
            outputs.push(z);
        }
        let out = outputs.last().expect("non-empty").clone();
        Ok((out, ForwardCache { revision: self.revision, outputs }))
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(config_err(format!(
                "MLP input has {} entries, first layer expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut cur = input.to_vec();
        for layer in &self.layers {
            let mut z = layer.weight.matvec(&cur);
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi = layer.activation.apply(*zi + bi);
            }
            cur = z;
        }
        Ok(cur)
    }

    /// Backward pass; returns fresh parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let mut grads = MlpGrads::zeros_like(self);
        let input_grad = self.backward_accumulate(cache, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Backward pass adding into `grads`; returns the gradient w.r.t. the input.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        if cache.revision != self.revision || cache.outputs.len() != self.layers.len() + 1 {
            return Err(usage_err("forward cache was produced by different parameters"));
        }
        if output_grad.len() != self.output_dim() {
            return Err(usage_err(format!(
                "output gradient has {} entries, network produces {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(usage_err("gradient buffer does not match network depth"));
        }
        let mut delta = output_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let post = &cache.outputs[l + 1];
            for (d, &y) in delta.iter_mut().zip(post) {
                *d *= layer.activation.derivative_from_output(y);
            }
            let input = &cache.outputs[l];
            let (gw, gb) = &mut grads.layers[l];
            gw.add_outer(1.0, &delta, input);
            for (g, d) in gb.iter_mut().zip(&delta) {
                *g += d;
            }
            let mut next = vec![0.0; layer.weight.cols()];
            layer.weight.matvec_t_acc(&delta, &mut next);
            delta = next;
        }
        Ok(delta)
    }
}

impl ParamBlocks for MlpParams {
    fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.revision = fresh_revision();
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

impl ParamBlocks for MlpGrads {
    fn blocks(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|(w, b)| [w.as_slice(), b.as_slice()]).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }
}
