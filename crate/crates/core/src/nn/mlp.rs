use rand::Rng as _;

use super::ParamTensors;
use crate::{Error, Result, Rng};

/// Element-wise activation applied after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

/// A dense layer `y = act(W x + b)` with `W` stored row-major as `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Fan-balanced uniform init in `±sqrt(6 / (in + out))`, zero bias.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.bias
                .iter()
                .zip(self.weight.chunks_exact(self.in_dim))
                .map(|(b, row)| {
                    let z = b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
                    self.activation.apply(z)
                }),
        );
    }
}

/// Parameters of a multi-layer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Dense>,
}

/// Activations recorded by [`MlpParams::forward_cached`]; entry 0 is the input.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients mirroring the shapes of an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<DenseGrad>,
}

/// Result of a backward pass: parameter gradients plus the gradient with
/// respect to the network input.
#[derive(Debug, Clone)]
pub struct Backward {
    pub grads: Grads,
    pub input_grad: Vec<f64>,
}

impl MlpParams {
    /// Builds a network from explicit layers, checking that dimensions chain
    /// and every value is finite.
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::Config(format!("layer {i} has a zero dimension")));
            }
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Config(format!("layer {i} tensor sizes do not match its dims")));
            }
            if !l.weight.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("layer {i} has non-finite parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Config(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialised network with layer sizes `dims` (input first) and
    /// one activation per layer.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "need one activation per layer: {} dims, {} activations",
                dims.len(),
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &act)| Dense::init(d[0], d[1], act, rng))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable layer access; callers must keep shapes intact.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::Config(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass that records every layer's activations for [`backward`](Self::backward).
    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.out_dim);
            layer.forward_into(activations.last().unwrap(), &mut out);
            activations.push(out);
        }
        let y = activations.last().unwrap().clone();
        Ok((y, ForwardCache { activations }))
    }

    /// Reverse-mode gradients of a scalar loss whose gradient with respect
    /// to the network output is `upstream`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Backward> {
        let acts = &cache.activations;
        if acts.len() != self.layers.len() + 1 {
            return Err(Error::Contract(
                "backward called without a matching cached forward pass".into(),
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if acts[i].len() != layer.in_dim || acts[i + 1].len() != layer.out_dim {
                return Err(Error::Contract(format!("cached activations do not match layer {i}")));
            }
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::Contract(format!(
                "upstream gradient has {} values, network outputs {}",
                upstream.len(),
                self.out_dim()
            )));
        }

        let mut layer_grads = Vec::with_capacity(self.layers.len());
        let mut grad_out = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            let output = &acts[i + 1];
            let delta: Vec<f64> = grad_out
                .iter()
                .zip(output)
                .map(|(g, &y)| g * layer.activation.derivative_at_output(y))
                .collect();

            let mut gw = vec![0.0; layer.weight.len()];
            let mut grad_in = vec![0.0; layer.in_dim];
            for (&d, (grow, wrow)) in delta.iter().zip(
                gw.chunks_exact_mut(layer.in_dim)
                    .zip(layer.weight.chunks_exact(layer.in_dim)),
            ) {
                if d == 0.0 {
                    continue;
                }
                for ((gwi, &xi), (&wi, gi)) in grow.iter_mut().zip(input).zip(wrow.iter().zip(grad_in.iter_mut())) {
                    *gwi = d * xi;
                    *gi += wi * d;
                }
            }
            layer_grads.push(DenseGrad {
                weight: gw,
                bias: delta,
            });
            grad_out = grad_in;
        }
        layer_grads.reverse();
        Ok(Backward {
            grads: Grads { layers: layer_grads },
            input_grad: grad_out,
        })
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            layers: self
                .layers
                .iter()
                .map(|l| DenseGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }
}

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }
}

impl ParamTensors for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

impl ParamTensors for Grads {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}
