use serde::{Deserialize, Serialize};

use super::NnError;
use crate::linalg::{householder_qr, Matrix};
use crate::rng::{standard_normal_matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output. ReLU uses 0 at
    /// the kink.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Identity,
            _ => return None,
        })
    }
}

/// Affine layer `y = act(W x + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub(crate) weight: Matrix,
    pub(crate) bias: Option<Vec<f64>>,
    pub(crate) activation: Activation,
}

impl DenseLayer {
    pub fn new(
        weight: Matrix,
        bias: Option<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self, NnError> {
        if let Some(b) = &bias {
            if b.len() != weight.rows() {
                return Err(NnError::DimensionMismatch {
                    context: "layer bias",
                    expected: weight.rows(),
                    got: b.len(),
                });
            }
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x
            .matmul_transpose(&self.weight)
            .expect("layer input width checked by the network");
        let out = self.out_dim();
        let data = y.as_mut_slice();
        for row in data.chunks_exact_mut(out.max(1)) {
            if let Some(b) = &self.bias {
                for (v, bi) in row.iter_mut().zip(b) {
                    *v += bi;
                }
            }
            if self.activation != Activation::Identity {
                for v in row.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
        }
        y
    }
}

/// Feed-forward stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<DenseLayer>,
}

/// Activations recorded by [`MlpNetwork::forward`]: entry 0 is the input,
/// entry `i + 1` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub(crate) activations: Vec<Matrix>,
}

impl MlpCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// Gradients mirroring an [`MlpNetwork`] layer by layer, plus the gradient
/// with respect to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Option<Vec<f64>>>,
    pub input: Matrix,
}

impl GradientBundle {
    pub fn zeros_like(net: &MlpNetwork, batch: usize) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| l.bias.as_ref().map(|b| vec![0.0; b.len()]))
                .collect(),
            input: Matrix::zeros(batch, net.input_dim()),
        }
    }

    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice());
            if let Some(b) = b {
                out.push(b.as_slice());
            }
        }
        out
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            if let Some(b) = b {
                out.push(b.as_mut_slice());
            }
        }
        out
    }
}

impl MlpNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::EmptyNetwork);
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::DimensionMismatch {
                    context: "layer chain",
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Orthogonal weights scaled by `gain`, zero biases.
    ///
    /// `dims` lists every width from input to output; hidden layers use
    /// `hidden`, the last layer uses `last`.
    pub fn orthogonal(
        dims: &[usize],
        hidden: Activation,
        last: Activation,
        gain: f64,
        bias: bool,
        rng: &mut SeededRng,
    ) -> Result<Self, NnError> {
        Self::build(dims, hidden, last, bias, |out, inp| {
            let w = if out >= inp {
                householder_qr(&standard_normal_matrix(out, inp, rng))
                    .expect("out >= in")
                    .0
            } else {
                householder_qr(&standard_normal_matrix(inp, out, rng))
                    .expect("in > out")
                    .0
                    .transpose()
            };
            (w.scale(gain), vec![0.0; out])
        })
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn uniform_fan_in(
        dims: &[usize],
        hidden: Activation,
        last: Activation,
        bias: bool,
        rng: &mut SeededRng,
    ) -> Result<Self, NnError> {
        Self::build(dims, hidden, last, bias, |out, inp| {
            let bound = 1.0 / (inp as f64).sqrt();
            let w = Matrix::from_fn(out, inp, |_, _| rng.uniform_range(-bound, bound));
            let b = (0..out).map(|_| rng.uniform_range(-bound, bound)).collect();
            (w, b)
        })
    }

    fn build(
        dims: &[usize],
        hidden: Activation,
        last: Activation,
        bias: bool,
        mut init: impl FnMut(usize, usize) -> (Matrix, Vec<f64>),
    ) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::EmptyNetwork);
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (w, b) = init(dims[i + 1], dims[i]);
                let act = if i + 1 == n { last } else { hidden };
                DenseLayer::new(w, bias.then_some(b), act)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.as_ref().map_or(0, Vec::len))
            .sum()
    }

    fn check_input(&self, x: &Matrix) -> Result<(), NnError> {
        if x.cols() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        Ok(())
    }

    /// Batched forward pass over the rows of `x`, keeping activations.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache), NnError> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(activations.last().expect("non-empty"));
            activations.push(next);
        }
        let out = activations.last().expect("non-empty").clone();
        Ok((out, MlpCache { activations }))
    }

    /// Forward pass without recording activations.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix, NnError> {
        self.check_input(x)?;
        let mut cur = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            cur = layer.forward(&cur);
        }
        Ok(cur)
    }

    /// Reverse-mode gradients for the upstream gradient `grad_out`
    /// (`N x output_dim`).
    pub fn backward(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<GradientBundle, NnError> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(NnError::ShapeMismatch("cache depth differs from network".into()));
        }
        let out = cache.output();
        if grad_out.shape() != out.shape() {
            return Err(NnError::DimensionMismatch {
                context: "output gradient",
                expected: out.cols(),
                got: grad_out.cols(),
            });
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let y = &cache.activations[i + 1];
            let x = &cache.activations[i];
            if layer.activation != Activation::Identity {
                for (d, &yv) in delta.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    *d *= layer.activation.derivative_from_output(yv);
                }
            }
            let gw = delta.transpose_matmul(x).expect("shapes follow the cache");
            let gb = layer.bias.as_ref().map(|_| {
                let mut acc = vec![0.0; layer.out_dim()];
                for r in 0..delta.rows() {
                    for (a, d) in acc.iter_mut().zip(delta.row(r)) {
                        *a += d;
                    }
                }
                acc
            });
            delta = delta.matmul(&layer.weight).expect("shapes follow the cache");
            weights.push(gw);
            biases.push(gb);
        }
        weights.reverse();
        biases.reverse();
        Ok(GradientBundle {
            weights,
            biases,
            input: delta,
        })
    }

    pub(crate) fn parameter_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            out.push(layer.weight.as_mut_slice());
            if let Some(b) = &mut layer.bias {
                out.push(b.as_mut_slice());
            }
        }
        out
    }

    pub(crate) fn parameter_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &self.layers {
            out.push(layer.weight.as_slice());
            if let Some(b) = &layer.bias {
                out.push(b.as_slice());
            }
        }
        out
    }
}
