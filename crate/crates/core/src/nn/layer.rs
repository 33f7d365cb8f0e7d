use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

pub type Tensor2 = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    #[default]
    #[serde(rename = "relu", alias = "ReLU")]
    ReLU,
    Tanh,
    Identity,
}

impl ActivationKind {
    pub fn apply(self, x: &Tensor2) -> Tensor2 {
        match self {
            ActivationKind::ReLU => x.mapv(|v| v.max(0.0)),
            ActivationKind::Tanh => x.mapv(f64::tanh),
            ActivationKind::Identity => x.clone(),
        }
    }

    /// `d loss / d input` given the layer input, its output and the upstream gradient.
    pub fn backward(self, input: &Tensor2, output: &Tensor2, grad: &Tensor2) -> Tensor2 {
        match self {
            ActivationKind::ReLU => {
                let mut g = grad.clone();
                g.zip_mut_with(input, |g, &x| {
                    if x <= 0.0 {
                        *g = 0.0
                    }
                });
                g
            }
            ActivationKind::Tanh => {
                let mut g = grad.clone();
                g.zip_mut_with(output, |g, &y| *g *= 1.0 - y * y);
                g
            }
            ActivationKind::Identity => grad.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    BatchNorm { dim: usize, momentum: f64, epsilon: f64 },
    Dropout { rate: f64 },
    Activation { kind: ActivationKind },
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Dense { in_dim, out_dim }
    }

    pub fn batch_norm(dim: usize) -> Self {
        LayerSpec::BatchNorm {
            dim,
            momentum: 0.99,
            epsilon: 1e-5,
        }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate }
    }

    pub fn activation(kind: ActivationKind) -> Self {
        LayerSpec::Activation { kind }
    }

    /// Output width given the input width, or `None` if incompatible.
    pub fn output_dim(&self, input: usize) -> Option<usize> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => (in_dim == input).then_some(out_dim),
            LayerSpec::BatchNorm { dim, .. } => (dim == input).then_some(dim),
            LayerSpec::Dropout { .. } | LayerSpec::Activation { .. } => Some(input),
        }
    }
}

/// Parameters and running statistics of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerParams {
    /// `weight` is in×out, `bias` is 1×out.
    Dense { weight: Tensor2, bias: Tensor2 },
    /// `gamma`/`beta` are 1×dim.
    BatchNorm {
        gamma: Tensor2,
        beta: Tensor2,
        running_mean: Array1<f64>,
        running_var: Array1<f64>,
    },
    Stateless,
}

impl LayerParams {
    /// Glorot-uniform for tanh/identity stacks, He-normal for ReLU stacks.
    pub(crate) fn init(spec: &LayerSpec, next_activation: Option<ActivationKind>, rng: &mut RngStream) -> Self {
        match *spec {
            LayerSpec::Dense { in_dim, out_dim } => {
                let weight = match next_activation {
                    Some(ActivationKind::ReLU) => {
                        let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).unwrap();
                        Array2::from_shape_simple_fn((in_dim, out_dim), || normal.sample(rng))
                    }
                    _ => {
                        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
                        let uniform = Uniform::new_inclusive(-limit, limit).unwrap();
                        Array2::from_shape_simple_fn((in_dim, out_dim), || rng.sample(uniform))
                    }
                };
                LayerParams::Dense {
                    weight,
                    bias: Array2::zeros((1, out_dim)),
                }
            }
            LayerSpec::BatchNorm { dim, .. } => LayerParams::BatchNorm {
                gamma: Array2::ones((1, dim)),
                beta: Array2::zeros((1, dim)),
                running_mean: Array1::zeros(dim),
                running_var: Array1::ones(dim),
            },
            _ => LayerParams::Stateless,
        }
    }

    pub(crate) fn trainable(&self) -> Vec<&Tensor2> {
        match self {
            LayerParams::Dense { weight, bias } => vec![weight, bias],
            LayerParams::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            LayerParams::Stateless => vec![],
        }
    }

    pub(crate) fn trainable_mut(&mut self) -> Vec<&mut Tensor2> {
        match self {
            LayerParams::Dense { weight, bias } => vec![weight, bias],
            LayerParams::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            LayerParams::Stateless => vec![],
        }
    }
}

/// Values a layer keeps from a Train-mode forward pass for its backward pass.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    Dense { input: Tensor2 },
    BatchNorm { x_hat: Tensor2, inv_std: Array1<f64> },
    Dropout { scale: Tensor2 },
    Activation { input: Tensor2, output: Tensor2 },
}

pub(crate) fn dense_forward(x: &Tensor2, weight: &Tensor2, bias: &Tensor2) -> Tensor2 {
    let mut y = x.dot(weight);
    y += bias;
    y
}

/// Per-feature batch mean and biased variance.
pub(crate) fn batch_moments(x: &Tensor2) -> (Array1<f64>, Array1<f64>) {
    let m = x.nrows() as f64;
    let mean = x.sum_axis(Axis(0)) / m;
    let centered = x - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / m;
    (mean, var)
}

pub(crate) fn batch_norm_backward(
    grad: &Tensor2,
    x_hat: &Tensor2,
    inv_std: &Array1<f64>,
    gamma: &Tensor2,
) -> (Tensor2, Tensor2, Tensor2) {
    let m = grad.nrows() as f64;
    let d_gamma = (grad * x_hat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_beta = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_xhat = grad * gamma;
    let sum_dxhat = d_xhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&d_xhat * x_hat).sum_axis(Axis(0));
    // dx = inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
    let mut dx = &d_xhat * m - &sum_dxhat;
    dx -= &(x_hat * &sum_dxhat_xhat);
    dx *= &(inv_std / m);
    (dx, d_gamma, d_beta)
}
