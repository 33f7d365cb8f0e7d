use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::layer::{
    batch_moments, batch_norm_backward, dense_forward, ActivationKind, LayerCache, LayerParams, LayerSpec, Tensor2,
};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A sequential stack of layers together with their parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    specs: Vec<LayerSpec>,
    params: Vec<LayerParams>,
    /// Bumped whenever trainable parameters change; caches from older
    /// versions are rejected by `backward`.
    #[serde(skip)]
    version: u64,
}

/// Everything `backward` needs from one Train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    version: u64,
    batch_rows: usize,
}

/// Gradients of the trainable tensors, in [`Network::trainable`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor2>);

impl Gradients {
    pub fn tensors(&self) -> &[Tensor2] {
        &self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn check_dims(specs: &[LayerSpec]) -> Result<usize> {
    let first = specs
        .iter()
        .find_map(|s| match *s {
            LayerSpec::Dense { in_dim, .. } => Some(in_dim),
            LayerSpec::BatchNorm { dim, .. } => Some(dim),
            _ => None,
        })
        .ok_or_else(|| Error::Shape("network needs at least one dense or batch-norm layer".into()))?;
    let mut width = first;
    for (k, s) in specs.iter().enumerate() {
        if let LayerSpec::Dropout { rate } = *s {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
            }
        }
        width = s
            .output_dim(width)
            .ok_or_else(|| Error::Shape(format!("layer {k} ({s:?}) cannot take width {width}")))?;
    }
    Ok(first)
}

impl Network {
    /// Randomly initialised network. Each dense layer's initialiser follows
    /// the next activation in the stack (He for ReLU, Glorot otherwise).
    pub fn new(specs: Vec<LayerSpec>, rng: &mut RngStream) -> Result<Self> {
        check_dims(&specs)?;
        let params = specs
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let next_act = specs[k + 1..].iter().find_map(|n| match n {
                    LayerSpec::Activation { kind } => Some(*kind),
                    LayerSpec::Dense { .. } => Some(ActivationKind::Identity),
                    _ => None,
                });
                LayerParams::init(s, next_act, rng)
            })
            .collect();
        Ok(Self {
            specs,
            params,
            version: 0,
        })
    }

    pub fn from_parts(specs: Vec<LayerSpec>, params: Vec<LayerParams>) -> Result<Self> {
        check_dims(&specs)?;
        if specs.len() != params.len() {
            return Err(Error::Shape("one parameter entry per layer is required".into()));
        }
        for (k, (s, p)) in specs.iter().zip(&params).enumerate() {
            let ok = match (s, p) {
                (LayerSpec::Dense { in_dim, out_dim }, LayerParams::Dense { weight, bias }) => {
                    weight.dim() == (*in_dim, *out_dim) && bias.dim() == (1, *out_dim)
                }
                (
                    LayerSpec::BatchNorm { dim, .. },
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => {
                    gamma.dim() == (1, *dim)
                        && beta.dim() == (1, *dim)
                        && running_mean.len() == *dim
                        && running_var.len() == *dim
                        && running_var.iter().all(|&v| v >= 0.0)
                }
                (LayerSpec::Dropout { .. } | LayerSpec::Activation { .. }, LayerParams::Stateless) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::Shape(format!("parameters of layer {k} do not match {s:?}")));
            }
        }
        Ok(Self {
            specs,
            params,
            version: 0,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        check_dims(&self.specs).expect("validated at construction")
    }

    pub fn output_dim(&self) -> usize {
        let mut w = self.input_dim();
        for s in &self.specs {
            w = s.output_dim(w).unwrap();
        }
        w
    }

    pub fn trainable(&self) -> Vec<&Tensor2> {
        self.params.iter().flat_map(|p| p.trainable()).collect()
    }

    /// Mutable access to trainable tensors; invalidates outstanding caches.
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor2> {
        self.version += 1;
        self.params.iter_mut().flat_map(|p| p.trainable_mut()).collect()
    }

    pub fn n_trainable(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// Runs the stack. Train mode uses batch statistics (and updates the
    /// running ones) and samples dropout masks from `rng`; Infer mode uses
    /// running statistics and skips dropout.
    pub fn forward(&mut self, batch: &Tensor2, mode: Mode, rng: &mut RngStream) -> Result<(Tensor2, ForwardCache)> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        if mode == Mode::Infer {
            let out = self.predict(batch)?;
            return Ok((
                out,
                ForwardCache {
                    layers: Vec::new(),
                    version: u64::MAX,
                    batch_rows: batch.nrows(),
                },
            ));
        }
        let mut x = batch.clone();
        let mut caches = Vec::with_capacity(self.specs.len());
        for (spec, params) in self.specs.iter().zip(self.params.iter_mut()) {
            x = match (spec, params) {
                (LayerSpec::Dense { .. }, LayerParams::Dense { weight, bias }) => {
                    let y = dense_forward(&x, weight, bias);
                    caches.push(LayerCache::Dense { input: x });
                    y
                }
                (
                    LayerSpec::BatchNorm { momentum, epsilon, .. },
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => {
                    let (mean, var) = batch_moments(&x);
                    let inv_std = var.mapv(|v| 1.0 / (v + epsilon).sqrt());
                    let x_hat = (&x - &mean) * &inv_std;
                    let y = &x_hat * &*gamma + &*beta;
                    running_mean.zip_mut_with(&mean, |r, &m| *r = momentum * *r + (1.0 - momentum) * m);
                    running_var.zip_mut_with(&var, |r, &v| *r = momentum * *r + (1.0 - momentum) * v);
                    caches.push(LayerCache::BatchNorm { x_hat, inv_std });
                    y
                }
                (LayerSpec::Dropout { rate }, _) => {
                    let keep = 1.0 - rate;
                    let scale = if *rate == 0.0 {
                        Array2::ones(x.dim())
                    } else {
                        Array2::from_shape_simple_fn(x.dim(), || if rng.open01() >= *rate { 1.0 / keep } else { 0.0 })
                    };
                    let y = &x * &scale;
                    caches.push(LayerCache::Dropout { scale });
                    y
                }
                (LayerSpec::Activation { kind }, _) => {
                    let y = kind.apply(&x);
                    caches.push(LayerCache::Activation {
                        input: x,
                        output: y.clone(),
                    });
                    y
                }
                _ => unreachable!("parameters validated against specs"),
            };
        }
        Ok((
            x,
            ForwardCache {
                layers: caches,
                version: self.version,
                batch_rows: batch.nrows(),
            },
        ))
    }

    /// Infer-mode forward pass; pure.
    pub fn predict(&self, batch: &Tensor2) -> Result<Tensor2> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let mut x = batch.clone();
        for (spec, params) in self.specs.iter().zip(&self.params) {
            x = match (spec, params) {
                (LayerSpec::Dense { .. }, LayerParams::Dense { weight, bias }) => dense_forward(&x, weight, bias),
                (
                    LayerSpec::BatchNorm { epsilon, .. },
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => {
                    let inv_std = running_var.mapv(|v| 1.0 / (v + epsilon).sqrt());
                    (&x - running_mean) * &inv_std * gamma + beta
                }
                (LayerSpec::Dropout { .. }, _) => x,
                (LayerSpec::Activation { kind }, _) => kind.apply(&x),
                _ => unreachable!("parameters validated against specs"),
            };
        }
        Ok(x)
    }

    /// Reverse-mode gradients of all trainable tensors, including the flow
    /// through batch statistics.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Tensor2) -> Result<Gradients> {
        if cache.version != self.version || cache.layers.len() != self.specs.len() {
            return Err(Error::StaleCache(
                "cache does not come from a Train-mode forward on the current parameters".into(),
            ));
        }
        if loss_grad.dim() != (cache.batch_rows, self.output_dim()) {
            return Err(Error::Shape(format!(
                "loss gradient shape {:?} does not match output ({}, {})",
                loss_grad.dim(),
                cache.batch_rows,
                self.output_dim()
            )));
        }
        let mut grads: Vec<Vec<Tensor2>> = vec![Vec::new(); self.specs.len()];
        let mut g = loss_grad.clone();
        for k in (0..self.specs.len()).rev() {
            g = match (&self.params[k], &cache.layers[k]) {
                (LayerParams::Dense { weight, .. }, LayerCache::Dense { input }) => {
                    grads[k] = vec![input.t().dot(&g), g.sum_axis(Axis(0)).insert_axis(Axis(0))];
                    g.dot(&weight.t())
                }
                (LayerParams::BatchNorm { gamma, .. }, LayerCache::BatchNorm { x_hat, inv_std }) => {
                    let (dx, d_gamma, d_beta) = batch_norm_backward(&g, x_hat, inv_std, gamma);
                    grads[k] = vec![d_gamma, d_beta];
                    dx
                }
                (_, LayerCache::Dropout { scale }) => &g * scale,
                (_, LayerCache::Activation { input, output }) => {
                    let LayerSpec::Activation { kind } = self.specs[k] else {
                        unreachable!()
                    };
                    kind.backward(input, output, &g)
                }
                _ => return Err(Error::StaleCache(format!("cache entry {k} does not match layer"))),
            };
        }
        Ok(Gradients(grads.into_iter().flatten().collect()))
    }
}
