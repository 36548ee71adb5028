//! Small feed-forward stack with hand-written backward passes.

mod adam;
mod gin;
mod loss;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use gin::{Gin, GinBatch, GinCache, GinGrads, GinLayer, GinLayerGrads};
pub use loss::{cross_entropy, cross_entropy_batch};
pub use mlp::{Mlp, MlpCache, MlpGrads};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{dimension, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Affine map `y = x W + b` acting on rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in × out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Uniform initialization in `±1/sqrt(in)`.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        Linear {
            weight: Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-bound..bound)),
            bias: Array1::from_shape_fn(outputs, |_| rng.random_range(-bound..bound)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.inputs() {
            return Err(dimension(format!(
                "linear layer expects {} inputs, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight) + &self.bias)
    }

    pub fn backward(&self, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>) -> (LinearGrads, Array2<f64>) {
        let grads = LinearGrads {
            weight: x.t().dot(&dy),
            bias: dy.sum_axis(Axis(0)),
        };
        (grads, dy.dot(&self.weight.t()))
    }
}

/// Batch normalization over rows with running statistics for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Normalizes with the batch statistics and updates the running ones.
    pub fn forward_train(&mut self, x: ArrayView2<'_, f64>) -> (Array2<f64>, BatchNormCache) {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("batch norm on an empty batch");
        let centered = &x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = &centered * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        let unbiased = if n > 1.0 { &var * (n / (n - 1.0)) } else { var.clone() };
        self.running_mean = &self.running_mean * (1.0 - self.momentum) + &mean * self.momentum;
        self.running_var = &self.running_var * (1.0 - self.momentum) + &unbiased * self.momentum;
        (y, BatchNormCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        (&x - &self.running_mean) * &inv_std * &self.gamma + &self.beta
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: ArrayView2<'_, f64>) -> (BatchNormGrads, Array2<f64>) {
        let n = dy.nrows() as f64;
        let grads = BatchNormGrads {
            gamma: (&dy * &cache.xhat).sum_axis(Axis(0)),
            beta: dy.sum_axis(Axis(0)),
        };
        let dxhat = &dy * &self.gamma;
        let sum_d = dxhat.sum_axis(Axis(0));
        let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let dx = (&dxhat * n - &sum_d - &cache.xhat * &sum_dx) * &(&cache.inv_std / n);
        (grads, dx)
    }
}

pub(crate) fn relu(x: Array2<f64>) -> Array2<f64> {
    x.mapv_into(|v| v.max(0.0))
}

/// Zeroes `dy` where the forward output was not positive.
pub(crate) fn relu_backward(out: &Array2<f64>, mut dy: Array2<f64>) -> Array2<f64> {
    ndarray::Zip::from(&mut dy).and(out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dy
}
