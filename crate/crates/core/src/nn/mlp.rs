use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{relu, relu_backward, Linear, LinearGrads, Mode};
use crate::error::{dimension, validation, Result};

/// Classifier head: linear, ReLU, dropout, linear, ReLU, dropout, linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: [Linear; 3],
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: [LinearGrads; 3],
}

#[derive(Clone, Debug)]
pub struct MlpCache {
    x: Array2<f64>,
    h1: Array2<f64>,
    d1: Array2<f64>,
    h2: Array2<f64>,
    d2: Array2<f64>,
    /// Inverted-dropout multipliers (`0` or `1 / (1 - p)`), empty in eval mode.
    masks: Option<(Array2<f64>, Array2<f64>)>,
}

fn dropout_mask<R: Rng>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < p { 0.0 } else { keep })
}

impl Mlp {
    pub fn init<R: Rng>(inputs: usize, hidden: usize, classes: usize, dropout: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(validation(format!("dropout must lie in [0, 1), got {dropout}")));
        }
        Ok(Mlp {
            layers: [
                Linear::init(inputs, hidden, rng),
                Linear::init(hidden, hidden, rng),
                Linear::init(hidden, classes, rng),
            ],
            dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn class_count(&self) -> usize {
        self.layers[2].outputs()
    }

    /// Logits for every row of `x`. The RNG is only drawn from in train mode
    /// with a nonzero dropout rate.
    pub fn forward<R: Rng>(&self, x: ArrayView2<'_, f64>, mode: Mode, rng: &mut R) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(dimension(format!("head expects {} inputs, got {}", self.input_dim(), x.ncols())));
        }
        let h1 = relu(self.layers[0].forward(x)?);
        let masks = (mode == Mode::Train && self.dropout > 0.0).then(|| {
            let m1 = dropout_mask(h1.dim(), self.dropout, rng);
            let m2 = dropout_mask((h1.nrows(), self.layers[1].outputs()), self.dropout, rng);
            (m1, m2)
        });
        let d1 = match &masks {
            Some((m1, _)) => &h1 * m1,
            None => h1.clone(),
        };
        let h2 = relu(self.layers[1].forward(d1.view())?);
        let d2 = match &masks {
            Some((_, m2)) => &h2 * m2,
            None => h2.clone(),
        };
        let logits = self.layers[2].forward(d2.view())?;
        Ok((
            logits,
            MlpCache {
                x: x.to_owned(),
                h1,
                d1,
                h2,
                d2,
                masks,
            },
        ))
    }

    /// Eval-mode logits.
    pub fn forward_eval(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(dimension(format!("head expects {} inputs, got {}", self.input_dim(), x.ncols())));
        }
        let h1 = relu(self.layers[0].forward(x)?);
        let h2 = relu(self.layers[1].forward(h1.view())?);
        self.layers[2].forward(h2.view())
    }

    pub fn backward(&self, cache: &MlpCache, upstream: ArrayView2<'_, f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if upstream.dim() != (cache.x.nrows(), self.class_count()) {
            return Err(dimension("head upstream gradient has the wrong shape"));
        }
        let (g3, mut dd2) = self.layers[2].backward(cache.d2.view(), upstream);
        if let Some((_, m2)) = &cache.masks {
            dd2 *= m2;
        }
        let dz2 = relu_backward(&cache.h2, dd2);
        let (g2, mut dd1) = self.layers[1].backward(cache.d1.view(), dz2.view());
        if let Some((m1, _)) = &cache.masks {
            dd1 *= m1;
        }
        let dz1 = relu_backward(&cache.h1, dd1);
        let (g1, dx) = self.layers[0].backward(cache.x.view(), dz1.view());
        Ok((MlpGrads { layers: [g1, g2, g3] }, dx))
    }
}
