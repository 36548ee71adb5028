use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{relu, relu_backward, BatchNorm, BatchNormCache, BatchNormGrads, Linear, LinearGrads, Mode};
use crate::error::{dimension, validation, Result};
use crate::graph::Graph;

/// One GIN layer: `x_i ↦ MLP((1 + ε) x_i + Σ_{j ∈ N(i)} x_j)` where the MLP
/// is linear, batch norm, ReLU, linear, ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct GinLayer {
    pub lin1: Linear,
    pub bn: BatchNorm,
    pub lin2: Linear,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GinLayerGrads {
    pub lin1: LinearGrads,
    pub bn: BatchNormGrads,
    pub lin2: LinearGrads,
}

/// Stack of GIN layers whose outputs are concatenated.
#[derive(Clone, Debug, PartialEq)]
pub struct Gin {
    pub layers: Vec<GinLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GinGrads {
    pub layers: Vec<GinLayerGrads>,
}

/// Nodes of several graphs stacked into one matrix.
#[derive(Clone, Debug)]
pub struct GinBatch {
    pub features: Array2<f64>,
    /// Neighbours as row indices into `features`.
    pub neighbors: Vec<Vec<usize>>,
    /// Row range of graph `g` is `offsets[g]..offsets[g + 1]`.
    pub offsets: Vec<usize>,
}

impl GinBatch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(validation("empty batch"));
        }
        let d = graphs[0].feature_dim();
        let total: usize = graphs.iter().map(|g| g.node_count()).sum();
        let mut features = Array2::zeros((total, d));
        let mut neighbors = Vec::with_capacity(total);
        let mut offsets = vec![0];
        for g in graphs {
            if g.feature_dim() != d {
                return Err(dimension("graphs in a batch have different feature dimensions"));
            }
            let start = *offsets.last().unwrap();
            let n = g.node_count();
            features.slice_mut(s![start..start + n, ..]).assign(g.features());
            neighbors.extend(g.neighbors().iter().map(|nb| nb.iter().map(|&j| j + start).collect::<Vec<_>>()));
            offsets.push(start + n);
        }
        Ok(GinBatch {
            features,
            neighbors,
            offsets,
        })
    }

    pub fn graph_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Splits a stacked node matrix back into per-graph blocks.
    pub fn split(&self, stacked: &Array2<f64>) -> Vec<Array2<f64>> {
        self.offsets
            .windows(2)
            .map(|w| stacked.slice(s![w[0]..w[1], ..]).to_owned())
            .collect()
    }

    /// Stacks per-graph blocks in batch order.
    pub fn stack(&self, blocks: &[Array2<f64>]) -> Result<Array2<f64>> {
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        ndarray::concatenate(Axis(0), &views).map_err(|e| dimension(e.to_string()))
    }
}

fn aggregate(x: ArrayView2<'_, f64>, neighbors: &[Vec<usize>], eps: f64) -> Array2<f64> {
    let mut out = x.to_owned() * (1.0 + eps);
    for (i, nb) in neighbors.iter().enumerate() {
        let mut row = out.row_mut(i);
        for &j in nb {
            row += &x.row(j);
        }
    }
    out
}

#[derive(Clone, Debug)]
struct LayerCache {
    agg: Array2<f64>,
    bn: BatchNormCache,
    a1: Array2<f64>,
    out: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct GinCache {
    layers: Vec<LayerCache>,
}

impl GinLayer {
    pub fn init<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        GinLayer {
            lin1: Linear::init(inputs, hidden, rng),
            bn: BatchNorm::new(hidden),
            lin2: Linear::init(hidden, hidden, rng),
            eps: 0.0,
        }
    }
}

impl Gin {
    pub fn init<R: Rng>(inputs: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let mut out = Vec::with_capacity(layers);
        let mut d = inputs;
        for _ in 0..layers {
            out.push(GinLayer::init(d, hidden, rng));
            d = hidden;
        }
        Gin { layers: out }
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.lin1.inputs())
    }

    /// Width of the concatenated output.
    pub fn output_dim(&self) -> usize {
        self.layers.iter().map(|l| l.lin2.outputs()).sum()
    }

    fn check(&self, batch: &GinBatch) -> Result<()> {
        if self.layers.is_empty() {
            return Err(validation("GIN has no layers"));
        }
        if Some(batch.features.ncols()) != self.input_dim() {
            return Err(dimension(format!(
                "GIN expects {} input features, got {}",
                self.input_dim().unwrap_or(0),
                batch.features.ncols()
            )));
        }
        Ok(())
    }

    /// Forward pass over the stacked nodes. Train mode normalizes with batch
    /// statistics and updates the running ones; eval mode delegates to
    /// [`Gin::forward_eval`] and returns an empty cache.
    pub fn forward(&mut self, batch: &GinBatch, mode: Mode) -> Result<(Array2<f64>, GinCache)> {
        if mode == Mode::Eval {
            return Ok((self.forward_eval(batch)?, GinCache { layers: Vec::new() }));
        }
        self.check(batch)?;
        let mut x = batch.features.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let agg = aggregate(x.view(), &batch.neighbors, layer.eps);
            let z1 = layer.lin1.forward(agg.view())?;
            let (b, bn) = layer.bn.forward_train(z1.view());
            let a1 = relu(b);
            let out = relu(layer.lin2.forward(a1.view())?);
            outs.push(out.clone());
            caches.push(LayerCache {
                agg,
                bn,
                a1,
                out: out.clone(),
            });
            x = out;
        }
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        let jk = ndarray::concatenate(Axis(1), &views).map_err(|e| dimension(e.to_string()))?;
        Ok((jk, GinCache { layers: caches }))
    }

    /// Eval-mode forward with the running batch-norm statistics.
    pub fn forward_eval(&self, batch: &GinBatch) -> Result<Array2<f64>> {
        self.check(batch)?;
        let mut x = batch.features.clone();
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let agg = aggregate(x.view(), &batch.neighbors, layer.eps);
            let b = layer.bn.forward_eval(layer.lin1.forward(agg.view())?.view());
            x = relu(layer.lin2.forward(relu(b).view())?);
            outs.push(x.clone());
        }
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        ndarray::concatenate(Axis(1), &views).map_err(|e| dimension(e.to_string()))
    }

    /// Reverse pass of a train-mode forward. Returns parameter gradients and
    /// the gradient with respect to the input features.
    pub fn backward(&self, cache: &GinCache, batch: &GinBatch, upstream: ArrayView2<'_, f64>) -> Result<(GinGrads, Array2<f64>)> {
        if cache.layers.is_empty() {
            return Err(validation("GIN backward needs a train-mode cache"));
        }
        if cache.layers.len() != self.layers.len() || upstream.dim() != (batch.features.nrows(), self.output_dim()) {
            return Err(dimension("GIN cache or upstream gradient does not match the network"));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut offset = self.output_dim();
        let mut carry: Option<Array2<f64>> = None;
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            let w = layer.lin2.outputs();
            offset -= w;
            let mut d_out = upstream.slice(s![.., offset..offset + w]).to_owned();
            if let Some(from_above) = carry.take() {
                d_out += &from_above;
            }
            let d_z2 = relu_backward(&c.out, d_out);
            let (g2, d_a1) = layer.lin2.backward(c.a1.view(), d_z2.view());
            let d_b = relu_backward(&c.a1, d_a1);
            let (gbn, d_z1) = layer.bn.backward(&c.bn, d_b.view());
            let (g1, d_agg) = layer.lin1.backward(c.agg.view(), d_z1.view());
            // adjoint of the symmetric aggregation
            let d_in = aggregate(d_agg.view(), &batch.neighbors, layer.eps);
            carry = Some(d_in);
            grads.push(GinLayerGrads {
                lin1: g1,
                bn: gbn,
                lin2: g2,
            });
        }
        grads.reverse();
        Ok((GinGrads { layers: grads }, carry.expect("at least one layer")))
    }
}

impl GinGrads {
    pub fn add_assign(&mut self, other: &GinGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.lin1.weight += &b.lin1.weight;
            a.lin1.bias += &b.lin1.bias;
            a.bn.gamma += &b.bn.gamma;
            a.bn.beta += &b.bn.beta;
            a.lin2.weight += &b.lin2.weight;
            a.lin2.bias += &b.lin2.bias;
        }
    }
}
