use ndarray::{Array2, Axis};
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{dimension, validation, Error, Result};
use crate::fgw::CgOptions;
use crate::graph::{Graph, LabeledDataset, StructureKind};
use crate::layer::{tfgw_forward, Template};
use crate::nn::{Gin, GinBatch, Mlp, Mode};

/// Every trainable parameter of the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct TfgwModel {
    /// `None` feeds raw node features to the distance layer.
    pub gin: Option<Gin>,
    pub templates: Vec<Template>,
    pub alpha: f64,
    pub head: Mlp,
    pub structure_kind: StructureKind,
    pub cg: CgOptions,
}

impl TfgwModel {
    pub fn template_count(&self) -> usize {
        self.templates.len()
    }

    pub fn class_count(&self) -> usize {
        self.head.class_count()
    }

    /// Feature width the distance layer works in.
    pub fn embedding_dim(&self) -> usize {
        self.templates.first().map_or(0, Template::feature_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(validation("model has no templates"));
        }
        let d = self.embedding_dim();
        if let Some(gin) = &self.gin {
            if gin.output_dim() != d {
                return Err(dimension(format!(
                    "GIN outputs {} features, templates have {d}",
                    gin.output_dim()
                )));
            }
        }
        for t in &self.templates {
            t.validate()?;
            if t.feature_dim() != d {
                return Err(dimension("templates have different feature dimensions"));
            }
        }
        if self.head.input_dim() != self.templates.len() {
            return Err(dimension("head input width differs from the template count"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(validation("alpha outside [0, 1]"));
        }
        Ok(())
    }

    /// Node features after the (eval-mode) feature extractor.
    pub fn node_features(&self, graphs: &[&Graph]) -> Result<Vec<Array2<f64>>> {
        match &self.gin {
            None => Ok(graphs.iter().map(|g| g.features().clone()).collect()),
            Some(gin) => {
                let batch = GinBatch::new(graphs)?;
                Ok(batch.split(&gin.forward_eval(&batch)?))
            }
        }
    }

    /// `graphs × K` matrix of distances to the templates.
    pub fn distances(&self, graphs: &[&Graph]) -> Result<Array2<f64>> {
        let feats = self.node_features(graphs)?;
        distance_rows(graphs, &feats, &self.templates, self.alpha, &self.cg)
    }

    pub fn logits(&self, graphs: &[&Graph]) -> Result<Array2<f64>> {
        let d = self.distances(graphs)?;
        self.head.forward_eval(d.view())
    }

    pub fn predict(&self, graphs: &[&Graph]) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(graphs)?))
    }

    /// Distances from every template (restricted to its active nodes) to all
    /// templates.
    pub fn template_distances(&self) -> Result<Array2<f64>> {
        let k = self.templates.len();
        let mut out = Array2::zeros((k, k));
        for (i, t) in self.templates.iter().enumerate() {
            let a = t.active();
            let rec = tfgw_forward(a.view(), &self.templates, self.alpha, &self.cg)?;
            out.row_mut(i).assign(&rec.distances);
        }
        Ok(out)
    }
}

pub(crate) fn distance_rows(
    graphs: &[&Graph],
    features: &[Array2<f64>],
    templates: &[Template],
    alpha: f64,
    cg: &CgOptions,
) -> Result<Array2<f64>> {
    let rows: Vec<_> = graphs
        .par_iter()
        .zip(features.par_iter())
        .map(|(g, f)| {
            let view = crate::fgw::AttributedView::new(g.structure().view(), f.view(), g.weights().view());
            tfgw_forward(view, templates, alpha, cg).map(|r| r.distances)
        })
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((graphs.len(), templates.len()));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    Ok(out)
}

pub(crate) fn argmax_rows(x: &Array2<f64>) -> Vec<usize> {
    x.rows()
        .into_iter()
        .map(|r| (0..r.len()).fold(0, |best, j| if r[j] > r[best] { j } else { best }))
        .collect()
}

/// Samples `k / classes` training graphs per class and turns them into
/// templates of the median training graph size.
///
/// Larger graphs lose their highest-index nodes; smaller ones are padded
/// with isolated zero-feature nodes. Weights start uniform. With a feature
/// extractor, template features are its train-mode outputs on the sampled
/// graphs (the extractor itself is not modified).
pub fn init_templates<R: Rng>(
    train: &LabeledDataset,
    k: usize,
    gin: Option<&Gin>,
    rng: &mut R,
) -> Result<Vec<Template>> {
    if train.is_empty() {
        return Err(validation("cannot sample templates from an empty split"));
    }
    let classes = train.class_count;
    if k == 0 || k % classes != 0 {
        return Err(validation(format!(
            "template count {k} is not a positive multiple of the {classes} classes"
        )));
    }
    let per_class = k / classes;
    let mut chosen = Vec::with_capacity(k);
    for c in 0..classes {
        let members: Vec<usize> = (0..train.len()).filter(|&i| train.labels[i] == c).collect();
        if members.is_empty() {
            return Err(validation(format!("class {c} has no training graphs")));
        }
        if members.len() >= per_class {
            chosen.extend(members.choose_multiple(rng, per_class).copied());
        } else {
            chosen.extend((0..per_class).map(|_| *members.choose(rng).expect("nonempty")));
        }
    }
    let graphs: Vec<&Graph> = chosen.iter().map(|&i| &train.graphs[i]).collect();
    let features = match gin {
        None => graphs.iter().map(|g| g.features().clone()).collect(),
        Some(gin) => {
            let batch = GinBatch::new(&graphs)?;
            let mut scratch = gin.clone();
            batch.split(&scratch.forward(&batch, Mode::Train)?.0)
        }
    };
    let m = train.median_node_count();
    Ok(graphs
        .iter()
        .zip(features)
        .map(|(g, f)| resized_template(g, &f, m))
        .collect())
}

fn resized_template(g: &Graph, features: &Array2<f64>, m: usize) -> Template {
    let n = g.node_count();
    let keep = n.min(m);
    let mut structure = Array2::zeros((m, m));
    structure
        .slice_mut(ndarray::s![..keep, ..keep])
        .assign(&g.structure().slice(ndarray::s![..keep, ..keep]));
    let mut feats = Array2::zeros((m, features.ncols()));
    feats.slice_mut(ndarray::s![..keep, ..]).assign(&features.slice(ndarray::s![..keep, ..]));
    Template {
        structure,
        features: feats,
        weights: crate::graph::uniform_weights(m),
    }
}

/// Fraction of graphs whose predicted class equals the label.
pub fn evaluate(model: &TfgwModel, split: &LabeledDataset) -> Result<f64> {
    if split.is_empty() {
        return Err(validation("cannot evaluate on an empty split"));
    }
    if split.feature_dim() != model.gin.as_ref().and_then(Gin::input_dim).unwrap_or(model.embedding_dim()) {
        return Err(dimension("split features do not match the model"));
    }
    let graphs: Vec<&Graph> = split.graphs.iter().collect();
    let pred = model.predict(&graphs)?;
    Ok(accuracy(&pred, &split.labels))
}

pub(crate) fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len().max(1) as f64
}

pub(crate) fn check_finite(x: &Array2<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

pub(crate) fn stack_rows(rows: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("equal widths")
}
