//! Training loop, evaluation and the cross-validation protocol.

mod model;
mod split;

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use model::{evaluate, init_templates, TfgwModel};
pub use split::{stratified_folds, stratified_holdout, stratified_partition};

use crate::config::{AlphaMode, TrainConfig, WeightMode};
use crate::error::{dimension, validation, Error, Result};
use crate::fgw::AttributedView;
use crate::graph::{Graph, LabeledDataset};
use crate::layer::{apply_constraints, tfgw_backward, tfgw_forward, TemplateGrad, TfgwRecord};
use crate::nn::{cross_entropy_batch, Adam, AdamConfig, Gin, GinBatch, GinGrads, Mlp, MlpGrads, Mode};
use model::{accuracy, argmax_rows, check_finite, stack_rows};

/// One validation event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub fold: usize,
    /// Mean training loss of the epoch.
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub alpha: f64,
}

impl HistoryRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain record")
    }
}

/// Writes one JSON object per line.
pub fn history_to_jsonl(history: &[HistoryRecord]) -> String {
    history.iter().map(|r| r.to_json_line() + "\n").collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-validation checkpoint, or the final model without validation data.
    pub model: TfgwModel,
    pub history: Vec<HistoryRecord>,
    pub best_epoch: usize,
    pub best_val_acc: Option<f64>,
    /// Batches dropped because a distance was not finite.
    pub skipped_batches: usize,
    pub seconds: f64,
}

/// Builds a fresh model: GIN and head from the seed, templates sampled from
/// `train`.
pub fn init_model(train: &LabeledDataset, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<TfgwModel> {
    config.validate()?;
    train.validate()?;
    if train.is_empty() {
        return Err(validation("training split is empty"));
    }
    let gin = (config.gin_layers > 0).then(|| Gin::init(train.feature_dim(), config.hidden, config.gin_layers, rng));
    let k = config.templates.resolve(train.class_count);
    let templates = init_templates(train, k, gin.as_ref(), rng)?;
    let head = Mlp::init(k, config.mlp_hidden, train.class_count, config.dropout, rng)?;
    let alpha = match config.alpha {
        AlphaMode::Fixed(a) => a,
        AlphaMode::Learned => config.alpha_init,
    };
    let model = TfgwModel {
        gin,
        templates,
        alpha,
        head,
        structure_kind: train.structure_kind,
        cg: config.cg_options(),
    };
    model.validate()?;
    Ok(model)
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Gradients of the mean batch loss for every parameter group.
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub gin: Option<GinGrads>,
    pub templates: Vec<TemplateGrad>,
    pub alpha: f64,
    pub head: MlpGrads,
}

/// Result of one forward and backward pass over a batch.
#[derive(Clone, Debug)]
pub struct BatchPass {
    pub loss: f64,
    pub logits: Array2<f64>,
    pub grads: ModelGrads,
}

/// Train-mode loss and gradients on `graphs`. Updates batch-norm running
/// statistics. Returns `Error::NonFinite` if a distance is not finite.
pub fn batch_gradients(
    model: &mut TfgwModel,
    graphs: &[&Graph],
    labels: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<BatchPass> {
    if graphs.is_empty() || graphs.len() != labels.len() {
        return Err(validation("batch is empty or labels do not match"));
    }
    let batch = GinBatch::new(graphs)?;
    let (features, gin_cache) = match &mut model.gin {
        Some(gin) => {
            let (x, cache) = gin.forward(&batch, Mode::Train)?;
            (batch.split(&x), Some(cache))
        }
        None => (graphs.iter().map(|g| g.features().clone()).collect(), None),
    };
    let records: Vec<TfgwRecord> = graphs
        .par_iter()
        .zip(features.par_iter())
        .map(|(g, f)| tfgw_forward(view(g, f), &model.templates, model.alpha, &model.cg))
        .collect::<Result<_>>()?;
    let rows: Vec<Array2<f64>> = records
        .iter()
        .map(|r| r.distances.clone().insert_axis(ndarray::Axis(0)))
        .collect();
    let distances = stack_rows(&rows);
    check_finite(&distances, "template distances")?;

    let (logits, head_cache) = model.head.forward(distances.view(), Mode::Train, rng)?;
    let (loss, dlogits) = cross_entropy_batch(logits.view(), labels)?;
    if !loss.is_finite() {
        return Err(Error::Training(format!("loss became {loss}")));
    }
    let (head_grads, ddist) = model.head.backward(&head_cache, dlogits.view())?;

    let per_graph: Vec<_> = graphs
        .par_iter()
        .zip(features.par_iter())
        .zip(records.par_iter())
        .enumerate()
        .map(|(i, ((g, f), rec))| {
            let up: Vec<f64> = ddist.row(i).to_vec();
            tfgw_backward(view(g, f), &model.templates, model.alpha, rec, &up)
        })
        .collect::<Result<_>>()?;

    let mut templates: Vec<TemplateGrad> = model.templates.iter().map(TemplateGrad::zeros_like).collect();
    let mut alpha = 0.0;
    let mut dfeatures = Vec::with_capacity(per_graph.len());
    for g in per_graph {
        for (acc, t) in templates.iter_mut().zip(&g.templates) {
            acc.add_assign(t);
        }
        alpha += g.alpha;
        dfeatures.push(g.features);
    }
    let gin = match (&model.gin, &gin_cache) {
        (Some(gin), Some(cache)) => {
            let up = batch.stack(&dfeatures)?;
            Some(gin.backward(cache, &batch, up.view())?.0)
        }
        _ => None,
    };
    Ok(BatchPass {
        loss,
        logits,
        grads: ModelGrads {
            gin,
            templates,
            alpha,
            head: head_grads,
        },
    })
}

fn view<'a>(g: &'a Graph, f: &'a Array2<f64>) -> AttributedView<'a> {
    AttributedView::new(g.structure().view(), f.view(), g.weights().view())
}

fn flat(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_memory_order_mut().expect("contiguous parameter")
}

fn flat1(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_memory_order_mut().expect("contiguous parameter")
}

fn head_params(head: &mut Mlp) -> Vec<&mut [f64]> {
    head.layers
        .iter_mut()
        .flat_map(|l| [flat(&mut l.weight), flat1(&mut l.bias)])
        .collect()
}

fn gin_params(gin: &mut Gin) -> Vec<&mut [f64]> {
    gin.layers
        .iter_mut()
        .flat_map(|l| {
            [
                flat(&mut l.lin1.weight),
                flat1(&mut l.lin1.bias),
                flat1(&mut l.bn.gamma),
                flat1(&mut l.bn.beta),
                flat(&mut l.lin2.weight),
                flat1(&mut l.lin2.bias),
            ]
        })
        .collect()
}

/// Applies one Adam step to every trainable group of `model` and projects
/// the result back onto the feasible set.
fn optimizer_step(
    model: &mut TfgwModel,
    grads: &mut ModelGrads,
    adam: &mut Adam,
    config: &TrainConfig,
) -> Result<()> {
    let learn_alpha = matches!(config.alpha, AlphaMode::Learned);
    let learn_weights = config.learn_templates && config.template_weights == WeightMode::Learned;
    let pruned: Vec<Vec<bool>> = model
        .templates
        .iter()
        .map(|t| t.weights.iter().map(|&w| w <= 0.0).collect())
        .collect();

    let mut alpha_param = [model.alpha];
    let mut alpha_grad = [grads.alpha];
    let mut params: Vec<&mut [f64]> = head_params(&mut model.head);
    let mut grad_slices: Vec<&mut [f64]> = head_params_grads(&mut grads.head);
    if let (Some(gin), Some(g)) = (&mut model.gin, &mut grads.gin) {
        params.extend(gin_params(gin));
        grad_slices.extend(gin_grads(g));
    }
    if config.learn_templates {
        for (t, g) in model.templates.iter_mut().zip(grads.templates.iter_mut()) {
            params.push(flat(&mut t.structure));
            params.push(flat(&mut t.features));
            grad_slices.push(flat(&mut g.structure));
            grad_slices.push(flat(&mut g.features));
            if learn_weights {
                params.push(flat1(&mut t.weights));
                grad_slices.push(flat1(&mut g.weights));
            }
        }
    }
    if learn_alpha {
        params.push(&mut alpha_param);
        grad_slices.push(&mut alpha_grad);
    }
    let grad_refs: Vec<&[f64]> = grad_slices.iter().map(|g| &**g).collect();
    adam.step(&mut params, &grad_refs)?;
    drop(params);
    if learn_alpha {
        model.alpha = alpha_param[0];
    }
    for (t, mask) in model.templates.iter_mut().zip(&pruned) {
        for (w, &p) in t.weights.iter_mut().zip(mask) {
            if p {
                *w = 0.0;
            }
        }
    }
    apply_constraints(&mut model.templates, &mut model.alpha, model.structure_kind);
    Ok(())
}

fn head_params_grads(g: &mut MlpGrads) -> Vec<&mut [f64]> {
    g.layers
        .iter_mut()
        .flat_map(|l| [flat(&mut l.weight), flat1(&mut l.bias)])
        .collect()
}

fn gin_grads(g: &mut GinGrads) -> Vec<&mut [f64]> {
    g.layers
        .iter_mut()
        .flat_map(|l| {
            [
                flat(&mut l.lin1.weight),
                flat1(&mut l.lin1.bias),
                flat1(&mut l.bn.gamma),
                flat1(&mut l.bn.beta),
                flat(&mut l.lin2.weight),
                flat1(&mut l.lin2.bias),
            ]
        })
        .collect()
}

/// Whether the distance layer has nothing to learn, so distances can be
/// computed once.
fn frozen_distances(model: &TfgwModel, config: &TrainConfig) -> bool {
    model.gin.is_none() && !config.learn_templates && matches!(config.alpha, AlphaMode::Fixed(_))
}

/// Trains a model on `train`, validating on `val` every
/// `validation_period` epochs and after the last one.
pub fn train(
    train_set: &LabeledDataset,
    val: Option<&LabeledDataset>,
    config: &TrainConfig,
    fold: usize,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let train_set = &convert(train_set, config)?;
    let val = match val {
        Some(v) if v.is_empty() => return Err(validation("validation split is empty")),
        Some(v) => Some(convert(v, config)?),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed(config.seed, fold));
    let mut model = init_model(train_set, config, &mut rng)?;
    if let Some(v) = &val {
        if v.feature_dim() != train_set.feature_dim() {
            return Err(dimension("validation features differ from training features"));
        }
    }
    let mut adam = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });

    let n = train_set.len();
    let batch_size = if config.batch_size == 0 { n } else { config.batch_size.min(n) };
    let graphs: Vec<&Graph> = train_set.graphs.iter().collect();
    let frozen = frozen_distances(&model, config);
    let cached_train = if frozen {
        Some(model.distances(&graphs)?)
    } else {
        None
    };
    let cached_val = match (&val, frozen) {
        (Some(v), true) => Some(model.distances(&v.graphs.iter().collect::<Vec<_>>())?),
        _ => None,
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, f64, usize, TfgwModel)> = None;
    let mut skipped = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(batch_size) {
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let pass = match &cached_train {
                Some(d) => head_only_pass(&model, d, chunk, &labels, &mut rng),
                None => {
                    let batch: Vec<&Graph> = chunk.iter().map(|&i| graphs[i]).collect();
                    batch_gradients(&mut model, &batch, &labels, &mut rng)
                }
            };
            let mut pass = match pass {
                Ok(p) => p,
                Err(Error::NonFinite(what)) => {
                    log::warn!("epoch {epoch}: skipping a batch, non-finite {what}");
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            loss_sum += pass.loss * chunk.len() as f64;
            seen += chunk.len();
            optimizer_step(&mut model, &mut pass.grads, &mut adam, config)?;
        }
        let train_loss = if seen > 0 { loss_sum / seen as f64 } else { f64::NAN };
        if epoch % config.validation_period != 0 && epoch != config.epochs {
            continue;
        }
        let val_acc = match &val {
            None => None,
            Some(v) => Some(match &cached_val {
                Some(d) => accuracy(&argmax_rows(&model.head.forward_eval(d.view())?), &v.labels),
                None => evaluate(&model, v)?,
            }),
        };
        log::debug!("fold {fold} epoch {epoch}: loss {train_loss:.5}, val {val_acc:?}, alpha {:.4}", model.alpha);
        history.push(HistoryRecord {
            epoch,
            fold,
            train_loss,
            val_acc,
            alpha: model.alpha,
        });
        let score = val_acc.unwrap_or(0.0);
        let better = match &best {
            None => true,
            Some((acc, loss, _, _)) => score > *acc || (score == *acc && train_loss < *loss),
        };
        if val.is_some() && better {
            best = Some((score, train_loss, epoch, model.clone()));
        }
    }
    let (best_epoch, best_val_acc, model) = match best {
        Some((acc, _, epoch, m)) => (epoch, Some(acc), m),
        None => (config.epochs, None, model),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_acc,
        skipped_batches: skipped,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn convert(ds: &LabeledDataset, config: &TrainConfig) -> Result<LabeledDataset> {
    if ds.is_empty() {
        return Err(validation(format!("dataset {} is empty", ds.name)));
    }
    if ds.structure_kind == config.structure_kind {
        Ok(ds.clone())
    } else {
        ds.with_structure_kind(config.structure_kind)
    }
}

fn head_only_pass(
    model: &TfgwModel,
    distances: &Array2<f64>,
    rows: &[usize],
    labels: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<BatchPass> {
    let d = distances.select(ndarray::Axis(0), rows);
    check_finite(&d, "template distances")?;
    let (logits, cache) = model.head.forward(d.view(), Mode::Train, rng)?;
    let (loss, dlogits) = cross_entropy_batch(logits.view(), labels)?;
    if !loss.is_finite() {
        return Err(Error::Training(format!("loss became {loss}")));
    }
    let (head, _) = model.head.backward(&cache, dlogits.view())?;
    Ok(BatchPass {
        loss,
        logits,
        grads: ModelGrads {
            gin: None,
            templates: model.templates.iter().map(TemplateGrad::zeros_like).collect(),
            alpha: 0.0,
            head,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    /// `(epoch, validation accuracy)` at every validation event.
    pub curve: Vec<(usize, f64)>,
    pub selected_epoch: usize,
    pub best_val_acc: f64,
    /// Accuracy of this fold's checkpoint on the holdout set; only filled
    /// for the selected configuration.
    pub holdout_accuracy: Option<f64>,
    pub train_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct ConfigReport {
    pub config: TrainConfig,
    pub folds: Vec<FoldReport>,
    pub mean_val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub configs: Vec<ConfigReport>,
    /// Index into `configs` of the configuration with the best mean
    /// validation accuracy (first one on ties).
    pub selected: usize,
    pub holdout_indices: Vec<usize>,
    /// Mean and standard deviation over the selected fold checkpoints.
    pub holdout_mean: f64,
    pub holdout_std: f64,
    pub history: Vec<HistoryRecord>,
}

/// Holdout split, stratified k-fold training per configuration, selection
/// by mean best validation accuracy, then one holdout evaluation of the
/// selected configuration's fold checkpoints.
///
/// The holdout and folds use the first configuration's seed and fold count.
pub fn cross_validate(ds: &LabeledDataset, configs: &[TrainConfig]) -> Result<CvReport> {
    let first = configs.first().ok_or_else(|| validation("no configuration given"))?;
    for c in configs {
        c.validate()?;
    }
    ds.validate()?;
    let (rest, holdout) = stratified_holdout(&ds.labels, first.holdout_fraction, first.seed)?;
    if holdout.is_empty() {
        return Err(validation(format!(
            "holdout fraction {} leaves no test graphs in {}",
            first.holdout_fraction, ds.name
        )));
    }
    let folds = stratified_folds(&rest, &ds.labels, first.folds, first.seed)?;
    let holdout_set = ds.subset(&holdout);

    let mut reports = Vec::with_capacity(configs.len());
    let mut best: Option<(usize, Vec<TfgwModel>)> = None;
    let mut all_history = Vec::new();
    for (ci, config) in configs.iter().enumerate() {
        let mut fold_reports = Vec::with_capacity(folds.len());
        let mut models = Vec::with_capacity(folds.len());
        for (f, val_idx) in folds.iter().enumerate() {
            let train_idx: Vec<usize> = rest.iter().copied().filter(|i| val_idx.binary_search(i).is_err()).collect();
            let out = train(&ds.subset(&train_idx), Some(&ds.subset(val_idx)), config, f)?;
            log::info!(
                "config {ci} fold {f}: best val {:.4} at epoch {} ({:.1}s)",
                out.best_val_acc.unwrap_or(0.0),
                out.best_epoch,
                out.seconds
            );
            fold_reports.push(FoldReport {
                fold: f,
                curve: out.history.iter().filter_map(|r| r.val_acc.map(|a| (r.epoch, a))).collect(),
                selected_epoch: out.best_epoch,
                best_val_acc: out.best_val_acc.unwrap_or(0.0),
                holdout_accuracy: None,
                train_seconds: out.seconds,
            });
            all_history.extend(out.history);
            models.push(out.model);
        }
        let mean_val_acc = fold_reports.iter().map(|r| r.best_val_acc).sum::<f64>() / fold_reports.len() as f64;
        let improves = best.as_ref().is_none_or(|(b, _)| mean_val_acc > reports_mean(&reports, *b));
        if improves {
            best = Some((ci, models));
        }
        reports.push(ConfigReport {
            config: config.clone(),
            folds: fold_reports,
            mean_val_acc,
        });
    }
    let (selected, models) = best.expect("at least one configuration");
    let mut accs = Vec::with_capacity(models.len());
    for (report, model) in reports[selected].folds.iter_mut().zip(&models) {
        let acc = evaluate(model, &convert(&holdout_set, &configs[selected])?)?;
        report.holdout_accuracy = Some(acc);
        accs.push(acc);
    }
    let (holdout_mean, holdout_std) = mean_std(&accs);
    Ok(CvReport {
        configs: reports,
        selected,
        holdout_indices: holdout,
        holdout_mean,
        holdout_std,
        history: all_history,
    })
}

fn reports_mean(reports: &[ConfigReport], i: usize) -> f64 {
    reports[i].mean_val_acc
}

/// Mean and population standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / x.len() as f64;
    (m, v.sqrt())
}
