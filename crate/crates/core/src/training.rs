//! Training loop, decoupled sequence-only inference and evaluation.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::data::{
    build_graph, encode_sequence, make_batches, BeadGraph, DataError, DatasetSplit, Label, PeptideRecord, TaskKind,
    TokenSequence, BEAD_VOCAB,
};
use crate::encoders::{Architecture, CoModel, EncoderError, GraphEncoderConfig, Route, SeqEncoderConfig};
use crate::fusion::{tape_infonce, FusionConfig, FusionError, FusionKind};
use crate::params::{Binder, ParamStore};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence { epoch: usize, batch: usize, detail: String },
    #[error("{kind} model needs graph input: its predictor consumes the fused sequence+graph representation")]
    NeedsGraph { kind: FusionKind },
    #[error("{kind} model has no sequence route to run on its own")]
    NoSequenceRoute { kind: FusionKind },
    #[error("label does not match the {task} task")]
    LabelKind { task: TaskKind },
    #[error("nothing to evaluate: empty record list")]
    Empty,
    #[error("R² is undefined: labels have zero variance")]
    UndefinedR2,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl From<crate::params::MissingParam> for TrainError {
    fn from(e: crate::params::MissingParam) -> Self {
        TrainError::Encoder(e.into())
    }
}

type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: TaskKind,
    /// Class count for classification; ignored for regression.
    pub num_classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub fusion: FusionConfig,
    pub seq: SeqEncoderConfig,
    pub graph_layers: usize,
    pub pred_hidden_layers: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_task(TaskKind::Regression)
    }
}

impl TrainConfig {
    /// Defaults for `task`; the contrastive weight depends on the task kind.
    pub fn for_task(task: TaskKind) -> Self {
        TrainConfig {
            task,
            num_classes: 2,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 5,
            fusion: FusionConfig { lambda: default_lambda(task), ..FusionConfig::default() },
            seq: SeqEncoderConfig::default(),
            graph_layers: 3,
            pred_hidden_layers: 1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size < 2 {
            return Err(DataError::BatchSize(self.batch_size).into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return Err(TrainError::Config("optimizer needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        self.fusion.validate()?;
        self.architecture().validate()?;
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            task: self.task,
            num_outputs: match self.task {
                TaskKind::Regression => 1,
                TaskKind::Classification => self.num_classes,
            },
            seq: self.seq,
            graph: GraphEncoderConfig { d: self.seq.d, layers: self.graph_layers, vocab: BEAD_VOCAB },
            pred_hidden_layers: self.pred_hidden_layers,
            fusion: self.fusion,
        }
    }
}

/// Contrastive weight used when none is configured.
pub fn default_lambda(task: TaskKind) -> f64 {
    match task {
        TaskKind::Regression => 1e-4,
        TaskKind::Classification => 0.05,
    }
}

/// Adaptive-moment optimizer over a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: HashMap<String, Tensor>,
    v: HashMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: HashMap::new(), v: HashMap::new() }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &HashMap<String, Tensor>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = md[i] / c1;
                let vhat = vd[i] / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// A record with its inputs precomputed for both routes.
#[derive(Debug, Clone)]
pub struct Sample {
    pub tokens: TokenSequence,
    pub graph: Option<BeadGraph>,
    pub label: Label,
}

/// Encodes every record once; graphs are built only when the model uses them.
pub fn prepare_samples(records: &[PeptideRecord], with_graph: bool) -> Vec<Sample> {
    records
        .iter()
        .map(|r| Sample {
            tokens: encode_sequence(&r.sequence),
            graph: with_graph.then(|| build_graph(&r.sequence)),
            label: r.label,
        })
        .collect()
}

/// Per-route supervised loss: MSE for regression, cross-entropy for classification.
pub fn route_loss(tape: &mut Tape, pred: Var, labels: &[Label], task: TaskKind) -> Result<Var> {
    match task {
        TaskKind::Regression => {
            let ys = labels
                .iter()
                .map(|l| match l {
                    Label::Value(v) => Ok(*v),
                    _ => Err(TrainError::LabelKind { task }),
                })
                .collect::<Result<Vec<f64>>>()?;
            let target = tape.constant(Tensor::new(tape.shape(pred).to_vec(), ys)?);
            Ok(tape.mse_loss(pred, target)?)
        }
        TaskKind::Classification => {
            let ys = labels
                .iter()
                .map(|l| match l {
                    Label::Class(c) => Ok(*c),
                    _ => Err(TrainError::LabelKind { task }),
                })
                .collect::<Result<Vec<usize>>>()?;
            Ok(tape.cross_entropy_loss(pred, &ys)?)
        }
    }
}

/// Sum of both routes' supervised losses.
pub fn supervised_loss(
    tape: &mut Tape,
    pred_seq: Var,
    pred_graph: Var,
    labels: &[Label],
    task: TaskKind,
) -> Result<Var> {
    let a = route_loss(tape, pred_seq, labels, task)?;
    let b = route_loss(tape, pred_graph, labels, task)?;
    Ok(tape.add(a, b)?)
}

/// Supervised loss of one sample from plain route outputs.
pub fn supervised_loss_values(pred_seq: &[f64], pred_graph: &[f64], y: Label, task: TaskKind) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::vector(pred_seq.to_vec()));
    let g = tape.constant(Tensor::vector(pred_graph.to_vec()));
    let l = supervised_loss(&mut tape, s, g, &[y], task)?;
    Ok(tape.value(l).item())
}

pub fn total_loss(l_pred: f64, l_con: f64, lambda: f64) -> f64 {
    l_pred + lambda * l_con
}

/// Loss nodes of one minibatch.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub pred: Var,
    pub con: Option<Var>,
    pub total: Var,
}

/// Records the full training objective of a minibatch on `tape`.
pub fn batch_loss(model: &CoModel, tape: &mut Tape, binder: &mut Binder, batch: &[&Sample]) -> Result<BatchLoss> {
    let arch = &model.arch;
    let kind = arch.fusion.kind;
    let labels: Vec<Label> = batch.iter().map(|s| s.label).collect();
    let graph_of = |s: &Sample| -> Result<BeadGraph> {
        Ok(s.graph.clone().map_or_else(|| build_graph_from_tokens(&s.tokens), Ok)?)
    };

    let mut hs = Vec::new();
    let mut hg = Vec::new();
    for s in batch {
        if kind.uses_seq() {
            hs.push(model.seq_repr(tape, binder, &s.tokens)?);
        }
        if kind.uses_graph() {
            let g = match &s.graph {
                Some(g) => g.clone(),
                None => graph_of(s)?,
            };
            hg.push(model.graph_repr(tape, binder, &g)?);
        }
    }

    if kind.is_fused() {
        let outs = hs
            .iter()
            .zip(&hg)
            .map(|(&s, &g)| model.predict_fused(tape, binder, s, g))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let preds = tape.stack(&outs)?;
        let pred = route_loss(tape, preds, &labels, arch.task)?;
        return Ok(BatchLoss { pred, con: None, total: pred });
    }

    let mut route_losses = Vec::new();
    let mut seq_mat = None;
    let mut graph_mat = None;
    if kind.uses_seq() {
        let m = tape.stack(&hs)?;
        let p = model.predict_route(tape, binder, Route::Seq, m)?;
        route_losses.push(route_loss(tape, p, &labels, arch.task)?);
        seq_mat = Some(m);
    }
    if kind.uses_graph() {
        let m = tape.stack(&hg)?;
        let p = model.predict_route(tape, binder, Route::Graph, m)?;
        route_losses.push(route_loss(tape, p, &labels, arch.task)?);
        graph_mat = Some(m);
    }
    let pred = match route_losses[..] {
        [one] => one,
        [a, b] => tape.add(a, b)?,
        _ => unreachable!("at least one route is active"),
    };

    let (con, total) = match (kind, seq_mat, graph_mat) {
        (FusionKind::RepCon, Some(s), Some(g)) => {
            let con = tape_infonce(tape, s, g, arch.fusion.tau, arch.fusion.normalize)?;
            // λ = 0 leaves the contrastive node off the gradient path entirely.
            let total = if arch.fusion.lambda > 0.0 {
                let weighted = tape.scale(con, arch.fusion.lambda)?;
                tape.add(pred, weighted)?
            } else {
                pred
            };
            (Some(con), total)
        }
        _ => (None, pred),
    };
    Ok(BatchLoss { pred, con, total })
}

fn build_graph_from_tokens(tokens: &TokenSequence) -> std::result::Result<BeadGraph, DataError> {
    let raw: String = tokens.tokens.iter().map(|&t| crate::data::ALPHABET[t]).collect();
    Ok(build_graph(&crate::data::Sequence::new(&raw)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss_pred: f64,
    pub loss_con: f64,
    pub loss_train: f64,
}

/// One row of the per-epoch loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss_pred: f64,
    pub loss_con: f64,
    pub loss_train: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub rows: Vec<EpochRow>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss_pred,loss_con,loss_train,val_metric\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.loss_pred, r.loss_con, r.loss_train, r.val_metric
            );
        }
        out
    }
}

/// Stateful driver of the optimisation loop.
pub struct Trainer {
    pub model: CoModel,
    pub optimizer: Adam,
    pub cfg: TrainConfig,
    samples: Vec<Sample>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, train: &[PeptideRecord]) -> Result<Self> {
        cfg.validate()?;
        if train.len() < 2 {
            return Err(DataError::TooFew { needed: 2, got: train.len() }.into());
        }
        let model = CoModel::init(cfg.architecture(), cfg.seed)?;
        let samples = prepare_samples(train, cfg.fusion.kind.uses_graph());
        let optimizer = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
        Ok(Trainer { model, optimizer, cfg, samples })
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    /// Batch order for `epoch` (1-based), fixed by the seed.
    pub fn epoch_batches(&self, epoch: usize) -> Result<Vec<Vec<usize>>> {
        let seed = self.cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64);
        Ok(make_batches(self.samples.len(), self.cfg.batch_size, seed)?)
    }

    /// Forward, backward and one optimizer update on the given sample indices.
    pub fn step(&mut self, batch: &[usize]) -> Result<StepStats> {
        let refs: Vec<&Sample> = batch.iter().map(|&i| &self.samples[i]).collect();
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.model.params);
        let loss = batch_loss(&self.model, &mut tape, &mut binder, &refs)?;
        let stats = StepStats {
            loss_pred: tape.value(loss.pred).item(),
            loss_con: loss.con.map_or(0.0, |c| tape.value(c).item()),
            loss_train: tape.value(loss.total).item(),
        };
        if !(stats.loss_pred.is_finite() && stats.loss_con.is_finite() && stats.loss_train.is_finite()) {
            return Err(TrainError::Divergence {
                epoch: 0,
                batch: 0,
                detail: format!(
                    "non-finite loss (pred {}, con {}, train {})",
                    stats.loss_pred, stats.loss_con, stats.loss_train
                ),
            });
        }
        let grads = tape.backward(loss.total)?;
        let named = binder.collect_grads(&grads);
        drop(binder);
        self.optimizer.step(&mut self.model.params, &named);
        Ok(stats)
    }

    /// Runs one epoch and returns the batch-averaged losses.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<StepStats> {
        let batches = self.epoch_batches(epoch)?;
        let mut sum = StepStats { loss_pred: 0.0, loss_con: 0.0, loss_train: 0.0 };
        for (b, batch) in batches.iter().enumerate() {
            let s = self.step(batch).map_err(|e| match e {
                TrainError::Divergence { detail, .. } => TrainError::Divergence { epoch, batch: b + 1, detail },
                other => other,
            })?;
            sum.loss_pred += s.loss_pred;
            sum.loss_con += s.loss_con;
            sum.loss_train += s.loss_train;
        }
        let n = batches.len() as f64;
        Ok(StepStats { loss_pred: sum.loss_pred / n, loss_con: sum.loss_con / n, loss_train: sum.loss_train / n })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: CoModel,
    pub curve: LossCurve,
    pub best_epoch: usize,
}

/// Validation score where larger is better, plus the value reported in the curve.
fn selection_score(model: &CoModel, records: &[PeptideRecord]) -> Result<(f64, f64)> {
    let m = evaluate(model, records)?;
    Ok(match model.arch.task {
        TaskKind::Regression => {
            let mse = m.mse.unwrap_or(f64::INFINITY);
            (-mse, mse)
        }
        TaskKind::Classification => {
            let acc = m.accuracy.unwrap_or(0.0);
            (acc, acc)
        }
    })
}

/// Trains `cfg.epochs` epochs and keeps the best-validation parameters
/// (earliest epoch on ties). Without a validation set the training loss selects.
pub fn train(dataset: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), &dataset.train)?;
    let mut curve = LossCurve::default();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=cfg.epochs {
        let stats = trainer.run_epoch(epoch)?;
        let (score, reported) = if dataset.validation.is_empty() {
            (-stats.loss_pred, stats.loss_pred)
        } else {
            selection_score(&trainer.model, &dataset.validation)?
        };
        if !reported.is_finite() {
            return Err(TrainError::Divergence {
                epoch,
                batch: 0,
                detail: format!("non-finite validation metric {reported}"),
            });
        }
        curve.rows.push(EpochRow {
            epoch,
            loss_pred: stats.loss_pred,
            loss_con: stats.loss_con,
            loss_train: stats.loss_train,
            val_metric: reported,
        });
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, trainer.model.params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    let model = CoModel { arch: trainer.model.arch, params };
    Ok(TrainOutcome { model, curve, best_epoch })
}

/// Sequence-only prediction `f_p(f_e(x_seq))`; never builds or encodes a graph.
pub fn infer(x_seq: &TokenSequence, model: &CoModel) -> Result<Vec<f64>> {
    let kind = model.kind();
    if kind.is_fused() {
        return Err(TrainError::NeedsGraph { kind });
    }
    if !model.has_route(Route::Seq) {
        return Err(TrainError::NoSequenceRoute { kind });
    }
    Ok(model.predict_route_values(Route::Seq, Some(x_seq), None)?)
}

/// Prediction through the path the model deploys: the sequence route when it
/// has one, the fused path for baselines and the graph route for graph-only models.
pub fn predict(model: &CoModel, sample: &Sample) -> Result<Vec<f64>> {
    let kind = model.kind();
    if kind.is_fused() {
        let g = match &sample.graph {
            Some(g) => g.clone(),
            None => build_graph_from_tokens(&sample.tokens)?,
        };
        return Ok(model.predict_fused_values(&sample.tokens, &g)?);
    }
    if model.has_route(Route::Seq) {
        return infer(&sample.tokens, model);
    }
    let g = match &sample.graph {
        Some(g) => g.clone(),
        None => build_graph_from_tokens(&sample.tokens)?,
    };
    Ok(model.predict_route_values(Route::Graph, None, Some(&g))?)
}

/// Evaluation metrics; entries that do not apply to the task are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub r2: Option<f64>,
    pub accuracy: Option<f64>,
}

impl Metrics {
    /// `key=value` lines for the metrics present.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for (k, v) in [("mae", self.mae), ("mse", self.mse), ("r2", self.r2), ("accuracy", self.accuracy)] {
            if let Some(v) = v {
                let _ = writeln!(out, "{k}={v:.6}");
            }
        }
        out
    }
}

pub fn r_squared(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.is_empty() {
        return Err(TrainError::Empty);
    }
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let ss_tot: f64 = labels.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(TrainError::UndefinedR2);
    }
    let ss_res: f64 = preds.iter().zip(labels).map(|(p, y)| (p - y).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// MAE, MSE and R² (omitted when undefined) of scalar predictions.
pub fn regression_metrics(preds: &[f64], labels: &[f64]) -> Result<Metrics> {
    if preds.is_empty() {
        return Err(TrainError::Empty);
    }
    let n = preds.len() as f64;
    let mae = preds.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / n;
    let mse = preds.iter().zip(labels).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n;
    Ok(Metrics { mae: Some(mae), mse: Some(mse), r2: r_squared(preds, labels).ok(), accuracy: None })
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(model: &CoModel, records: &[PeptideRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(TrainError::Empty);
    }
    let samples = prepare_samples(records, model.kind().is_fused() || !model.has_route(Route::Seq));
    let outputs = samples.iter().map(|s| predict(model, s)).collect::<Result<Vec<_>>>()?;
    match model.arch.task {
        TaskKind::Regression => {
            let preds: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
            let labels: Vec<f64> = records.iter().map(|r| r.label.value()).collect();
            regression_metrics(&preds, &labels)
        }
        TaskKind::Classification => {
            let correct = outputs
                .iter()
                .zip(records)
                .filter(|(o, r)| matches!(r.label, Label::Class(c) if c == argmax(o)))
                .count();
            Ok(Metrics { accuracy: Some(correct as f64 / records.len() as f64), ..Metrics::default() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn supervised_loss_cases() {
        let l = supervised_loss_values(&[2.0], &[2.0], Label::Value(2.0), TaskKind::Regression).unwrap();
        assert_eq!(l, 0.0);
        let l = supervised_loss_values(&[1.0], &[3.0], Label::Value(2.0), TaskKind::Regression).unwrap();
        assert_eq!(l, 2.0);
        let l = supervised_loss_values(&[0.0; 3], &[0.7; 3], Label::Class(1), TaskKind::Classification).unwrap();
        assert!((l - 2.0 * 3f64.ln()).abs() < 1e-12);
        assert!(supervised_loss_values(&[0.0], &[0.0], Label::Class(0), TaskKind::Regression).is_err());
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(0.5, 123.0, 0.0), 0.5);
        assert_eq!(total_loss(0.5, 0.25, 1.0), 0.75);
        assert_eq!(total_loss(0.0, 2.0, 1e-4), 2e-4);
    }

    #[test]
    fn metric_definitions() {
        let m = regression_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.mae, m.mse, m.r2), (Some(0.0), Some(0.0), Some(1.0)));
        let labels = [1.0, 2.0, 6.0];
        assert_eq!(r_squared(&[3.0; 3], &labels).unwrap(), 0.0);
        let m = regression_metrics(&[1.0, 3.0], &[2.0, 2.0]).unwrap();
        assert_eq!((m.mae, m.mse, m.r2), (Some(1.0), Some(1.0), None));
        assert!(matches!(r_squared(&[1.0, 3.0], &[2.0, 2.0]), Err(TrainError::UndefinedR2)));
        assert_eq!(m.report(), "mae=1.000000\nmse=1.000000\n");
    }

    #[test]
    fn adam_with_vanishing_rate_keeps_parameters() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![0.3, -1.7, 2.5e-3]));
        let before = store.clone();
        let grads = HashMap::from([("w".to_string(), Tensor::vector(vec![10.0, -3.0, 0.5]))]);
        let mut adam = Adam::new(1e-300, 0.9, 0.999, 1e-8);
        adam.step(&mut store, &grads);
        assert_eq!(store, before);
        let mut adam = Adam::new(0.0, 0.9, 0.999, 1e-8);
        adam.step(&mut store, &grads);
        assert_eq!(store, before);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::for_task(TaskKind::Classification).fusion.lambda, 0.05);
        let bad = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
