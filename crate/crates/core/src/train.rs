//! Training schedules, the two incremental procedures, and evaluation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::batch::epoch_order;
use crate::data::{per_pixel_mean, BatchIter, DatasetSplit, Preprocess};
use crate::error::{Error, Result};
use crate::model::{load_into_config, save_checkpoint, ColumnSpec, Model, NetworkConfig, Params, UpdateScope};
use crate::nn;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    FromScratch,
    Inc1,
    Inc2,
}

/// Three-phase step schedule: `epochs_main` at `lr`, then `epochs_fine1` at
/// `lr / drop`, then `epochs_fine2` at `lr / drop^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub epochs_main: usize,
    pub epochs_fine1: usize,
    pub epochs_fine2: usize,
    pub lr: f64,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub mode: TrainMode,
    pub seed: u64,
}

impl TrainPlan {
    /// Optimizer settings from `config`, a single phase of `epochs`.
    pub fn from_config(config: &NetworkConfig, epochs: usize, seed: u64) -> Self {
        TrainPlan {
            epochs_main: epochs,
            epochs_fine1: 0,
            epochs_fine2: 0,
            lr: config.lr,
            lr_drop_factor: 10.0,
            momentum: config.momentum,
            weight_decay: config.weight_decay,
            batch_size: config.batch_size,
            mode: TrainMode::FromScratch,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.total_epochs() == 0 {
            return bad("plan has no epochs".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor.is_finite()) {
            return bad(format!("lr drop factor must be positive, got {}", self.lr_drop_factor));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_main + self.epochs_fine1 + self.epochs_fine2
    }

    /// Phase index (0, 1, 2) of zero-based epoch `e`.
    pub fn phase_of(&self, e: usize) -> usize {
        if e < self.epochs_main {
            0
        } else if e < self.epochs_main + self.epochs_fine1 {
            1
        } else {
            2
        }
    }

    pub fn lr_at(&self, e: usize) -> f64 {
        self.lr / self.lr_drop_factor.powi(self.phase_of(e) as i32)
    }

    fn is_phase_end(&self, e: usize) -> bool {
        let n = e + 1;
        n == self.epochs_main || n == self.epochs_main + self.epochs_fine1 || n == self.total_epochs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: usize,
    pub overall: f64,
    /// Error per scale tag present in the split, keyed by tag name.
    pub per_tag: BTreeMap<String, f64>,
    /// Error per class present in the split.
    pub per_class: BTreeMap<usize, f64>,
    pub mean_loss: f64,
}

/// Argmax error rates of precomputed `logits` against `split`.
pub fn evaluate_logits(logits: &Tensor<f32>, split: &DatasetSplit) -> Result<Evaluation> {
    let (n, classes) = logits.dims2()?;
    if n != split.len() || n == 0 {
        return Err(Error::InvalidArgument(format!("{n} logit rows for {} samples", split.len())));
    }
    let (loss, _) = nn::softmax_xent(logits, &split.labels)?;
    let mut wrong = 0usize;
    let mut by_tag: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut by_class: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (i, row) in logits.data().chunks(classes).enumerate() {
        // First maximum wins, so ties resolve deterministically.
        let pred = row
            .iter()
            .enumerate()
            .fold(0, |best, (k, &v)| if v > row[best] { k } else { best });
        let miss = usize::from(pred != split.labels[i]);
        wrong += miss;
        let t = by_tag.entry(split.tags[i].name().to_string()).or_default();
        t.0 += miss;
        t.1 += 1;
        let c = by_class.entry(split.labels[i]).or_default();
        c.0 += miss;
        c.1 += 1;
    }
    let rate = |(w, t): (usize, usize)| w as f64 / t as f64;
    Ok(Evaluation {
        samples: n,
        overall: wrong as f64 / n as f64,
        per_tag: by_tag.into_iter().map(|(k, v)| (k, rate(v))).collect(),
        per_class: by_class.into_iter().map(|(k, v)| (k, rate(v))).collect(),
        mean_loss: loss,
    })
}

/// Logits for every sample of `split`, in order.
pub fn predict_logits(model: &Model<f32>, split: &DatasetSplit, batch: usize) -> Result<Tensor<f32>> {
    let parts = BatchIter::sequential(split, batch.max(1))
        .map(|(x, _)| model.predict(&x).map(|o| o.logits))
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat_outer(&parts.iter().collect::<Vec<_>>())
}

pub fn evaluate(model: &Model<f32>, split: &DatasetSplit, batch: usize) -> Result<Evaluation> {
    evaluate_logits(&predict_logits(model, split, batch)?, split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub phase: usize,
    /// One-based position in the whole schedule.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub columns: usize,
    pub eval: BTreeMap<String, Evaluation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Sum over trained epochs of the number of columns trained.
    pub column_epochs: f64,
    /// `column_epochs` per trained epoch, in units of one baseline column.
    pub normalized_cost: f64,
    pub wall_seconds: f64,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    fn absorb(&mut self, other: TrainReport) {
        self.epochs.extend(other.epochs);
        self.column_epochs += other.column_epochs;
        self.wall_seconds += other.wall_seconds;
        self.checkpoints.extend(other.checkpoints);
        self.normalized_cost = if self.epochs.is_empty() {
            0.0
        } else {
            self.column_epochs / self.epochs.len() as f64
        };
    }
}

/// Where per-epoch results go and when to stop early.
pub struct TrainOptions<'a> {
    pub eval_splits: Vec<(String, &'a DatasetSplit)>,
    pub metrics: Option<&'a mut dyn Write>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop once this many schedule epochs are done, as an interrupted run would.
    pub stop_after: Option<usize>,
    pub eval_batch: usize,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        TrainOptions {
            eval_splits: Vec::new(),
            metrics: None,
            checkpoint_dir: None,
            stop_after: None,
            eval_batch: 250,
        }
    }
}

impl TrainOptions<'_> {
    fn emit(&mut self, record: &EpochRecord) -> Result<()> {
        if let Some(w) = self.metrics.as_deref_mut() {
            let line = serde_json::to_string(record).map_err(|e| Error::State(e.to_string()))?;
            writeln!(w, "{line}")?;
            w.flush()?;
        }
        Ok(())
    }

    fn save(&self, model: &Model<f32>, name: &str, report: &mut TrainReport) -> Result<()> {
        if let Some(dir) = &self.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(name);
            save_checkpoint(model, &path)?;
            report.checkpoints.push(path);
        }
        Ok(())
    }
}

/// Runs the remaining epochs of `plan`, resuming at `model.epochs_done()`.
///
/// The per-pixel training mean is installed in the model on first use. Each
/// epoch's sample order depends only on `(plan.seed, epoch)`, so a run
/// interrupted and resumed from a checkpoint matches an uninterrupted one.
pub fn train(
    model: &mut Model<f32>,
    plan: &TrainPlan,
    train_split: &DatasetSplit,
    opts: &mut TrainOptions<'_>,
) -> Result<TrainReport> {
    run_epochs(model, plan, train_split, opts, "main", UpdateScope::All)
}

fn run_epochs(
    model: &mut Model<f32>,
    plan: &TrainPlan,
    train_split: &DatasetSplit,
    opts: &mut TrainOptions<'_>,
    stage: &str,
    scope: UpdateScope,
) -> Result<TrainReport> {
    plan.validate()?;
    if train_split.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let start = Instant::now();
    if model.input_mean().is_none() {
        model.set_input_mean(Some(per_pixel_mean(train_split)))?;
    }
    let columns = model.config().columns.len();
    let end = opts.stop_after.map_or(plan.total_epochs(), |s| s.min(plan.total_epochs()));
    let mut report = TrainReport::default();
    for e in model.epochs_done()..end {
        let lr = plan.lr_at(e);
        let mut loss_sum = 0.0;
        for (step, (x, labels)) in BatchIter::new(train_split, plan.batch_size, plan.seed, e, Preprocess::None).enumerate() {
            let out = model.forward(&x)?;
            let (loss, grad) = nn::softmax_xent(&out.logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch: e + 1, step, loss });
            }
            loss_sum += loss * labels.len() as f64;
            let grads = model.backward(&grad)?;
            model.apply_update(&grads, lr, plan.momentum, plan.weight_decay, scope)?;
        }
        model.set_epochs_done(e + 1);
        let mut eval = BTreeMap::new();
        for (name, split) in &opts.eval_splits {
            eval.insert(name.clone(), evaluate(model, split, opts.eval_batch)?);
        }
        let record = EpochRecord {
            stage: stage.to_string(),
            phase: plan.phase_of(e),
            epoch: e + 1,
            lr,
            train_loss: loss_sum / train_split.len() as f64,
            columns,
            eval,
        };
        opts.emit(&record)?;
        report.epochs.push(record);
        report.column_epochs += columns as f64;
        if plan.is_phase_end(e) {
            opts.save(model, &format!("{stage}_phase{}.ckpt", plan.phase_of(e)), &mut report)?;
        }
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    report.normalized_cost = if report.epochs.is_empty() {
        0.0
    } else {
        report.column_epochs / report.epochs.len() as f64
    };
    opts.save(model, &format!("{stage}_final.ckpt"), &mut report)?;
    Ok(report)
}

/// `config` reduced to its canonical column only.
pub fn baseline_of(config: &NetworkConfig) -> NetworkConfig {
    let mut c = config.clone();
    c.columns = vec![ColumnSpec::uniform(c.canonical_side, c.conv_layers(), false)];
    c
}

/// Number of leading schedule epochs inc-1 spends on the single-column model.
pub fn inc1_baseline_epochs(plan: &TrainPlan) -> usize {
    plan.total_epochs().div_ceil(2)
}

/// Incremental training, first variant: the baseline trains for the first
/// half of the schedule, its filters seed the multi-column model of
/// `config`, and everything is refined for the rest of the schedule.
pub fn train_inc1(
    config: &NetworkConfig,
    plan: &TrainPlan,
    train_split: &DatasetSplit,
    opts: &mut TrainOptions<'_>,
) -> Result<(Model<f32>, TrainReport)> {
    plan.validate()?;
    let half = inc1_baseline_epochs(plan);
    let mut baseline = Model::build(baseline_of(config), plan.seed)?;
    let caller_stop = opts.stop_after;
    opts.stop_after = Some(caller_stop.map_or(half, |s| s.min(half)));
    let first = run_epochs(&mut baseline, plan, train_split, opts, "inc1_baseline", UpdateScope::All);
    opts.stop_after = caller_stop;
    let mut report = first?;

    let mut model = match report.checkpoints.last() {
        Some(path) => load_into_config::<f32>(path, config.clone())?,
        None => Model::expand_from(&baseline, config.clone())?,
    };
    model.set_epochs_done(baseline.epochs_done());
    let second = run_epochs(&mut model, plan, train_split, opts, "inc1_refine", UpdateScope::All)?;
    report.absorb(second);
    Ok((model, report))
}

/// Incremental training, second variant: the trained `baseline` is expanded
/// to the columns of `config` and only the classifier is trained, all conv
/// parameters frozen. Frozen features are computed once and reused.
pub fn train_inc2(
    baseline: &Model<f32>,
    config: &NetworkConfig,
    plan: &TrainPlan,
    train_split: &DatasetSplit,
    opts: &mut TrainOptions<'_>,
) -> Result<(Model<f32>, TrainReport)> {
    plan.validate()?;
    let start = Instant::now();
    let mut model = Model::expand_from(baseline, config.clone())?;
    if model.input_mean().is_none() {
        model.set_input_mean(Some(per_pixel_mean(train_split)))?;
    }
    let features_of = |m: &Model<f32>, split: &DatasetSplit| -> Result<Tensor<f32>> {
        let parts = BatchIter::sequential(split, opts.eval_batch.max(1))
            .map(|(x, _)| m.features(&x))
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat_outer(&parts.iter().collect::<Vec<_>>())
    };
    let train_features = features_of(&model, train_split)?;
    let eval_features = opts
        .eval_splits
        .iter()
        .map(|(_, s)| features_of(&model, s))
        .collect::<Result<Vec<_>>>()?;

    let mut grads = Params::zeros_like(&model.params());
    let mut report = TrainReport::default();
    for e in 0..plan.total_epochs() {
        let lr = plan.lr_at(e);
        let order = epoch_order(train_split.len(), plan.seed, e);
        let mut loss_sum = 0.0;
        for (step, idx) in order.chunks(plan.batch_size).enumerate() {
            let x = train_features.select_outer(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train_split.labels[i]).collect();
            let logits = nn::linear_forward(&x, &model.fc_weights, &model.fc_bias)?;
            let (loss, grad) = nn::softmax_xent(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch: e + 1, step, loss });
            }
            loss_sum += loss * labels.len() as f64;
            let g = nn::linear_backward(&x, &model.fc_weights, &grad)?;
            grads.fc_weights = g.weights;
            grads.fc_bias = g.bias;
            model.apply_update(&grads, lr, plan.momentum, plan.weight_decay, UpdateScope::ClassifierOnly)?;
        }
        let mut eval = BTreeMap::new();
        for ((name, split), feats) in opts.eval_splits.iter().zip(&eval_features) {
            let logits = nn::linear_forward(feats, &model.fc_weights, &model.fc_bias)?;
            eval.insert(name.clone(), evaluate_logits(&logits, split)?);
        }
        let record = EpochRecord {
            stage: "inc2_classifier".into(),
            phase: plan.phase_of(e),
            epoch: e + 1,
            lr,
            train_loss: loss_sum / train_split.len() as f64,
            columns: 0,
            eval,
        };
        opts.emit(&record)?;
        report.epochs.push(record);
    }
    model.set_epochs_done(baseline.epochs_done() + plan.total_epochs());
    report.wall_seconds = start.elapsed().as_secs_f64();
    opts.save(&model, "inc2_final.ckpt", &mut report)?;
    Ok((model, report))
}

/// Writes `report` as pretty JSON.
pub fn write_report(report: &TrainReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::State(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}
