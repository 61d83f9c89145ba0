//! Masked mini-batch training of task subnetworks, evaluation and the
//! forgetting log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{batch_iterator, Batch, BatchIterator, Dataset};
use crate::error::{Error, Result};
use crate::multitask::{disjointness_check_all, mt_forward_logits, LayerStorage, MultitaskModel, TaskId};
use crate::nn::{loss_and_grad, LossKind};
use crate::prune::{commit_mask, masked_gradient_filter, select_subnetwork, AvailabilityLedger, PruneConfig, PruneReportLine};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("optimizer.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("optimizer.beta1/beta2", "must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("optimizer.epsilon", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopConfig {
    pub patience: usize,
    pub min_delta: f64,
    /// Hard cap on epochs per group.
    pub max_epochs: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            patience: 3,
            min_delta: 0.01,
            max_epochs: 100,
        }
    }
}

impl EarlyStopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::config("early_stop.patience", "must be at least 1"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::config("early_stop.min_delta", "must be non-negative"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("early_stop.max_epochs", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub best: f64,
    pub stale: usize,
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            stale: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// An epoch improves when `best - val_loss > min_delta`; `patience`
/// consecutive epochs without improvement stop training.
pub fn early_stop_update(state: &mut EarlyStopState, val_loss: f64, cfg: &EarlyStopConfig) -> StopDecision {
    if state.best - val_loss > cfg.min_delta || state.best == f64::INFINITY {
        state.best = val_loss;
        state.stale = 0;
    } else {
        state.stale += 1;
    }
    if state.stale >= cfg.patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

/// Moments for the entries one task may update in one layer, stored
/// compactly in the order of the mask's set positions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlotMoments {
    pub step: u64,
    pub kernel_m: Vec<f32>,
    pub kernel_v: Vec<f32>,
    pub bias_m: Vec<f32>,
    pub bias_v: Vec<f32>,
}

/// Keys are `(layer, slot)`; shared layers use [`SHARED_SLOT`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub slots: BTreeMap<(usize, usize), SlotMoments>,
}

pub const SHARED_SLOT: usize = usize::MAX;

fn adam_apply(
    cfg: &OptimizerConfig,
    step: u64,
    w: &mut [f32],
    idx: Option<&[usize]>,
    g: &[f32],
    m: &mut Vec<f32>,
    v: &mut Vec<f32>,
) {
    let n = idx.map_or(w.len(), <[usize]>::len);
    if m.len() != n {
        *m = vec![0.0; n];
        *v = vec![0.0; n];
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    for k in 0..n {
        let j = idx.map_or(k, |i| i[k]);
        let gj = f64::from(g[j]);
        let mk = b1 * f64::from(m[k]) + (1.0 - b1) * gj;
        let vk = b2 * f64::from(v[k]) + (1.0 - b2) * gj * gj;
        m[k] = mk as f32;
        v[k] = vk as f32;
        let upd = cfg.learning_rate * (mk / c1) / ((vk / c2).sqrt() + cfg.epsilon);
        w[j] = (f64::from(w[j]) - upd) as f32;
    }
}

fn sgd_apply(cfg: &OptimizerConfig, w: &mut [f32], idx: Option<&[usize]>, g: &[f32]) {
    let mut upd = |j: usize| w[j] = (f64::from(w[j]) - cfg.learning_rate * f64::from(g[j])) as f32;
    match idx {
        Some(idx) => idx.iter().for_each(|&j| upd(j)),
        None => (0..g.len()).for_each(upd),
    }
}

/// Positions a task may update, per path layer.
struct UpdatePlan {
    task: TaskId,
    layers: Vec<PlanLayer>,
}

enum PlanLayer {
    Skip,
    Shared(usize),
    Masked {
        layer: usize,
        slot: usize,
        kernel: Vec<usize>,
        bias: Vec<usize>,
    },
}

impl UpdatePlan {
    fn new(model: &MultitaskModel, task: TaskId) -> Self {
        let layers = model
            .path(task)
            .into_iter()
            .map(|i| {
                let l = &model.layers()[i];
                match &l.storage {
                    LayerStorage::Stateless => PlanLayer::Skip,
                    LayerStorage::Shared { frozen: true, .. } => PlanLayer::Skip,
                    LayerStorage::Shared { .. } => PlanLayer::Shared(i),
                    LayerStorage::Masked(p) => {
                        let slot = l.slot(task).expect("on path");
                        PlanLayer::Masked {
                            layer: i,
                            slot,
                            kernel: p.mask(slot).kernel.indices(),
                            bias: p.mask(slot).bias.indices(),
                        }
                    }
                }
            })
            .collect();
        Self { task, layers }
    }
}

/// One masked optimizer step of `batch.task`; returns the batch loss.
fn train_step(
    model: &mut MultitaskModel,
    plan: &UpdatePlan,
    batch: &Batch,
    opt: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<f64> {
    let task = plan.task;
    let loss_kind = model.task(task)?.loss;
    let net = model.task_network(task)?;
    let (loss, grads) = net.loss_gradients(&batch.x, &batch.y, loss_kind, false)?;
    let grads = masked_gradient_filter(grads, &model.path_masks(task)?)?;
    for (plan_layer, g) in plan.layers.iter().zip(&grads.layers) {
        match plan_layer {
            PlanLayer::Skip => {}
            PlanLayer::Shared(i) => {
                let s = state.slots.entry((*i, SHARED_SLOT)).or_default();
                s.step += 1;
                if let LayerStorage::Shared { kernel, bias, .. } = &mut model.layers_mut()[*i].storage {
                    let kg = g.kernel.as_ref().expect("shared layers have kernels");
                    match opt.kind {
                        OptimizerKind::Adam => adam_apply(opt, s.step, kernel.data_mut(), None, kg.data(), &mut s.kernel_m, &mut s.kernel_v),
                        OptimizerKind::Sgd => sgd_apply(opt, kernel.data_mut(), None, kg.data()),
                    }
                    if let (Some(b), Some(bg)) = (bias.as_mut(), g.bias.as_ref()) {
                        match opt.kind {
                            OptimizerKind::Adam => adam_apply(opt, s.step, b.data_mut(), None, bg.data(), &mut s.bias_m, &mut s.bias_v),
                            OptimizerKind::Sgd => sgd_apply(opt, b.data_mut(), None, bg.data()),
                        }
                    }
                }
            }
            PlanLayer::Masked {
                layer,
                slot,
                kernel,
                bias,
            } => {
                let s = state.slots.entry((*layer, *slot)).or_default();
                s.step += 1;
                let p = model.layers_mut()[*layer].masked_mut().expect("planned as masked");
                let kg = g.kernel.as_ref().expect("masked layers have kernels");
                let bg = g.bias.as_ref().expect("masked layers have biases");
                match opt.kind {
                    OptimizerKind::Adam => {
                        adam_apply(opt, s.step, p.kernel_slot_mut(*slot), Some(kernel), kg.data(), &mut s.kernel_m, &mut s.kernel_v);
                        adam_apply(opt, s.step, p.bias_slot_mut(*slot), Some(bias), bg.data(), &mut s.bias_m, &mut s.bias_v);
                    }
                    OptimizerKind::Sgd => {
                        sgd_apply(opt, p.kernel_slot_mut(*slot), Some(kernel), kg.data());
                        sgd_apply(opt, p.bias_slot_mut(*slot), Some(bias), bg.data());
                    }
                }
            }
        }
    }
    Ok(loss)
}

/// One line of the training history or forgetting log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub event: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epoch: Option<usize>,
    pub task: String,
    pub split: String,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub after_group: Option<usize>,
}

impl HistoryRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

/// Training inputs of one task.
#[derive(Debug, Clone, Copy)]
pub struct GroupTask<'a> {
    pub task: TaskId,
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
    /// Epochs each task trained for, in group order.
    pub epochs: Vec<(TaskId, usize)>,
}

fn check_group(model: &MultitaskModel, group: &[GroupTask]) -> Result<()> {
    if group.is_empty() {
        return Err(Error::State("empty task group".into()));
    }
    for g in group {
        let info = model.task(g.task)?;
        if !model.is_committed(g.task) {
            return Err(Error::State(format!("`{}` has no committed mask", info.name)));
        }
        if g.batch_size == 0 {
            return Err(Error::config(format!("tasks.{}.batch_size", info.name), "must be at least 1"));
        }
    }
    if let Some(r) = disjointness_check_all(model).into_iter().find(|r| !r.passed()) {
        return Err(Error::Disjointness {
            layer: r.layer,
            detail: format!("{} overlapping positions before training", r.violating_positions.len()),
        });
    }
    Ok(())
}

fn stream_tag(kind: u64, task: TaskId, epoch: usize) -> u64 {
    (kind << 48) ^ ((task.0 as u64) << 24) ^ epoch as u64
}

/// Train every task of a group to its early stop, interleaving batches
/// round-robin. Only entries inside the group tasks' masks change, plus
/// unfrozen shared layers on their paths, which are frozen afterwards.
pub fn train_group(
    model: &mut MultitaskModel,
    group: &[GroupTask],
    opt: &OptimizerConfig,
    stop: &EarlyStopConfig,
    state: &mut OptimizerState,
    rng: &Rng,
    mut on_record: impl FnMut(&HistoryRecord),
) -> Result<TrainHistory> {
    check_group(model, group)?;
    opt.validate()?;
    stop.validate()?;
    let plans: Vec<UpdatePlan> = group.iter().map(|g| UpdatePlan::new(model, g.task)).collect();
    let mut stops = vec![EarlyStopState::default(); group.len()];
    let mut done = vec![false; group.len()];
    let mut epochs = vec![0usize; group.len()];
    let mut history = TrainHistory::default();
    let mut emit = |r: HistoryRecord, h: &mut TrainHistory| {
        on_record(&r);
        h.records.push(r);
    };
    for epoch in 1..=stop.max_epochs {
        let active: Vec<usize> = (0..group.len()).filter(|&i| !done[i]).collect();
        if active.is_empty() {
            break;
        }
        let mut iters: Vec<(usize, BatchIterator)> = active
            .iter()
            .map(|&i| {
                let mut r = rng.derive(stream_tag(1, group[i].task, epoch));
                batch_iterator(group[i].train, group[i].batch_size, group[i].task, &mut r).map(|it| (i, it))
            })
            .collect::<Result<_>>()?;
        let mut sums = vec![(0.0f64, 0usize); group.len()];
        loop {
            let mut progressed = false;
            for (i, it) in iters.iter_mut() {
                if let Some(batch) = it.next() {
                    let n = batch.x.dims()[0];
                    let l = train_step(model, &plans[*i], &batch, opt, state)?;
                    sums[*i].0 += l * n as f64;
                    sums[*i].1 += n;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        for &i in &active {
            epochs[i] = epoch;
            let name = model.task(group[i].task)?.name.clone();
            let train_loss = sums[i].0 / sums[i].1 as f64;
            let val = evaluate(model, group[i].task, group[i].val)?;
            emit(
                HistoryRecord {
                    event: "epoch".into(),
                    epoch: Some(epoch),
                    task: name.clone(),
                    split: "train".into(),
                    loss: train_loss,
                    metric: None,
                    after_group: None,
                },
                &mut history,
            );
            emit(
                HistoryRecord {
                    event: "epoch".into(),
                    epoch: Some(epoch),
                    task: name.clone(),
                    split: "validation".into(),
                    loss: val.loss,
                    metric: Some(val.metric()),
                    after_group: None,
                },
                &mut history,
            );
            log::info!(
                "epoch {epoch} {name}: train {train_loss:.4} val {:.4} metric {:.4}",
                val.loss,
                val.metric()
            );
            if early_stop_update(&mut stops[i], val.loss, stop) == StopDecision::Stop {
                done[i] = true;
                log::info!("{name} stopped after {epoch} epochs");
            }
        }
    }
    for plan in &plans {
        for l in &plan.layers {
            if let PlanLayer::Shared(i) = l {
                if let LayerStorage::Shared { frozen, .. } = &mut model.layers_mut()[*i].storage {
                    *frozen = true;
                }
            }
        }
    }
    history.epochs = group.iter().map(|g| g.task).zip(epochs).collect();
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub samples: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mse: Option<f64>,
    #[serde(default)]
    pub f1: Vec<f64>,
    /// `confusion[true][predicted]`.
    #[serde(default)]
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    /// Accuracy for classification, MSE for regression.
    pub fn metric(&self) -> f64 {
        self.accuracy.or(self.mse).unwrap_or(f64::NAN)
    }
}

/// Per-class F1 from `confusion[true][predicted]`, 0 when precision and
/// recall are both 0.
pub fn f1_scores(confusion: &[Vec<usize>]) -> Vec<f64> {
    let k = confusion.len();
    (0..k)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .collect()
}

pub const EVAL_CHUNK: usize = 1000;

fn chunk(t: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let row = t.len() / t.dims()[0];
    let mut dims = t.dims().to_vec();
    dims[0] = end - start;
    Tensor::new(dims, t.data()[start * row..end * row].to_vec())
}

/// Deterministic evaluation of `task` on `data`.
pub fn evaluate(model: &MultitaskModel, task: TaskId, data: &Dataset) -> Result<EvalReport> {
    let info = model.task(task)?;
    if data.is_empty() {
        return Err(Error::Input(format!("empty evaluation set for `{}`", info.name)));
    }
    let n = data.len();
    let outputs: usize = info.output_dims.iter().product();
    let classes = match info.loss {
        LossKind::CategoricalCrossEntropy => Some(outputs),
        LossKind::BinaryCrossEntropy if outputs == 1 => Some(2),
        LossKind::BinaryCrossEntropy => None,
        LossKind::MeanSquaredError => None,
    };
    let mut confusion = vec![vec![0usize; classes.unwrap_or(0)]; classes.unwrap_or(0)];
    let mut loss_sum = 0.0;
    let mut sq_sum = 0.0;
    let net = model.task_network(task)?;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let x = chunk(&data.x, start, end)?;
        let y = chunk(&data.y, start, end)?;
        if start == 0 {
            // Shape and task checks once per call.
            mt_forward_logits(model, &chunk(&data.x, 0, 1)?, task)?;
        }
        let logits = net.forward_logits(&x)?;
        let (l, _) = loss_and_grad(&logits, &y, info.loss)?;
        let weight = (end - start) as f64;
        loss_sum += l * weight;
        match classes {
            Some(k) => {
                let rows = logits.data().chunks(outputs);
                for (r, row) in rows.enumerate() {
                    let pred = if info.loss == LossKind::BinaryCrossEntropy {
                        usize::from(row[0] > 0.0)
                    } else {
                        let mut best = 0;
                        for j in 1..row.len() {
                            if row[j] > row[best] {
                                best = j;
                            }
                        }
                        best
                    };
                    let truth = y.data()[r] as usize;
                    if truth >= k {
                        return Err(Error::Input(format!("label {truth} outside {k} classes")));
                    }
                    confusion[truth][pred] += 1;
                }
            }
            None => {
                for (&p, &t) in logits.data().iter().zip(y.data()) {
                    let d = f64::from(p) - f64::from(t);
                    sq_sum += d * d;
                }
            }
        }
    }
    let loss = loss_sum / n as f64;
    let (accuracy, mse, f1) = match classes {
        Some(k) => {
            let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
            (Some(correct as f64 / n as f64), None, f1_scores(&confusion))
        }
        None => (None, Some(sq_sum / (n * outputs) as f64), Vec::new()),
    };
    Ok(EvalReport {
        task: info.name.clone(),
        samples: n,
        loss,
        accuracy,
        mse,
        f1,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingRow {
    pub after_group: usize,
    pub task: String,
    pub test_loss: f64,
    pub test_metric: f64,
}

/// Append-only log of test losses after each completed group.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ForgettingLog {
    rows: Vec<ForgettingRow>,
}

impl ForgettingLog {
    pub fn push(&mut self, row: ForgettingRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[ForgettingRow] {
        &self.rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("after_group,task,test_loss,test_metric\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.17e},{:.17e}\n", r.after_group, r.task, r.test_loss, r.test_metric));
        }
        s
    }

    pub fn to_record(row: &ForgettingRow) -> HistoryRecord {
        HistoryRecord {
            event: "forgetting".into(),
            epoch: None,
            task: row.task.clone(),
            split: "test".into(),
            loss: row.test_loss,
            metric: Some(row.test_metric),
            after_group: Some(row.after_group),
        }
    }
}

/// Evaluate every task trained so far and append one row per task.
pub fn record_forgetting(
    model: &MultitaskModel,
    after_group: usize,
    trained: &[(TaskId, &Dataset)],
    log: &mut ForgettingLog,
) -> Result<Vec<ForgettingRow>> {
    let mut rows = Vec::with_capacity(trained.len());
    for &(task, test) in trained {
        let r = evaluate(model, task, test)?;
        rows.push(ForgettingRow {
            after_group,
            task: r.task.clone(),
            test_loss: r.loss,
            test_metric: r.metric(),
        });
    }
    log.rows.extend(rows.iter().cloned());
    Ok(rows)
}

/// Ordered task groups; every task appears exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub groups: Vec<Vec<TaskId>>,
}

impl TrainSchedule {
    pub fn new(groups: Vec<Vec<TaskId>>, tasks: usize) -> Result<Self> {
        let mut seen = vec![false; tasks];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::config("schedule", "empty group"));
            }
            for t in g {
                match seen.get_mut(t.0) {
                    None => return Err(Error::UnknownTask(t.to_string())),
                    Some(true) => return Err(Error::config("schedule", format!("{t} scheduled twice"))),
                    Some(s) => *s = true,
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::config("schedule", format!("task {missing} is never trained")));
        }
        Ok(Self { groups })
    }
}

/// Everything a schedule run needs per task.
#[derive(Debug, Clone)]
pub struct TaskStreams {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub batch_size: usize,
}

impl TaskStreams {
    /// Hold out `val_fraction` of `train` with a seeded shuffle.
    pub fn split(train: &Dataset, test: Dataset, batch_size: usize, val_fraction: f64, rng: &mut Rng) -> Result<Self> {
        let (train, val) = train.split_validation(val_fraction, rng)?;
        Ok(Self {
            train,
            val,
            test,
            batch_size,
        })
    }
}

pub const VALIDATION_FRACTION: f64 = 0.1;

/// Hooks for persisting progress during [`run_schedule`].
pub trait RunObserver {
    fn record(&mut self, _record: &HistoryRecord) {}

    fn group_done(
        &mut self,
        _group: usize,
        _model: &MultitaskModel,
        _ledger: &AvailabilityLedger,
        _state: &OptimizerState,
    ) -> Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutcome {
    pub history: Vec<HistoryRecord>,
    pub forgetting: ForgettingLog,
    pub prune_report: Vec<PruneReportLine>,
    pub evals: Vec<EvalReport>,
}

/// Resumable progress of a schedule run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub ledger: AvailabilityLedger,
    pub optimizer: OptimizerState,
    pub completed_groups: usize,
}

impl RunState {
    pub fn fresh(model: &MultitaskModel) -> Self {
        Self {
            ledger: AvailabilityLedger::new(model),
            optimizer: OptimizerState::default(),
            completed_groups: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunConfig<'a> {
    pub schedule: &'a TrainSchedule,
    pub prune: &'a PruneConfig,
    pub optimizer: &'a OptimizerConfig,
    pub early_stop: &'a EarlyStopConfig,
    pub seed: u64,
}

/// For each remaining group: select and commit masks for its tasks, train
/// the group, then log test losses of every task trained so far.
pub fn run_schedule(
    model: &mut MultitaskModel,
    streams: &[TaskStreams],
    cfg: RunConfig,
    state: &mut RunState,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome> {
    if streams.len() != model.task_count() {
        return Err(Error::State(format!("{} data streams for {} tasks", streams.len(), model.task_count())));
    }
    cfg.prune.validate(model)?;
    let root = Rng::new(cfg.seed);
    let mut out = RunOutcome::default();
    let trained_before: Vec<TaskId> = cfg.schedule.groups[..state.completed_groups].iter().flatten().copied().collect();
    let mut trained = trained_before;
    for (gi, group) in cfg.schedule.groups.iter().enumerate().skip(state.completed_groups) {
        for &task in group {
            let s = &streams[task.0];
            let mut r = root.derive(stream_tag(2, task, 0));
            let probe = s.train.sample(cfg.prune.probe_batch_size, &mut r)?;
            let sel = select_subnetwork(model, task, &probe.x, &probe.y, cfg.prune, &state.ledger)?;
            commit_mask(model, task, &sel.masks, &mut state.ledger)?;
            out.prune_report.extend(sel.report);
        }
        let gt: Vec<GroupTask> = group
            .iter()
            .map(|&t| GroupTask {
                task: t,
                train: &streams[t.0].train,
                val: &streams[t.0].val,
                batch_size: streams[t.0].batch_size,
            })
            .collect();
        let h = train_group(
            model,
            &gt,
            cfg.optimizer,
            cfg.early_stop,
            &mut state.optimizer,
            &root.derive(stream_tag(3, TaskId(gi), 0)),
            |r| observer.record(r),
        )?;
        out.history.extend(h.records);
        trained.extend(group.iter().copied());
        let tests: Vec<(TaskId, &Dataset)> = trained.iter().map(|&t| (t, &streams[t.0].test)).collect();
        for row in record_forgetting(model, gi + 1, &tests, &mut out.forgetting)? {
            let rec = ForgettingLog::to_record(&row);
            observer.record(&rec);
            out.history.push(rec);
        }
        state.completed_groups = gi + 1;
        observer.group_done(gi + 1, model, &state.ledger, &state.optimizer)?;
    }
    for t in 0..model.task_count() {
        out.evals.push(evaluate(model, TaskId(t), &streams[t].test)?);
    }
    Ok(out)
}

/// Parameter entries that differ bitwise between two snapshots of the same
/// model, ignoring positions inside the masks of `allowed` tasks and
/// shared layers on their paths that were still trainable in `before`.
pub fn weights_changed_outside(before: &MultitaskModel, after: &MultitaskModel, allowed: &[TaskId]) -> Result<usize> {
    if before.layers().len() != after.layers().len() {
        return Err(Error::State("snapshots have different layer counts".into()));
    }
    let same = |a: &[f32], b: &[f32], skip: &dyn Fn(usize) -> bool| -> usize {
        a.iter().zip(b).enumerate().filter(|&(j, (x, y))| x.to_bits() != y.to_bits() && !skip(j)).count()
    };
    let mut changed = 0;
    for (lb, la) in before.layers().iter().zip(after.layers()) {
        let open = lb.tasks.iter().any(|t| allowed.contains(t));
        match (&lb.storage, &la.storage) {
            (LayerStorage::Stateless, LayerStorage::Stateless) => {}
            (LayerStorage::Shared { kernel: kb, bias: bb, frozen }, LayerStorage::Shared { kernel: ka, bias: ba, .. }) => {
                if !(open && !*frozen) {
                    changed += same(kb.data(), ka.data(), &|_| false);
                    if let (Some(bb), Some(ba)) = (bb, ba) {
                        changed += same(bb.data(), ba.data(), &|_| false);
                    }
                }
            }
            (LayerStorage::Masked(pb), LayerStorage::Masked(pa)) => {
                for (slot, t) in lb.tasks.iter().enumerate() {
                    let trainable = allowed.contains(t);
                    // Allowed tasks may commit their masks during the call.
                    let m = pa.mask(slot);
                    if !trainable && (pb.mask(slot) != m || pb.is_committed(slot) != pa.is_committed(slot)) {
                        return Err(Error::State(format!("mask of {t} changed between snapshots")));
                    }
                    changed += same(pb.kernel_slot(slot), pa.kernel_slot(slot), &|j| trainable && m.kernel.bits()[j]);
                    changed += same(pb.bias_slot(slot), pa.bias_slot(slot), &|j| trainable && m.bias.bits()[j]);
                }
            }
            _ => return Err(Error::State("snapshots have different layer kinds".into())),
        }
    }
    Ok(changed)
}
