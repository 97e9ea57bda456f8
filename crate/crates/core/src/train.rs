//! Pretraining on the prediction loss and task training on the realized
//! dispatch loss.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{NormStats, TrainingExample};
use crate::grid::{ConstraintSet, DispatchSchedule, SystemConfig};
use crate::net::{self, Mode, NetError, NetworkParams};
use crate::solver::SqpSettings;
use crate::taskgrad::{task_gradient_theta, task_loss, TaskContext, TaskGradError};

/// Pretraining aborts once the epoch loss exceeds this.
pub const DIVERGENCE_LOSS: f64 = 1e6;
/// Task training aborts when more than this fraction of an epoch's samples
/// is skipped.
pub const MAX_SKIPPED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: loss {loss:e}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("epoch {epoch}: {skipped} of {total} samples skipped")]
    TooManySkipped {
        epoch: usize,
        skipped: usize,
        total: usize,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Task(#[from] TaskGradError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Task-training epochs.
    pub n_train: usize,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub task_batch: usize,
    pub pretrain_lr: f64,
    pub task_lr: f64,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub include_cost: bool,
    /// Epochs between variance refreshes during task training.
    pub sigma_refresh_epochs: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            n_train: 900,
            pretrain_epochs: 1000,
            pretrain_batch: 32,
            task_batch: 8,
            pretrain_lr: 1e-3,
            task_lr: 1e-4,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            include_cost: true,
            sigma_refresh_epochs: 1,
            hidden_width: 250,
            hidden_layers: 3,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n_train == 0 {
            return Err(TrainError::Config("n_train must be at least 1"));
        }
        if !(self.pretrain_lr > 0.0 && self.task_lr > 0.0) {
            return Err(TrainError::Config("learning rates must be positive"));
        }
        if self.pretrain_batch == 0 || self.task_batch == 0 {
            return Err(TrainError::Config("batch sizes must be positive"));
        }
        if self.sigma_refresh_epochs == 0 {
            return Err(TrainError::Config("sigma refresh cadence must be positive"));
        }
        if self.hidden_width == 0 {
            return Err(TrainError::Config("hidden width must be positive"));
        }
        Ok(())
    }
}

/// Adam or plain gradient descent over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, lr: f64, n: usize) -> Self {
        OptimizerState {
            config,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update. Returns `false`, leaving everything untouched, when
    /// a gradient entry is not finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> bool {
        assert_eq!(params.len(), grads.len(), "parameter and gradient lengths");
        if grads.iter().any(|g| !g.is_finite()) {
            return false;
        }
        self.steps += 1;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let c = self.config;
                let t = self.steps as f64;
                let bc1 = 1.0 - libm::pow(c.beta1, t);
                let bc2 = 1.0 - libm::pow(c.beta2, t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
                    self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + c.eps);
                }
            }
        }
        true
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub pred_loss_train: f64,
    /// Mean per-sample task loss; absent during pretraining.
    pub task_loss_train: Option<f64>,
    pub task_loss_val: Option<f64>,
    pub wall_ms: u64,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Task,
}

/// Progress hooks and the wall clock, supplied by the caller.
pub trait TrainObserver {
    /// Milliseconds since an arbitrary origin.
    fn now_ms(&mut self) -> u64 {
        0
    }

    fn epoch(&mut self, _phase: Phase, _record: &EpochRecord) {}

    fn sample_skipped(&mut self, _epoch: usize, _sample: usize, _err: &TaskGradError) {}

    fn optimizer_step_skipped(&mut self, _epoch: usize) {}
}

/// Observer that ignores everything and reports zero wall time.
pub struct Silent;

impl TrainObserver for Silent {}

fn stack(examples: &[TrainingExample], idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let dim = examples[idx[0]].x.len();
    let x = DMatrix::from_fn(idx.len(), dim, |i, j| examples[idx[i]].x[j]);
    let y = DMatrix::from_fn(idx.len(), crate::HOURS_PER_DAY, |i, t| examples[idx[i]].y_train[t]);
    (x, y)
}

fn all_rows(examples: &[TrainingExample]) -> (DMatrix<f64>, DMatrix<f64>) {
    let idx: Vec<usize> = (0..examples.len()).collect();
    stack(examples, &idx)
}

/// Eval-mode prediction loss over a whole dataset.
pub fn dataset_prediction_loss(
    params: &NetworkParams,
    examples: &[TrainingExample],
) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (x, y) = all_rows(examples);
    Ok(net::prediction_loss(&net::predict(params, &x)?, &y)?)
}

/// Per-hour residual variance (normalized units) of the eval-mode forecasts.
pub fn residual_variance(
    params: &NetworkParams,
    examples: &[TrainingExample],
) -> Result<Vec<f64>, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (x, y) = all_rows(examples);
    let resid = net::predict(params, &x)? - y;
    Ok(net::estimate_variance(&resid)?)
}

/// Set the running batch-norm statistics to the full-batch statistics of
/// `examples`, so that eval mode reproduces a full-batch train-mode pass.
pub fn recalibrate_batch_norm(
    params: &mut NetworkParams,
    examples: &[TrainingExample],
) -> Result<(), TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (x, _) = all_rows(examples);
    let (_, cache) = net::forward(params, &x, Mode::Train)?;
    if let Some(stats) = &cache.batch_stats {
        params.set_running_stats(stats);
    }
    Ok(())
}

/// Minibatch training on the prediction loss, batch-norm in train mode.
pub fn pretrain(
    mut params: NetworkParams,
    train: &[TrainingExample],
    cfg: &TrainingConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(NetworkParams, TrainingLog), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let batch = cfg.pretrain_batch.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.pretrain_lr, params.n_params());
    let mut log = TrainingLog::default();
    let start = observer.now_ms();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.pretrain_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let (x, y) = stack(train, chunk);
            let (y_hat, cache) = net::forward(&params, &x, Mode::Train)?;
            let loss = net::prediction_loss(&y_hat, &y)?;
            if !(loss <= DIVERGENCE_LOSS) {
                return Err(TrainError::Diverged { epoch, loss });
            }
            let up = net::prediction_loss_grad(&y_hat, &y)?;
            let grad = net::backward(&params, &cache, &up)?;
            if let Some(stats) = &cache.batch_stats {
                params.update_running_stats(stats);
            }
            if !opt.step(params.theta_mut(), &grad) {
                observer.optimizer_step_skipped(epoch);
            }
        }
        recalibrate_batch_norm(&mut params, train)?;
        let pred = dataset_prediction_loss(&params, train)?;
        if !(pred <= DIVERGENCE_LOSS) {
            return Err(TrainError::Diverged { epoch, loss: pred });
        }
        let rec = EpochRecord {
            epoch,
            pred_loss_train: pred,
            task_loss_train: None,
            task_loss_val: None,
            wall_ms: observer.now_ms().saturating_sub(start),
            skipped: 0,
        };
        observer.epoch(Phase::Pretrain, &rec);
        log.records.push(rec);
    }
    Ok((params, log))
}

/// System data shared by every dispatch solve during task training.
#[derive(Debug, Clone, Copy)]
pub struct DispatchSetup<'a> {
    pub system: &'a SystemConfig,
    pub constraints: &'a ConstraintSet,
    pub stats: &'a NormStats,
    pub sqp: SqpSettings,
}

impl<'a> DispatchSetup<'a> {
    pub fn context<'b>(&self, sigma2: &'b [f64], include_cost: bool) -> TaskContext<'b>
    where
        'a: 'b,
    {
        TaskContext {
            system: self.system,
            constraints: self.constraints,
            stats: self.stats,
            sigma2,
            include_cost,
            sqp: self.sqp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskTrainOutput {
    /// Parameters with the lowest validation task loss.
    pub params: NetworkParams,
    /// Variance the checkpoint was validated with.
    pub sigma2: Vec<f64>,
    pub best_epoch: usize,
    pub log: TrainingLog,
}

/// Mean task loss over a dataset with warm starts carried in `warm`;
/// samples whose dispatch fails are skipped and counted.
fn mean_task_loss(
    params: &NetworkParams,
    examples: &[TrainingExample],
    ctx: &TaskContext<'_>,
    warm: &mut [Option<DispatchSchedule>],
) -> Result<(f64, usize), TrainError> {
    let (x, _) = all_rows(examples);
    let y_hat = net::predict(params, &x)?;
    let mut total = 0.0;
    let mut used = 0;
    for (i, e) in examples.iter().enumerate() {
        let row: Vec<f64> = y_hat.row(i).iter().copied().collect();
        match ctx.dispatch(&row, warm[i].as_ref()) {
            Ok(r) => {
                let y: Vec<f64> = e.y_train.iter().map(|v| ctx.stats.denormalize_load(*v)).collect();
                total += task_loss(&r.p_star, &y, ctx.system, ctx.include_cost)?.total;
                used += 1;
                warm[i] = Some(r.p_star);
            }
            Err(TaskGradError::NotConverged(_)) | Err(TaskGradError::Solver(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let mean = if used > 0 { total / used as f64 } else { f64::NAN };
    Ok((mean, examples.len() - used))
}

fn check_skipped(epoch: usize, skipped: usize, total: usize) -> Result<(), TrainError> {
    if skipped as f64 > MAX_SKIPPED_FRACTION * total as f64 {
        return Err(TrainError::TooManySkipped {
            epoch,
            skipped,
            total,
        });
    }
    Ok(())
}

/// Task training from pretrained parameters.
///
/// Forward passes use eval-mode batch normalization, so the running
/// statistics from pretraining stay fixed. The variance is re-estimated from
/// training residuals every `sigma_refresh_epochs` epochs. Epoch 0 records
/// the pretrained starting point; the returned parameters are those with the
/// lowest validation task loss.
pub fn task_train(
    pretrained: NetworkParams,
    train: &[TrainingExample],
    validation: &[TrainingExample],
    setup: DispatchSetup<'_>,
    cfg: &TrainingConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TaskTrainOutput, TrainError> {
    if train.is_empty() || validation.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut params = pretrained;
    let mut sigma2 = residual_variance(&params, train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.task_lr, params.n_params());
    let mut warm_train: Vec<Option<DispatchSchedule>> = vec![None; train.len()];
    let mut warm_val: Vec<Option<DispatchSchedule>> = vec![None; validation.len()];
    let mut log = TrainingLog::default();
    let start = observer.now_ms();

    let (train0, skipped0) = mean_task_loss(&params, train, &setup.context(&sigma2, cfg.include_cost), &mut warm_train)?;
    check_skipped(0, skipped0, train.len())?;
    let (val0, _) = mean_task_loss(&params, validation, &setup.context(&sigma2, cfg.include_cost), &mut warm_val)?;
    let rec = EpochRecord {
        epoch: 0,
        pred_loss_train: dataset_prediction_loss(&params, train)?,
        task_loss_train: Some(train0),
        task_loss_val: Some(val0),
        wall_ms: observer.now_ms().saturating_sub(start),
        skipped: skipped0,
    };
    observer.epoch(Phase::Task, &rec);
    log.records.push(rec);
    let mut best = (val0, 0, params.clone(), sigma2.clone());

    let batch = cfg.task_batch.max(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.n_train {
        order.shuffle(&mut rng);
        let mut skipped = 0;
        let mut loss_sum = 0.0;
        let mut loss_n = 0;
        for chunk in order.chunks(batch) {
            let ctx = setup.context(&sigma2, cfg.include_cost);
            let results = per_sample_gradients(&params, train, chunk, &ctx, &warm_train);
            let mut acc = vec![0.0; params.n_params()];
            let mut used = 0;
            for (&i, res) in chunk.iter().zip(results) {
                match res {
                    Ok(tg) => {
                        for (a, g) in acc.iter_mut().zip(&tg.grad) {
                            *a += g;
                        }
                        loss_sum += tg.loss.total;
                        loss_n += 1;
                        used += 1;
                        warm_train[i] = Some(tg.p_star);
                    }
                    Err(err) => {
                        observer.sample_skipped(epoch, i, &err);
                        skipped += 1;
                    }
                }
            }
            if used > 0 {
                let inv = 1.0 / used as f64;
                acc.iter_mut().for_each(|a| *a *= inv);
                if !opt.step(params.theta_mut(), &acc) {
                    observer.optimizer_step_skipped(epoch);
                }
            }
        }
        check_skipped(epoch, skipped, train.len())?;
        if epoch % cfg.sigma_refresh_epochs == 0 {
            sigma2 = residual_variance(&params, train)?;
        }
        let (val, _) = mean_task_loss(&params, validation, &setup.context(&sigma2, cfg.include_cost), &mut warm_val)?;
        let rec = EpochRecord {
            epoch,
            pred_loss_train: dataset_prediction_loss(&params, train)?,
            task_loss_train: Some(if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN }),
            task_loss_val: Some(val),
            wall_ms: observer.now_ms().saturating_sub(start),
            skipped,
        };
        observer.epoch(Phase::Task, &rec);
        log.records.push(rec);
        if val < best.0 {
            best = (val, epoch, params.clone(), sigma2.clone());
        }
    }
    let (_, best_epoch, params, sigma2) = best;
    Ok(TaskTrainOutput {
        params,
        sigma2,
        best_epoch,
        log,
    })
}

#[cfg(not(feature = "parallel"))]
fn per_sample_gradients(
    params: &NetworkParams,
    train: &[TrainingExample],
    chunk: &[usize],
    ctx: &TaskContext<'_>,
    warm: &[Option<DispatchSchedule>],
) -> Vec<Result<crate::taskgrad::TaskGradient, TaskGradError>> {
    chunk
        .iter()
        .map(|&i| task_gradient_theta(params, &train[i].x, &train[i].y_train, ctx, warm[i].as_ref()))
        .collect()
}

/// Samples of a minibatch in parallel; results keep the chunk order so the
/// reduction is deterministic.
#[cfg(feature = "parallel")]
fn per_sample_gradients(
    params: &NetworkParams,
    train: &[TrainingExample],
    chunk: &[usize],
    ctx: &TaskContext<'_>,
    warm: &[Option<DispatchSchedule>],
) -> Vec<Result<crate::taskgrad::TaskGradient, TaskGradError>> {
    use rayon::prelude::*;
    chunk
        .par_iter()
        .map(|&i| task_gradient_theta(params, &train[i].x, &train[i].y_train, ctx, warm[i].as_ref()))
        .collect()
}
