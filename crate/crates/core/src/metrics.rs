//! Forecast accuracy, realized dispatch cost and the comparison protocol.

use alloc::vec;
use alloc::vec::Vec;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TrainingExample;
use crate::grid::{DispatchSchedule, SystemConfig};
use crate::net::{self, NetError, NetworkParams};
use crate::taskgrad::{task_loss, TaskContext, TaskGradError, TaskLossValue};
use crate::train::TrainingLog;
use crate::HOURS_PER_DAY;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("actual value {0} at position {1} is not positive")]
    NonPositiveActual(f64, usize),
    #[error("empty input")]
    Empty,
    #[error("every day failed to dispatch")]
    NoDays,
    #[error(transparent)]
    Task(#[from] TaskGradError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], actual: &[f64]) -> Result<f64, MetricsError> {
    if pred.len() != actual.len() {
        return Err(MetricsError::Length(pred.len(), actual.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sum = 0.0;
    for (i, (p, a)) in pred.iter().zip(actual).enumerate() {
        if !(*a > 0.0) {
            return Err(MetricsError::NonPositiveActual(*a, i));
        }
        sum += libm::fabs(p - a) / a;
    }
    Ok(100.0 * sum / pred.len() as f64)
}

/// Cost of running schedule `p_star` against the realized load: the task
/// loss with generation cost, by component.
pub fn realized_cost(
    p_star: &DispatchSchedule,
    y_actual: &[f64],
    system: &SystemConfig,
) -> Result<TaskLossValue, MetricsError> {
    Ok(task_loss(p_star, y_actual, system, true)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Population mean and standard deviation per column across rows (days).
pub fn hourly_stats(values: &[Vec<f64>]) -> Result<HourlyStats, MetricsError> {
    let first = values.first().ok_or(MetricsError::Empty)?;
    let width = first.len();
    if let Some(bad) = values.iter().find(|r| r.len() != width) {
        return Err(MetricsError::Length(width, bad.len()));
    }
    let n = values.len() as f64;
    let mut mean = vec![0.0; width];
    let mut std = vec![0.0; width];
    for h in 0..width {
        let m = values.iter().map(|r| r[h]).sum::<f64>() / n;
        let v = values.iter().map(|r| (r[h] - m) * (r[h] - m)).sum::<f64>() / n;
        mean[h] = m;
        std[h] = libm::sqrt(v);
    }
    Ok(HourlyStats { mean, std })
}

/// `(task loss, prediction loss)` per logged epoch that has a training task
/// loss, in epoch order.
pub fn tradeoff_points(log: &TrainingLog) -> Vec<(usize, f64, f64)> {
    log.records
        .iter()
        .filter_map(|r| r.task_loss_train.map(|t| (r.epoch, t, r.pred_loss_train)))
        .collect()
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` when either series is constant or too
/// short.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / libm::sqrt(va * vb))
}

/// Forecast, schedule and realized cost of one evaluation day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayResult {
    pub date: NaiveDate,
    pub actual: Vec<f64>,
    pub forecast: Vec<f64>,
    pub hourly_cost: Vec<f64>,
    pub hourly_task_loss: Vec<f64>,
    pub cost: f64,
    pub generation_cost: f64,
    pub penalty_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mape_percent: f64,
    pub realized_cost_total: f64,
    pub realized_cost_mean: f64,
    /// `100 * realized_cost_mean / percent_base`.
    pub realized_cost_percent: f64,
    pub percent_base: f64,
    pub generation_cost_total: f64,
    pub penalty_cost_total: f64,
    pub hourly_cost: HourlyStats,
    pub hourly_task_loss: HourlyStats,
    pub days: Vec<DayResult>,
    /// Dates whose dispatch failed and were left out.
    pub skipped: Vec<NaiveDate>,
}

/// Forecast every example, dispatch against the forecast and score the
/// schedule at the actual load. `examples` are normalized; the report is in
/// MW and dollars. The percent base is the report's own mean cost.
pub fn evaluate(
    params: &NetworkParams,
    examples: &[TrainingExample],
    ctx: &TaskContext<'_>,
) -> Result<EvalReport, MetricsError> {
    if examples.is_empty() {
        return Err(MetricsError::Empty);
    }
    let x = DMatrix::from_fn(examples.len(), examples[0].x.len(), |i, j| examples[i].x[j]);
    let y_hat = net::predict(params, &x)?;
    let mut days = Vec::with_capacity(examples.len());
    let mut skipped = Vec::new();
    let mut warm: Option<DispatchSchedule> = None;
    for (i, e) in examples.iter().enumerate() {
        let row: Vec<f64> = y_hat.row(i).iter().copied().collect();
        let result = match ctx.dispatch(&row, warm.as_ref()) {
            Ok(r) => r,
            Err(TaskGradError::NotConverged(_)) | Err(TaskGradError::Solver(_)) => {
                skipped.push(e.date);
                continue;
            }
            Err(err) => return Err(err.into()),
        };
        let actual: Vec<f64> = e.y_train.iter().map(|v| ctx.stats.denormalize_load(*v)).collect();
        let forecast: Vec<f64> = row.iter().map(|v| ctx.stats.denormalize_load(*v)).collect();
        let cost = realized_cost(&result.p_star, &actual, ctx.system)?;
        let tl = task_loss(&result.p_star, &actual, ctx.system, ctx.include_cost)?;
        let generation_cost: f64 = cost.generation_cost.iter().sum();
        days.push(DayResult {
            date: e.date,
            hourly_cost: (0..HOURS_PER_DAY).map(|t| cost.hour_total(t)).collect(),
            hourly_task_loss: (0..HOURS_PER_DAY).map(|t| tl.hour_total(t)).collect(),
            cost: cost.total,
            generation_cost,
            penalty_cost: cost.total - generation_cost,
            actual,
            forecast,
        });
        warm = Some(result.p_star);
    }
    if days.is_empty() {
        return Err(MetricsError::NoDays);
    }
    let preds: Vec<f64> = days.iter().flat_map(|d| d.forecast.iter().copied()).collect();
    let acts: Vec<f64> = days.iter().flat_map(|d| d.actual.iter().copied()).collect();
    let total: f64 = days.iter().map(|d| d.cost).sum();
    let mean = total / days.len() as f64;
    let hc: Vec<Vec<f64>> = days.iter().map(|d| d.hourly_cost.clone()).collect();
    let ht: Vec<Vec<f64>> = days.iter().map(|d| d.hourly_task_loss.clone()).collect();
    Ok(EvalReport {
        mape_percent: mape(&preds, &acts)?,
        realized_cost_total: total,
        realized_cost_mean: mean,
        realized_cost_percent: 100.0,
        percent_base: mean,
        generation_cost_total: days.iter().map(|d| d.generation_cost).sum(),
        penalty_cost_total: days.iter().map(|d| d.penalty_cost).sum(),
        hourly_cost: hourly_stats(&hc)?,
        hourly_task_loss: hourly_stats(&ht)?,
        days,
        skipped,
    })
}

/// One resampled test of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub repeat: usize,
    pub mape_a: f64,
    pub mape_b: f64,
    pub cost_a: f64,
    pub cost_b: f64,
    pub cost_percent_a: f64,
    pub cost_percent_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    /// Mean cost of model A over all repeats; the 100% reference.
    pub percent_base: f64,
    pub mean_mape_a: f64,
    pub mean_mape_b: f64,
    pub mean_cost_percent_a: f64,
    pub mean_cost_percent_b: f64,
}

/// Concatenated forecasts, actuals and mean cost of the picked days.
fn resample<'a>(pick: &[usize], day: impl Fn(usize) -> &'a DayResult) -> (Vec<f64>, Vec<f64>, f64) {
    let mut p = Vec::with_capacity(pick.len() * HOURS_PER_DAY);
    let mut y = Vec::with_capacity(pick.len() * HOURS_PER_DAY);
    let mut c = 0.0;
    for &i in pick {
        let d = day(i);
        p.extend_from_slice(&d.forecast);
        y.extend_from_slice(&d.actual);
        c += d.cost;
    }
    (p, y, c / pick.len() as f64)
}

/// Repeated evaluation on bootstrap resamples of the common evaluation days.
///
/// Each repeat draws `n` days with replacement (seeded) and reports both
/// models' MAPE and mean realized cost; costs are expressed in percent of
/// model A's mean cost across repeats.
pub fn compare(
    a: &EvalReport,
    b: &EvalReport,
    repeats: usize,
    seed: u64,
) -> Result<CompareReport, MetricsError> {
    let common: Vec<(&DayResult, &DayResult)> = a
        .days
        .iter()
        .filter_map(|da| b.days.iter().find(|db| db.date == da.date).map(|db| (da, db)))
        .collect();
    if common.is_empty() || repeats == 0 {
        return Err(MetricsError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = common.len();
    let mut raw = Vec::with_capacity(repeats);
    for repeat in 0..repeats {
        let pick: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let (pa, ya, ca) = resample(&pick, |i| common[i].0);
        let (pb, yb, cb) = resample(&pick, |i| common[i].1);
        raw.push((repeat, mape(&pa, &ya)?, mape(&pb, &yb)?, ca, cb));
    }
    let reps = repeats as f64;
    let base = raw.iter().map(|r| r.3).sum::<f64>() / reps;
    let rows: Vec<CompareRow> = raw
        .into_iter()
        .map(|(repeat, mape_a, mape_b, cost_a, cost_b)| CompareRow {
            repeat,
            mape_a,
            mape_b,
            cost_a,
            cost_b,
            cost_percent_a: 100.0 * cost_a / base,
            cost_percent_b: 100.0 * cost_b / base,
        })
        .collect();
    let avg = |f: fn(&CompareRow) -> f64| rows.iter().map(f).sum::<f64>() / reps;
    Ok(CompareReport {
        percent_base: base,
        mean_mape_a: avg(|r| r.mape_a),
        mean_mape_b: avg(|r| r.mape_b),
        mean_cost_percent_a: avg(|r| r.cost_percent_a),
        mean_cost_percent_b: avg(|r| r.cost_percent_b),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mape_examples() {
        let a = [100.0, 200.0, 50.0];
        assert_eq!(mape(&a, &a).unwrap(), 0.0);
        let p: Vec<f64> = a.iter().map(|v| v * 1.1).collect();
        assert!((mape(&p, &a).unwrap() - 10.0).abs() < 1e-12);
        assert!(mape(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn hourly_stats_examples() {
        let s = hourly_stats(&[vec![2.0, -3.0], vec![-2.0, 3.0]]).unwrap();
        assert_eq!(s.mean, [0.0, 0.0]);
        assert_eq!(s.std, [2.0, 3.0]);
        assert!(hourly_stats(&[]).is_err());
    }

    #[test]
    fn spearman_ties_and_direction() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 25.0]), Some(1.0));
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), [2.5, 1.0, 2.5]);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
    }
}
