//! CSV renderings of schedules, forecasts, logs and evaluation results.

use lfednet_core::grid::{DispatchSchedule, SystemConfig};
use lfednet_core::metrics::{tradeoff_points, EvalReport, HourlyStats};
use lfednet_core::train::TrainingLog;
use lfednet_core::ForecastDistribution;

fn render<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `hour,gen_id,mw`, one row per hour and generator.
pub fn schedule_csv(system: &SystemConfig, p: &DispatchSchedule) -> Vec<u8> {
    let rows = (0..p.horizon()).flat_map(|t| {
        system
            .generators()
            .iter()
            .enumerate()
            // adding zero turns a solver's -0 into 0
            .map(move |(g, gen)| vec![t.to_string(), gen.id.clone(), (p.get(t, g) + 0.0).to_string()])
    });
    render(&["hour", "gen_id", "mw"], rows)
}

/// `hour,mu_mw,sigma2` with the variance in MW².
pub fn forecast_csv(dist: &ForecastDistribution) -> Vec<u8> {
    let rows = dist
        .mu
        .iter()
        .zip(&dist.sigma2)
        .enumerate()
        .map(|(t, (m, s))| vec![t.to_string(), m.to_string(), s.to_string()]);
    render(&["hour", "mu_mw", "sigma2"], rows)
}

pub fn log_csv(log: &TrainingLog) -> Vec<u8> {
    let rows = log.records.iter().map(|r| {
        vec![
            r.epoch.to_string(),
            r.pred_loss_train.to_string(),
            opt(r.task_loss_train),
            opt(r.task_loss_val),
            r.wall_ms.to_string(),
            r.skipped.to_string(),
        ]
    });
    render(
        &["epoch", "pred_loss_train", "task_loss_train", "task_loss_val", "wall_ms", "skipped"],
        rows,
    )
}

/// `hour,mean,std`.
pub fn hourly_csv(stats: &HourlyStats) -> Vec<u8> {
    let rows = stats
        .mean
        .iter()
        .zip(&stats.std)
        .enumerate()
        .map(|(t, (m, s))| vec![t.to_string(), m.to_string(), s.to_string()]);
    render(&["hour", "mean", "std"], rows)
}

/// `hour,<a>_mean,<a>_std,<b>_mean,<b>_std`.
pub fn hourly_pair_csv(names: [&str; 2], a: &HourlyStats, b: &HourlyStats) -> Vec<u8> {
    let header: Vec<String> = names
        .iter()
        .flat_map(|n| [format!("{n}_mean"), format!("{n}_std")])
        .collect();
    let mut full = vec!["hour"];
    full.extend(header.iter().map(String::as_str));
    let rows = (0..a.mean.len()).map(|t| {
        vec![
            t.to_string(),
            a.mean[t].to_string(),
            a.std[t].to_string(),
            b.mean[t].to_string(),
            b.std[t].to_string(),
        ]
    });
    render(&full, rows)
}

/// `epoch,task_loss_train,pred_loss_train` for task-training epochs.
pub fn tradeoff_csv(log: &TrainingLog) -> Vec<u8> {
    let rows = tradeoff_points(log)
        .into_iter()
        .map(|(e, task, pred)| vec![e.to_string(), task.to_string(), pred.to_string()]);
    render(&["epoch", "task_loss_train", "pred_loss_train"], rows)
}

/// `day,hour,actual,lfednet,lfnet` over the days both reports evaluated.
pub fn forecast_vs_actual_csv(task_model: &EvalReport, baseline: &EvalReport) -> Vec<u8> {
    let rows = task_model
        .days
        .iter()
        .filter_map(|a| baseline.days.iter().find(|b| b.date == a.date).map(|b| (a, b)))
        .flat_map(|(a, b)| {
            (0..a.actual.len()).map(move |t| {
                vec![
                    a.date.to_string(),
                    t.to_string(),
                    a.actual[t].to_string(),
                    a.forecast[t].to_string(),
                    b.forecast[t].to_string(),
                ]
            })
        });
    render(&["day", "hour", "actual", "lfednet", "lfnet"], rows)
}
