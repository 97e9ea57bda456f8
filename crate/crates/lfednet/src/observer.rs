//! Progress reporting on stderr.

use std::time::Instant;

use lfednet_core::taskgrad::TaskGradError;
use lfednet_core::train::{EpochRecord, Phase, TrainObserver};

/// Prints one line per epoch. Wall time is reported only when enabled, so
/// logs stay byte-identical across runs by default.
pub struct Progress {
    start: Instant,
    wall_clock: bool,
    quiet: bool,
}

impl Progress {
    pub fn new(wall_clock: bool, quiet: bool) -> Self {
        Progress {
            start: Instant::now(),
            wall_clock,
            quiet,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"))
}

impl TrainObserver for Progress {
    fn now_ms(&mut self) -> u64 {
        if self.wall_clock {
            self.start.elapsed().as_millis() as u64
        } else {
            0
        }
    }

    fn epoch(&mut self, phase: Phase, r: &EpochRecord) {
        if self.quiet {
            return;
        }
        let phase = match phase {
            Phase::Pretrain => "pretrain",
            Phase::Task => "task",
        };
        eprintln!(
            "{phase} epoch {:>4}  pred {:.6e}  task {}  val {}  skipped {}",
            r.epoch,
            r.pred_loss_train,
            fmt_opt(r.task_loss_train),
            fmt_opt(r.task_loss_val),
            r.skipped
        );
    }

    fn sample_skipped(&mut self, epoch: usize, sample: usize, err: &TaskGradError) {
        if !self.quiet {
            eprintln!("epoch {epoch}: sample {sample} skipped: {err}");
        }
    }

    fn optimizer_step_skipped(&mut self, epoch: usize) {
        if !self.quiet {
            eprintln!("epoch {epoch}: non-finite gradient, optimizer step skipped");
        }
    }
}
