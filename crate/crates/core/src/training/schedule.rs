use serde::{Deserialize, Serialize};

/// Single-drop plateau schedule with early stopping.
///
/// After `patience_lr` consecutive epochs without a new best tuning loss the
/// rate drops once to the floor and the counter restarts; after
/// `patience_stop` further non-improving epochs training stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub floor_lr: f64,
    pub patience_lr: usize,
    pub patience_stop: usize,
    pub best: f64,
    pub bad_epochs: usize,
    pub dropped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleStep {
    /// Rate for the next epoch.
    pub lr: f64,
    pub improved: bool,
    pub stop: bool,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f64, floor_lr: f64, patience_lr: usize, patience_stop: usize) -> Self {
        Self {
            lr: initial_lr,
            floor_lr,
            patience_lr,
            patience_stop,
            best: f64::INFINITY,
            bad_epochs: 0,
            dropped: false,
        }
    }

    /// Records one epoch's tuning loss.
    pub fn update(&mut self, loss: f64) -> ScheduleStep {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        let mut stop = false;
        if !self.dropped && self.bad_epochs >= self.patience_lr {
            self.dropped = true;
            self.lr = self.floor_lr;
            self.bad_epochs = 0;
        } else if self.dropped && self.bad_epochs >= self.patience_stop {
            stop = true;
        }
        ScheduleStep {
            lr: self.lr,
            improved,
            stop,
        }
    }
}

/// Replays a tuning-loss history through a fresh schedule; returns the rate
/// for the next epoch and whether training should stop.
pub fn lr_schedule_update(
    history: &[f64],
    initial_lr: f64,
    floor_lr: f64,
    patience_lr: usize,
    patience_stop: usize,
) -> (f64, bool) {
    let mut s = PlateauSchedule::new(initial_lr, floor_lr, patience_lr, patience_stop);
    let mut stop = false;
    for &loss in history {
        stop = s.update(loss).stop;
        if stop {
            break;
        }
    }
    (s.lr, stop)
}
