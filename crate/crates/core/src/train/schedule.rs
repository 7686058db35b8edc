use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrEvent {
    pub epoch: usize,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleAction {
    Continue,
    Reduce,
    Stop,
}

/// Reduce-on-plateau learning rate with a convergence stop.
///
/// A plateau is `patience` epochs without the monitored loss dropping by at
/// least `min_delta` below the best value so far. Every plateau multiplies the
/// rate by `factor`. Plateaus reached while the rate is already below
/// `min_lr` are counted; two in a row (no improvement between them) stop
/// training.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    factor: f64,
    patience: usize,
    min_delta: f64,
    min_lr: f64,
    best: f64,
    bad_epochs: usize,
    floor_plateaus: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, patience: usize, min_delta: f64, min_lr: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            min_delta,
            min_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
            floor_plateaus: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feeds one epoch's monitored loss.
    pub fn observe(&mut self, loss: f64) -> ScheduleAction {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.bad_epochs = 0;
            self.floor_plateaus = 0;
            return ScheduleAction::Continue;
        }
        self.bad_epochs += 1;
        if self.bad_epochs < self.patience {
            return ScheduleAction::Continue;
        }
        self.bad_epochs = 0;
        if self.lr < self.min_lr {
            self.floor_plateaus += 1;
            if self.floor_plateaus >= 2 {
                return ScheduleAction::Stop;
            }
        }
        self.lr *= self.factor;
        ScheduleAction::Reduce
    }
}
