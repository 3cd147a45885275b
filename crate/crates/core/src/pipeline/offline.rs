use rand::seq::SliceRandom;
use serde::Serialize;

use super::{substream, Learner, LearnerState, RunReport, Stream, TaskReport};
use crate::config::TrainingSection;
use crate::data::{StreamDataset, TaskSchedule};
use crate::error::{Error, Result};
use crate::eval::summarize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean upper-level loss over the shuffled meta-train tasks.
    pub train_loss: f64,
    /// Mean IC over the meta-valid test dates; `None` if undefined.
    pub valid_ic: Option<f64>,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct OfflineResult {
    /// State after the best validation epoch (the initial state if none).
    pub state: LearnerState,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

/// Patience counter over validation scores; an epoch improves only when it
/// strictly beats the best score so far.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            stale: 0,
        }
    }

    /// Returns `(improved, stop)`.
    pub fn observe(&mut self, score: Option<f64>) -> (bool, bool) {
        match score {
            Some(v) if v > self.best => {
                self.best = v;
                self.stale = 0;
                (true, false)
            }
            _ => {
                self.stale += 1;
                (false, self.stale >= self.patience)
            }
        }
    }
}

/// Mean IC over the meta-valid test dates, computed on a private copy of
/// the state so the caller's state cannot change.
pub fn validate(
    learner: &Learner,
    state: &LearnerState,
    ds: &StreamDataset,
    schedule: &TaskSchedule,
) -> Result<Option<f64>> {
    let mut probe = state.clone();
    let reports = schedule
        .meta_valid()
        .iter()
        .map(|t| learner.run_task(&mut probe, ds, schedule, t))
        .collect::<Result<Vec<TaskReport>>>()?;
    let ics: Vec<_> = reports.iter().flat_map(|t| t.dates.iter().map(|d| d.ic())).collect();
    Ok(summarize(&ics).ok().map(|s| s.mean))
}

/// Meta-training over shuffled meta-train tasks, validated each epoch on a
/// copy of the state run over meta-valid in order. Stops once validation IC
/// has failed to beat the best for `patience` consecutive epochs.
pub fn offline_train(
    learner: &Learner,
    initial: LearnerState,
    ds: &StreamDataset,
    schedule: &TaskSchedule,
    training: &TrainingSection,
) -> Result<OfflineResult> {
    if schedule.meta_train().is_empty() {
        return Err(Error::Schedule("offline training needs at least one meta-train task".into()));
    }
    let mut rng = substream(training.seed, Stream::Shuffle);
    let mut state = initial.clone();
    let mut best = (initial, None);
    let mut stopping = EarlyStopping::new(training.patience);
    let mut epochs = Vec::new();
    for epoch in 0..training.max_epochs {
        state.reset_optimizers();
        let mut order: Vec<usize> = (0..schedule.k0).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &k in &order {
            let report = learner.run_task(&mut state, ds, schedule, &schedule.tasks[k])?;
            total += report.losses.l_test;
        }

        let ic = validate(learner, &state, ds, schedule)?;
        let (improved, stop) = stopping.observe(ic);
        if improved {
            best = (state.clone(), Some(epoch));
        }
        log::info!(
            "epoch {epoch}: train loss {:.6}, valid ic {}",
            total / order.len() as f64,
            ic.map_or("null".to_string(), |v| format!("{v:.6}"))
        );
        epochs.push(EpochLog {
            epoch,
            train_loss: total / order.len() as f64,
            valid_ic: ic,
            improved,
        });
        if stop {
            break;
        }
    }
    let (state, best_epoch) = best;
    Ok(OfflineResult {
        state,
        epochs,
        best_epoch,
    })
}

/// Chronological pass over meta-valid then meta-test tasks with fresh
/// optimizer states; metrics cover meta-test only.
pub fn online_train(
    learner: &Learner,
    mut state: LearnerState,
    ds: &StreamDataset,
    schedule: &TaskSchedule,
    mode: &str,
) -> Result<(RunReport, LearnerState)> {
    state.reset_optimizers();
    let tasks = schedule
        .online()
        .iter()
        .map(|t| learner.run_task(&mut state, ds, schedule, t))
        .collect::<Result<Vec<_>>>()?;
    Ok((RunReport::new(mode, tasks)?, state))
}
