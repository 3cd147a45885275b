use std::ops::Range;

use serde::Serialize;

use super::{StreamDataset, Warning};
use crate::error::{Error, Result};

/// One incremental learning task as two adjacent windows of date indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskWindow {
    pub k: usize,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    MetaTrain,
    MetaValid,
    MetaTest,
}

/// Consecutive tasks with stride `r`, cut into meta-train `[0, k0)`,
/// meta-valid `[k0, k1)` and meta-test `[k1, len)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSchedule {
    pub r: usize,
    pub tasks: Vec<TaskWindow>,
    pub k0: usize,
    pub k1: usize,
    /// Last date index of the training range.
    pub train_end: usize,
    /// Last date index of the validation range.
    pub valid_end: usize,
    pub warnings: Vec<Warning>,
}

impl TaskSchedule {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn meta_train(&self) -> &[TaskWindow] {
        &self.tasks[..self.k0]
    }

    pub fn meta_valid(&self) -> &[TaskWindow] {
        &self.tasks[self.k0..self.k1]
    }

    pub fn meta_test(&self) -> &[TaskWindow] {
        &self.tasks[self.k1..]
    }

    /// Tasks processed by the online phase: meta-valid then meta-test.
    pub fn online(&self) -> &[TaskWindow] {
        &self.tasks[self.k0..]
    }

    pub fn split_of(&self, k: usize) -> Split {
        if k < self.k0 {
            Split::MetaTrain
        } else if k < self.k1 {
            Split::MetaValid
        } else {
            Split::MetaTest
        }
    }
}

/// Task `k` trains on dates `[k·r, (k+1)·r)` and tests on `[(k+1)·r, (k+2)·r)`,
/// so the test window of task `k` is the training window of task `k+1`.
/// `train_end` and `valid_end` are inclusive date indices.
pub fn build_schedule(
    ds: &StreamDataset,
    r: usize,
    train_end: usize,
    valid_end: usize,
) -> Result<TaskSchedule> {
    if r == 0 {
        return Err(Error::Schedule("task interval r must be >= 1".into()));
    }
    let n = ds.n_dates();
    if valid_end <= train_end {
        return Err(Error::Schedule(format!(
            "valid end {valid_end} must come after train end {train_end}"
        )));
    }
    if valid_end >= n {
        return Err(Error::Schedule(format!(
            "valid end {valid_end} is beyond the last date index {}",
            n.saturating_sub(1)
        )));
    }
    let blocks = n / r;
    if blocks < 2 {
        return Err(Error::Schedule(format!("{n} dates cannot hold one task with r = {r}")));
    }
    let tasks: Vec<TaskWindow> = (0..blocks - 1)
        .map(|k| TaskWindow {
            k,
            train: k * r..(k + 1) * r,
            test: (k + 1) * r..(k + 2) * r,
        })
        .collect();
    let ending_by = |last: usize| tasks.iter().take_while(|t| t.test.end <= last + 1).count();
    let k0 = ending_by(train_end);
    let k1 = ending_by(valid_end);
    if k0 == 0 || k1 == k0 || k1 == tasks.len() {
        return Err(Error::Schedule(format!(
            "r = {r} leaves an empty split: {k0} meta-train, {} meta-valid, {} meta-test tasks",
            k1 - k0,
            tasks.len() - k1
        )));
    }
    let mut warnings = Vec::new();
    let trailing = n - blocks * r;
    if trailing > 0 {
        warnings.push(Warning::emit(
            "trailing_dates",
            format!("{trailing} trailing dates do not fill a window and are dropped"),
        ));
    }
    Ok(TaskSchedule {
        r,
        tasks,
        k0,
        k1,
        train_end,
        valid_end,
        warnings,
    })
}
