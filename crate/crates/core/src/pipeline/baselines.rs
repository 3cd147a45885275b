use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{per_date, substream, substream_seed, test_features, RunConfig, RunReport, Stream, TaskReport};
use crate::data::{Split, StreamDataset, TaskSchedule};
use crate::engine::{adam_step, mse, AdamState, ParamSet};
use crate::error::{Error, Result};
use crate::eval::{partition_by_shift, ShiftPartition, ShiftProbe};
use crate::meta::MetaLossBreakdown;
use crate::model_adapter::fine_tune;
use crate::models::ForecastModel;

/// Adam over minibatches of `batch_dates` consecutive dates from `dates`,
/// visiting the batches in a fresh random order each epoch.
#[allow(clippy::too_many_arguments)]
pub fn fit_backbone<M: ForecastModel<f64> + ?Sized>(
    model: &M,
    start: ParamSet<f64>,
    ds: &StreamDataset,
    dates: Range<usize>,
    epochs: usize,
    learning_rate: f64,
    batch_dates: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParamSet<f64>> {
    if batch_dates == 0 {
        return Err(Error::Config("batch size must be >= 1 date".into()));
    }
    let batches: Vec<Range<usize>> = dates
        .clone()
        .step_by(batch_dates)
        .map(|s| s..(s + batch_dates).min(dates.end))
        .collect();
    let stacked = batches
        .iter()
        .map(|b| ds.stack(b.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut params = start;
    let mut opt = AdamState::new(&params);
    let mut order: Vec<usize> = (0..stacked.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for &b in &order {
            let (x, y) = &stacked[b];
            let (_, grads) = model.loss_and_grads(&params, x, y)?;
            let (next, st) = adam_step(&params, &grads, &opt, learning_rate)?;
            params = next;
            opt = st;
        }
    }
    Ok(params)
}

/// Supervised training of the backbone on the training range; the common
/// starting point of every incremental method.
pub fn pretrain_backbone(config: &RunConfig, ds: &StreamDataset, schedule: &TaskSchedule) -> Result<ParamSet<f64>> {
    let model = config.backbone(ds.feature_dim());
    let seed = config.training.seed;
    let init = model.init(substream_seed(seed, Stream::Init));
    let mut rng = substream(seed, Stream::Pretrain);
    fit_backbone(
        &model,
        init,
        ds,
        0..schedule.train_end + 1,
        config.training.pretrain_epochs,
        config.training.pretrain_learning_rate,
        schedule.r,
        &mut rng,
    )
}

fn baseline_report(
    ds: &StreamDataset,
    schedule: &TaskSchedule,
    k: usize,
    train_loss: f64,
    predictions: &[f64],
    started: Instant,
) -> Result<TaskReport> {
    let task = &schedule.tasks[k];
    let (_, test_y) = ds.stack(task.test.clone())?;
    let l_mse = mse(predictions, &test_y)?;
    Ok(TaskReport {
        k,
        split: schedule.split_of(k),
        train_loss,
        losses: MetaLossBreakdown {
            l_mse,
            l_reg: 0.0,
            l_test: l_mse,
            l_test_at_phi: None,
        },
        adaptive_coef: None,
        dates: per_date(ds, task.test.clone(), predictions),
        wall_time: started.elapsed(),
    })
}

/// Plain fine-tuning on each task's raw incremental data, starting from the
/// previous task's weights.
pub fn run_baseline_naive_il<M: ForecastModel<f64> + ?Sized>(
    model: &M,
    start: ParamSet<f64>,
    ds: &StreamDataset,
    schedule: &TaskSchedule,
    eta: f64,
    steps: usize,
) -> Result<RunReport> {
    let mut theta = start;
    let mut reports = Vec::new();
    for task in schedule.online() {
        let started = Instant::now();
        let wrap = |e: Error| Error::Task {
            task: task.k,
            source: Box::new(e),
        };
        let (x, y) = ds.stack(task.train.clone()).map_err(wrap)?;
        let (next, loss) = fine_tune(model, &theta, &x, &y, eta, steps).map_err(wrap)?;
        theta = next;
        let test_x = test_features(ds, task.test.clone()).map_err(wrap)?;
        let pred = model.predict(&theta, &test_x).map_err(wrap)?;
        reports.push(baseline_report(ds, schedule, task.k, loss, &pred, started).map_err(wrap)?);
    }
    RunReport::new("naive_il", reports)
}

/// Retrains from a fresh initialization on all dates up to each task's
/// training window end, for `rr_epochs` epochs.
pub fn run_baseline_rolling_retrain(
    config: &RunConfig,
    ds: &StreamDataset,
    schedule: &TaskSchedule,
) -> Result<RunReport> {
    let model = config.backbone(ds.feature_dim());
    let seed = config.training.seed;
    let init = model.init(substream_seed(seed, Stream::Init));
    let mut rng = substream(seed, Stream::Retrain);
    let mut reports = Vec::new();
    for task in schedule.online() {
        let started = Instant::now();
        let wrap = |e: Error| Error::Task {
            task: task.k,
            source: Box::new(e),
        };
        let params = fit_backbone(
            &model,
            init.clone(),
            ds,
            0..task.train.end,
            config.training.rr_epochs,
            config.training.rr_learning_rate,
            schedule.r,
            &mut rng,
        )
        .map_err(wrap)?;
        let (x, y) = ds.stack(task.train.clone()).map_err(wrap)?;
        let train_loss = mse(&model.predict(&params, &x).map_err(wrap)?, &y).map_err(wrap)?;
        let test_x = test_features(ds, task.test.clone()).map_err(wrap)?;
        let pred = model.predict(&params, &test_x).map_err(wrap)?;
        reports.push(baseline_report(ds, schedule, task.k, train_loss, &pred, started).map_err(wrap)?);
    }
    RunReport::new("rolling_retrain", reports)
}

/// Shift degree of every meta-test task, measured by a naive incremental
/// probe that starts from `start` and runs through the online tasks.
pub fn shift_partition<M: ForecastModel<f64> + ?Sized>(
    model: &M,
    start: ParamSet<f64>,
    ds: &StreamDataset,
    schedule: &TaskSchedule,
    eta: f64,
    steps: usize,
) -> Result<ShiftPartition> {
    let mut probe = ShiftProbe {
        model,
        theta: start,
        eta,
        steps,
    };
    let mut deltas = Vec::new();
    for task in schedule.online() {
        let (train_x, train_y) = ds.stack(task.train.clone())?;
        let (test_x, test_y) = ds.stack(task.test.clone())?;
        let d = probe.shift_degree(&train_x, &train_y, &test_x, &test_y)?;
        if schedule.split_of(task.k) == Split::MetaTest {
            deltas.push(d);
        }
    }
    Ok(partition_by_shift(&deltas))
}
