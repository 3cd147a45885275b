//! Task loop: per-task adaptation cycle, offline meta-training with early
//! stopping, the online phase, and the naive and rolling-retrain baselines.

mod baselines;
mod offline;
mod report;

use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterConfig, DataAdapter};
use crate::config::{MetaSection, ModelSpec, TrainingSection};
use crate::data::{DateKey, Split, StreamDataset, TaskSchedule, TaskWindow};
use crate::engine::{mse, AdamState, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::eval::{ic_per_date, rank_ic_per_date, summarize, MetricsSummary, ShiftPartition, Stratum};
use crate::meta::{
    adaptive_coefficient, combine_psi_gradient, meta_gradients, predict_adapted, update_data_adapter,
    update_model_adapter, AdapterRef, AdapterUsage, MetaLossBreakdown, MetaOptConfig, RegMode, TaskData,
};
use crate::model_adapter::fine_tune;
use crate::models::Backbone;

pub use baselines::{fit_backbone, pretrain_backbone, run_baseline_naive_il, run_baseline_rolling_retrain, shift_partition};
pub use offline::{offline_train, online_train, validate, EarlyStopping, EpochLog, OfflineResult};
pub use report::{
    write_ablation_csv, write_epochs_csv, write_metrics_csv, write_predictions_csv, write_report_csv,
    write_timing_csv, AblationRow,
};

/// Named random substreams derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Shuffle = 3,
    Adapter = 4,
    Pretrain = 5,
    Retrain = 6,
}

pub fn substream_seed(seed: u64, stream: Stream) -> u64 {
    substream(seed, stream).next_u64()
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    #[serde(rename = "doubleadapt")]
    DoubleAdapt,
    NaiveIl,
    RollingRetrain,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::DoubleAdapt => "doubleadapt",
            RunMode::NaiveIl => "naive_il",
            RunMode::RollingRetrain => "rolling_retrain",
        }
    }
}

/// How the slow weights evolve between tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaMode {
    /// Meta-learned initialization updated by Adam on the test-loss gradient.
    Learned,
    /// The fine-tuned task weights become the next starting point.
    Carry,
}

/// Components switched on for an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Il,
    IlDa,
    IlMa,
    IlMaG,
    IlMaH,
    #[default]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Il,
        Variant::IlDa,
        Variant::IlMa,
        Variant::IlMaG,
        Variant::IlMaH,
        Variant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Il => "IL",
            Variant::IlDa => "IL+DA",
            Variant::IlMa => "IL+MA",
            Variant::IlMaG => "IL+MA+G",
            Variant::IlMaH => "IL+MA+H",
            Variant::Full => "DoubleAdapt",
        }
    }

    pub fn usage(self) -> AdapterUsage {
        match self {
            Variant::Il | Variant::IlMa => AdapterUsage::NONE,
            Variant::IlDa | Variant::Full => AdapterUsage::FULL,
            Variant::IlMaG => AdapterUsage { features: true, labels: false },
            Variant::IlMaH => AdapterUsage { features: false, labels: true },
        }
    }

    pub fn ma_mode(self) -> MaMode {
        match self {
            Variant::Il | Variant::IlDa => MaMode::Carry,
            _ => MaMode::Learned,
        }
    }
}

/// Everything the pipeline needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub adapter: AdapterConfig,
    pub meta: MetaSection,
    pub training: TrainingSection,
}

impl RunConfig {
    pub fn from_config(config: &crate::config::Config) -> Self {
        Self {
            model: config.model.clone(),
            adapter: config.adapter.clone(),
            meta: config.meta.clone(),
            training: config.training.clone(),
        }
    }

    pub fn backbone(&self, input_dim: usize) -> Backbone {
        self.model.build(input_dim)
    }

    pub fn learner(&self, input_dim: usize, variant: Variant) -> Result<Learner> {
        let usage = variant.usage();
        let adapter = if usage.any() {
            Some(DataAdapter::new(&self.adapter, input_dim)?)
        } else {
            None
        };
        Ok(Learner {
            model: self.backbone(input_dim),
            adapter,
            usage,
            ma_mode: variant.ma_mode(),
            meta: self.meta.opt(),
            eta_theta: self.meta.eta_theta,
            inner_steps: self.meta.inner_steps,
        })
    }
}

/// The fixed parts of a DoubleAdapt-style learner.
#[derive(Debug, Clone)]
pub struct Learner {
    pub model: Backbone,
    pub adapter: Option<DataAdapter<f64>>,
    pub usage: AdapterUsage,
    pub ma_mode: MaMode,
    pub meta: MetaOptConfig,
    pub eta_theta: f64,
    pub inner_steps: usize,
}

/// Meta-learner parameters and optimizer states carried across tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub phi: ParamSet<f64>,
    pub psi: Option<ParamSet<f64>>,
    pub phi_opt: AdamState<f64>,
    pub psi_opt: Option<AdamState<f64>>,
}

impl LearnerState {
    pub fn new(phi: ParamSet<f64>, psi: Option<ParamSet<f64>>) -> Self {
        Self {
            phi_opt: AdamState::new(&phi),
            psi_opt: psi.as_ref().map(AdamState::new),
            phi,
            psi,
        }
    }

    pub fn reset_optimizers(&mut self) {
        self.phi_opt.reset();
        if let Some(s) = self.psi_opt.as_mut() {
            s.reset();
        }
    }

    pub fn checksum(&self) -> u64 {
        let mut h = self.phi.checksum();
        if let Some(psi) = &self.psi {
            h = h.rotate_left(17) ^ psi.checksum();
        }
        h
    }
}

/// Output of the inference half of a task, produced without test labels.
#[derive(Debug, Clone)]
pub struct Inference {
    pub theta: ParamSet<f64>,
    pub train_loss: f64,
    pub predictions: Vec<f64>,
}

/// Predictions and labels of one test date.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatePredictions {
    pub date_index: usize,
    pub date: DateKey,
    pub instruments: Vec<String>,
    pub predictions: Vec<f64>,
    pub labels: Vec<f64>,
}

impl DatePredictions {
    pub fn ic(&self) -> Option<f64> {
        ic_per_date(&self.predictions, &self.labels).ok().flatten()
    }

    pub fn rank_ic(&self) -> Option<f64> {
        rank_ic_per_date(&self.predictions, &self.labels).ok().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskReport {
    pub k: usize,
    pub split: Split,
    pub train_loss: f64,
    pub losses: MetaLossBreakdown<f64>,
    pub adaptive_coef: Option<f64>,
    pub dates: Vec<DatePredictions>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TaskReport {
    pub fn n_predictions(&self) -> usize {
        self.dates.iter().map(|d| d.predictions.len()).sum()
    }

    pub fn mean_ic(&self) -> Option<f64> {
        let ics: Vec<_> = self.dates.iter().map(DatePredictions::ic).collect();
        summarize(&ics).ok().map(|s| s.mean)
    }

    pub fn mean_rank_ic(&self) -> Option<f64> {
        let ics: Vec<_> = self.dates.iter().map(DatePredictions::rank_ic).collect();
        summarize(&ics).ok().map(|s| s.mean)
    }
}

/// Reports of an online run; metrics cover the meta-test tasks only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: String,
    pub tasks: Vec<TaskReport>,
    pub metrics: MetricsSummary,
}

impl RunReport {
    pub fn new(mode: impl Into<String>, tasks: Vec<TaskReport>) -> Result<Self> {
        let metrics = metrics_over(tasks.iter().filter(|t| t.split == Split::MetaTest))?;
        Ok(Self {
            mode: mode.into(),
            tasks,
            metrics,
        })
    }

    pub fn meta_test(&self) -> impl Iterator<Item = &TaskReport> {
        self.tasks.iter().filter(|t| t.split == Split::MetaTest)
    }

    pub fn n_test_predictions(&self) -> usize {
        self.meta_test().map(TaskReport::n_predictions).sum()
    }

    /// Overall and per-stratum metrics; the partition indexes meta-test
    /// tasks in order. Strata without a defined IC are `None`.
    pub fn stratified(&self, partition: &ShiftPartition) -> Vec<(String, Option<MetricsSummary>)> {
        let test: Vec<&TaskReport> = self.meta_test().collect();
        let mut rows = vec![("overall".to_string(), Some(self.metrics.clone()))];
        for stratum in Stratum::ALL {
            let members = partition.members(stratum).iter().filter_map(|&i| test.get(i).copied());
            rows.push((stratum.name().to_string(), metrics_over(members).ok()));
        }
        rows
    }
}

pub fn metrics_over<'a>(tasks: impl Iterator<Item = &'a TaskReport>) -> Result<MetricsSummary> {
    let dates: Vec<&DatePredictions> = tasks.flat_map(|t| t.dates.iter()).collect();
    MetricsSummary::from_dates(dates.iter().map(|d| (&d.predictions[..], &d.labels[..])))
}

/// Features of a test window, with no access to its labels.
pub(crate) fn test_features(ds: &StreamDataset, range: std::ops::Range<usize>) -> Result<Tensor<f64>> {
    let slices = ds
        .slices()
        .get(range.clone())
        .ok_or_else(|| Error::Schedule(format!("test window {range:?} is out of bounds")))?;
    let rows: usize = slices.iter().map(|s| s.len()).sum();
    let mut data = Vec::with_capacity(rows * ds.feature_dim());
    for s in slices {
        data.extend_from_slice(s.features().data());
    }
    Tensor::new(vec![rows, ds.feature_dim()], data)
}

/// Splits flat predictions back into per-date records, attaching labels.
pub(crate) fn per_date(
    ds: &StreamDataset,
    range: std::ops::Range<usize>,
    predictions: &[f64],
) -> Vec<DatePredictions> {
    let mut offset = 0;
    ds.slices()[range]
        .iter()
        .map(|s| {
            let n = s.len();
            let d = DatePredictions {
                date_index: s.date_index(),
                date: s.date().clone(),
                instruments: s.instruments().to_vec(),
                predictions: predictions[offset..offset + n].to_vec(),
                labels: s.labels().to_vec(),
            };
            offset += n;
            d
        })
        .collect()
}

impl Learner {
    pub fn init_state(&self, phi: ParamSet<f64>, seed: u64) -> LearnerState {
        let psi = self
            .adapter
            .as_ref()
            .map(|a| a.init(substream_seed(seed, Stream::Adapter)));
        LearnerState::new(phi, psi)
    }

    fn adapter_ref<'a>(&'a self, state: &'a LearnerState) -> Option<AdapterRef<'a, f64>> {
        match (&self.adapter, &state.psi) {
            (Some(adapter), Some(psi)) if self.usage.any() => Some(AdapterRef {
                adapter,
                psi,
                usage: self.usage,
            }),
            _ => None,
        }
    }

    /// Adapts the incremental data, fine-tunes from `φ` and predicts the
    /// test window from its features alone.
    pub fn infer(
        &self,
        state: &LearnerState,
        train_x: &Tensor<f64>,
        train_y: &[f64],
        test_x: &Tensor<f64>,
    ) -> Result<Inference> {
        let da = self.adapter_ref(state);
        let (z, y) = match da {
            Some(da) => {
                let z = da.features(train_x)?;
                let y = da.labels(&z, train_y)?;
                (z, y)
            }
            None => (train_x.clone(), train_y.to_vec()),
        };
        let (theta, train_loss) = fine_tune(&self.model, &state.phi, &z, &y, self.eta_theta, self.inner_steps)?;
        let predictions = predict_adapted(da, &self.model, &theta, test_x)?;
        Ok(Inference {
            theta,
            train_loss,
            predictions,
        })
    }

    /// Updates `ψ` and `φ` once the test labels are revealed.
    pub fn learn(
        &self,
        state: &mut LearnerState,
        inference: &Inference,
        task: TaskData<'_, f64>,
    ) -> Result<(MetaLossBreakdown<f64>, Option<f64>)> {
        let da = self.adapter_ref(state);
        let grads = meta_gradients(da, &self.model, &inference.theta, task)?;
        let mut losses = MetaLossBreakdown {
            l_mse: grads.l_mse,
            l_reg: grads.l_reg,
            l_test: grads.l_mse + self.meta.alpha * grads.l_reg,
            l_test_at_phi: None,
        };
        let mut coef = None;
        if self.meta.reg_mode == RegMode::Adaptive {
            let at_phi = mse(&predict_adapted(da, &self.model, &state.phi, task.test_x)?, task.test_y)?;
            losses.l_test_at_phi = Some(at_phi);
            coef = Some(adaptive_coefficient(at_phi, grads.l_mse, self.meta.sigma));
        }
        if let (Some(da), Some(opt)) = (da, state.psi_opt.as_ref()) {
            let g = combine_psi_gradient(da.adapter, &self.meta, &grads, self.usage, coef)?;
            let mut opt = opt.clone();
            let psi = update_data_adapter(&self.meta, da.adapter, da.psi, &g, &mut opt)?;
            state.psi = Some(psi);
            state.psi_opt = Some(opt);
        }
        match self.ma_mode {
            MaMode::Learned => {
                let mut ma = crate::model_adapter::ModelAdapter::new(state.phi.clone(), self.eta_theta)?;
                update_model_adapter(&self.meta, &mut ma, &grads.theta, &mut state.phi_opt)?;
                state.phi = ma.phi;
            }
            MaMode::Carry => state.phi = inference.theta.clone(),
        }
        Ok((losses, coef))
    }

    /// One full task: inference strictly before the test labels are read,
    /// then the meta-updates.
    pub fn run_task(
        &self,
        state: &mut LearnerState,
        ds: &StreamDataset,
        schedule: &TaskSchedule,
        task: &TaskWindow,
    ) -> Result<TaskReport> {
        let start = Instant::now();
        let wrap = |e: Error| Error::Task {
            task: task.k,
            source: Box::new(e),
        };
        let (train_x, train_y) = ds.stack(task.train.clone()).map_err(wrap)?;
        let test_x = test_features(ds, task.test.clone()).map_err(wrap)?;
        let inference = self.infer(state, &train_x, &train_y, &test_x).map_err(wrap)?;

        let (_, test_y) = ds.stack(task.test.clone()).map_err(wrap)?;
        let data = TaskData {
            train_x: &train_x,
            train_y: &train_y,
            test_x: &test_x,
            test_y: &test_y,
        };
        let (losses, adaptive_coef) = self.learn(state, &inference, data).map_err(wrap)?;
        Ok(TaskReport {
            k: task.k,
            split: schedule.split_of(task.k),
            train_loss: inference.train_loss,
            losses,
            adaptive_coef,
            dates: per_date(ds, task.test.clone(), &inference.predictions),
            wall_time: start.elapsed(),
        })
    }
}

#[cfg(test)]
mod tests;
