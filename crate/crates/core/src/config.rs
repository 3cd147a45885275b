//! Run configuration read from TOML. Every field has a default and unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterConfig;
use crate::data::{build_schedule, load_csv, normalize, CsvSchema, DateKey, StreamDataset, TaskSchedule};
use crate::error::{Error, Result};
use crate::meta::{MetaOptConfig, RegMode};
use crate::models::{Backbone, LinearModel, MlpModel};
use crate::pipeline::{substream_seed, RunMode, Stream, Variant};
use crate::synth::{generate, DriftMode, SynthConfig, SynthStream};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub data: DataSection,
    pub schedule: ScheduleSection,
    pub model: ModelSpec,
    pub adapter: AdapterConfig,
    pub meta: MetaSection,
    pub training: TrainingSection,
    pub output: OutputSection,
}

/// Input stream: a CSV file when `path` is set, otherwise a synthetic stream.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub schema: CsvSchema,
    pub synth: SynthSection,
}

/// Synthetic stream settings; the generator seed is derived from
/// `training.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_dates: usize,
    pub n_instruments: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub drift_mode: DriftMode,
    pub drift_rate: f64,
    pub switch_period: usize,
    pub signal_scale: f64,
    pub covariate_drift: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let c = SynthConfig::default();
        Self {
            n_dates: c.n_dates,
            n_instruments: c.n_instruments,
            feature_dim: c.feature_dim,
            noise_std: c.noise_std,
            drift_mode: c.drift_mode,
            drift_rate: c.drift_rate,
            switch_period: c.switch_period,
            signal_scale: c.signal_scale,
            covariate_drift: c.covariate_drift,
        }
    }
}

impl SynthSection {
    pub fn to_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_dates: self.n_dates,
            n_instruments: self.n_instruments,
            feature_dim: self.feature_dim,
            noise_std: self.noise_std,
            drift_mode: self.drift_mode,
            drift_rate: self.drift_rate,
            switch_period: self.switch_period,
            signal_scale: self.signal_scale,
            covariate_drift: self.covariate_drift,
            seed,
        }
    }
}

/// Task interval and split dates. Unset split dates fall back to 50% and
/// 70% of the date range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub r: usize,
    pub train_end: Option<DateKey>,
    pub valid_end: Option<DateKey>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            r: 20,
            train_end: None,
            valid_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Linear {},
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
    },
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Mlp { hidden: default_hidden() }
    }
}

impl ModelSpec {
    pub fn build(&self, input_dim: usize) -> Backbone {
        match self {
            ModelSpec::Linear {} => Backbone::Linear(LinearModel::new(input_dim)),
            ModelSpec::Mlp { hidden } => Backbone::Mlp(MlpModel::new(input_dim, hidden.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaSection {
    pub alpha: f64,
    /// Inner (task) learning rate.
    pub eta_theta: f64,
    pub eta_phi: f64,
    pub eta_psi: f64,
    pub reg_mode: RegMode,
    pub sigma: f64,
    pub inner_steps: usize,
}

impl Default for MetaSection {
    fn default() -> Self {
        let m = MetaOptConfig::default();
        Self {
            alpha: m.alpha,
            eta_theta: 0.001,
            eta_phi: m.eta_phi,
            eta_psi: m.eta_psi,
            reg_mode: m.reg_mode,
            sigma: m.sigma,
            inner_steps: 1,
        }
    }
}

impl MetaSection {
    pub fn opt(&self) -> MetaOptConfig {
        MetaOptConfig {
            alpha: self.alpha,
            eta_phi: self.eta_phi,
            eta_psi: self.eta_psi,
            reg_mode: self.reg_mode,
            sigma: self.sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.opt().validate()?;
        if !(self.eta_theta >= 0.0 && self.eta_theta.is_finite()) {
            return Err(Error::Config("meta.eta_theta must be a finite value >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub seed: u64,
    pub mode: RunMode,
    pub variant: Variant,
    /// Early-stopping patience in epochs.
    pub patience: usize,
    pub max_epochs: usize,
    /// Epochs of plain supervised training of the backbone before the
    /// incremental phases.
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub rr_epochs: usize,
    pub rr_learning_rate: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: RunMode::DoubleAdapt,
            variant: Variant::Full,
            patience: 8,
            max_epochs: 50,
            pretrain_epochs: 20,
            pretrain_learning_rate: 0.01,
            rr_epochs: 5,
            rr_learning_rate: 0.01,
        }
    }
}

impl TrainingSection {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("training.patience must be >= 1".into()));
        }
        for (name, v) in [
            ("pretrain_learning_rate", self.pretrain_learning_rate),
            ("rr_learning_rate", self.rr_learning_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("training.{name} must be a finite value >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// A normalized stream and its task schedule, ready for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: StreamDataset,
    pub schedule: TaskSchedule,
    /// Present for synthetic streams (raw, before normalization).
    pub synth: Option<SynthStream>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.r == 0 {
            return Err(Error::Config("schedule.r must be >= 1".into()));
        }
        if let ModelSpec::Mlp { hidden } = &self.model {
            if hidden.contains(&0) {
                return Err(Error::Config("model.hidden sizes must be >= 1".into()));
            }
        }
        self.adapter.validate()?;
        self.meta.validate()?;
        self.training.validate()?;
        if self.data.path.is_none() {
            self.data.synth.to_config(0).validate()?;
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        self.data
            .synth
            .to_config(substream_seed(self.training.seed, Stream::Data))
    }

    /// Loads or generates the raw stream.
    pub fn raw_stream(&self) -> Result<(StreamDataset, Option<SynthStream>)> {
        match &self.data.path {
            Some(path) => Ok((load_csv(path, self.data.schema)?, None)),
            None => {
                let s = generate(&self.synth_config())?;
                Ok((s.dataset.clone(), Some(s)))
            }
        }
    }

    /// Split dates as date indices of `ds`.
    pub fn split_indices(&self, ds: &StreamDataset) -> Result<(usize, usize)> {
        let n = ds.n_dates();
        let resolve = |key: &Option<DateKey>, frac: f64| match key {
            Some(k) => ds.resolve_date(k),
            None => Ok(((n as f64 * frac) as usize).saturating_sub(1)),
        };
        Ok((resolve(&self.schedule.train_end, 0.5)?, resolve(&self.schedule.valid_end, 0.7)?))
    }

    pub fn prepare(&self) -> Result<Prepared> {
        let (raw, synth) = self.raw_stream()?;
        let (train_end, valid_end) = self.split_indices(&raw)?;
        let dataset = normalize(&raw, train_end)?;
        let schedule = build_schedule(&dataset, self.schedule.r, train_end, valid_end)?;
        Ok(Prepared {
            dataset,
            schedule,
            synth,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = Config::default();
        assert_eq!(c.schedule.r, 20);
        assert_eq!(c.adapter.heads, 8);
        assert_eq!(c.adapter.temperature, 10.0);
        assert_eq!((c.meta.alpha, c.meta.eta_theta, c.meta.eta_phi, c.meta.eta_psi), (0.5, 0.001, 0.001, 0.01));
        assert_eq!(c.training.patience, 8);
        assert_eq!(c.model, ModelSpec::Mlp { hidden: vec![32] });
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = Config::default();
        c.schedule.train_end = Some(DateKey::Int(99));
        c.schedule.valid_end = Some(DateKey::parse("2020-03-01").unwrap());
        c.model = ModelSpec::Linear {};
        c.training.mode = RunMode::RollingRetrain;
        c.adapter.layout = crate::adapter::Layout::TimeSeries { steps: 2 };
        let text = c.to_toml();
        assert_eq!(Config::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml("[meta]\nalpah = 0.3\n").is_err());
        assert!(Config::from_toml("bogus = 1\n").is_err());
        assert!(Config::from_toml("[model]\nkind = \"linear\"\nhidden = [3]\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Config::from_toml("[schedule]\nr = 0\n").is_err());
        assert!(Config::from_toml("[training]\npatience = 0\n").is_err());
        assert!(Config::from_toml("[meta]\neta_psi = -1.0\n").is_err());
        assert!(Config::from_toml("[adapter]\ntemperature = 0.0\n").is_err());
    }

    #[test]
    fn prepare_builds_schedule_from_fractions() {
        let c = Config::from_toml(
            "[data.synth]\nn_dates = 100\nn_instruments = 5\nfeature_dim = 3\n[schedule]\nr = 10\n",
        )
        .unwrap();
        let p = c.prepare().unwrap();
        assert_eq!((p.schedule.train_end, p.schedule.valid_end), (49, 69));
        assert_eq!((p.schedule.k0, p.schedule.k1, p.schedule.len()), (4, 6, 9));
        assert!(p.dataset.moments().is_some());
    }
}
