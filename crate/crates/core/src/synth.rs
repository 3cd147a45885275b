//! Seeded synthetic cross-sectional streams with known drift.
//!
//! Features are standard normal around an optionally drifting mean and
//! labels follow `y = w_tᵀx + ε`, where `w_t` evolves per [`DriftMode`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DateKey, DateSlice, StreamDataset, TaskSchedule};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::eval::{ic_per_date, summarize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    #[default]
    Stationary,
    /// `w_t` rotates in a fixed plane at `drift_rate` radians per date.
    Gradual,
    /// `w_t` is redrawn every `switch_period` dates.
    Abrupt,
    /// `w_t` alternates between two orthogonal vectors every `switch_period` dates.
    Recurring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_dates: usize,
    pub n_instruments: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub drift_mode: DriftMode,
    pub drift_rate: f64,
    pub switch_period: usize,
    /// Norm of `w_t`.
    pub signal_scale: f64,
    /// Per-date displacement of the feature mean along a fixed direction.
    pub covariate_drift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_dates: 400,
            n_instruments: 50,
            feature_dim: 10,
            noise_std: 0.5,
            drift_mode: DriftMode::Gradual,
            drift_rate: 0.02,
            switch_period: 40,
            signal_scale: 0.375,
            covariate_drift: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.n_dates == 0 || self.n_instruments == 0 {
            return bad("n_dates and n_instruments must be positive");
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be at least 2");
        }
        if self.switch_period == 0 {
            return bad("switch_period must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and >= 0");
        }
        if !(self.drift_rate >= 0.0 && self.drift_rate.is_finite()) {
            return bad("drift_rate must be finite and >= 0");
        }
        if !(self.signal_scale > 0.0 && self.signal_scale.is_finite()) {
            return bad("signal_scale must be finite and > 0");
        }
        if !self.covariate_drift.is_finite() {
            return bad("covariate_drift must be finite");
        }
        Ok(())
    }
}

/// A generated stream with its per-date ground-truth coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthStream {
    pub dataset: StreamDataset,
    /// `w_t` for every date index.
    pub truth: Vec<Vec<f64>>,
    pub config: SynthConfig,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Orthonormal pair spanning the rotation plane.
fn plane(rng: &mut ChaCha8Rng, d: usize) -> (Vec<f64>, Vec<f64>) {
    let u = unit(gaussian(rng, d));
    let mut v = gaussian(rng, d);
    let p: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(&u).for_each(|(x, a)| *x -= p * a);
    (u, unit(v))
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// Coefficients for every date; drawn from their own substream so that the
/// feature and noise draws do not depend on the drift mode.
fn coefficients(config: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let d = config.feature_dim;
    let s = config.signal_scale;
    let (u, v) = plane(&mut rng, d);
    let mut regimes: Vec<Vec<f64>> = vec![u.clone()];
    (0..config.n_dates)
        .map(|t| match config.drift_mode {
            DriftMode::Stationary | DriftMode::Gradual => {
                let rate = if config.drift_mode == DriftMode::Gradual {
                    config.drift_rate
                } else {
                    0.0
                };
                let a = rate * t as f64;
                let (c, sn) = (a.cos(), a.sin());
                u.iter().zip(&v).map(|(x, y)| s * (c * x + sn * y)).collect()
            }
            DriftMode::Abrupt => {
                let j = t / config.switch_period;
                while regimes.len() <= j {
                    regimes.push(unit(gaussian(&mut rng, d)));
                }
                scaled(&regimes[j], s)
            }
            DriftMode::Recurring => {
                if (t / config.switch_period).is_multiple_of(2) {
                    scaled(&u, s)
                } else {
                    scaled(&v, s)
                }
            }
        })
        .collect()
}

pub fn generate(config: &SynthConfig) -> Result<SynthStream> {
    config.validate()?;
    let truth = coefficients(config);
    let d = config.feature_dim;
    let n = config.n_instruments;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let direction = unit(gaussian(&mut rng, d));
    let ids: Vec<String> = (0..n).map(|i| format!("i{i:03}")).collect();

    let mut slices = Vec::with_capacity(config.n_dates);
    for (t, w) in truth.iter().enumerate() {
        let shift = config.covariate_drift * t as f64;
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = direction
                .iter()
                .map(|c| shift * c + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let signal: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
            let eps: f64 = rng.sample(StandardNormal);
            y.push(signal + config.noise_std * eps);
            x.extend(row);
        }
        slices.push(DateSlice::new(
            t,
            DateKey::Int(t as i64),
            ids.clone(),
            Tensor::new(vec![n, d], x)?,
            y,
        )?);
    }
    let names = (0..d).map(|j| format!("f{j}")).collect();
    Ok(SynthStream {
        dataset: StreamDataset::new(slices, names)?,
        truth,
        config: config.clone(),
    })
}

impl SynthStream {
    /// IC of the true linear signal on one date.
    pub fn oracle_ic(&self, date_index: usize) -> Result<Option<f64>> {
        let s = self
            .dataset
            .slice(date_index)
            .ok_or_else(|| Error::Data(format!("date index {date_index} out of range")))?;
        let w = &self.truth[date_index];
        let pred: Vec<f64> = (0..s.len())
            .map(|i| s.features().row(i).iter().zip(w).map(|(a, b)| a * b).sum())
            .collect();
        ic_per_date(&pred, s.labels())
    }
}

/// Mean oracle IC over each task's test window: an upper envelope for any
/// learner that sees only the features.
pub fn oracle_best_ic(stream: &SynthStream, schedule: &TaskSchedule) -> Result<Vec<Option<f64>>> {
    schedule
        .tasks
        .iter()
        .map(|task| {
            let ics = task
                .test
                .clone()
                .map(|t| stream.oracle_ic(t))
                .collect::<Result<Vec<_>>>()?;
            Ok(summarize(&ics).ok().map(|s| s.mean))
        })
        .collect()
}
