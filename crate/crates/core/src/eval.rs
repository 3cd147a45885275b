//! Cross-sectional ranking metrics and the shift-degree diagnostic.

use serde::Serialize;

use crate::engine::{mse, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::model_adapter::fine_tune;
use crate::models::ForecastModel;

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 || !(saa * sbb).is_finite() {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn check_pair(what: &str, predictions: &[f64], labels: &[f64]) -> Result<bool> {
    if predictions.len() != labels.len() {
        return Err(Error::dims(what, &[predictions.len()], &[labels.len()]));
    }
    if predictions.len() < 2 {
        log::warn!("warning kind=short_cross_section detail=\"{what} needs at least 2 samples\"");
        return Ok(false);
    }
    Ok(true)
}

fn null_with_warning(what: &str, v: Option<f64>) -> Option<f64> {
    if v.is_none() {
        log::warn!("warning kind=constant_cross_section detail=\"{what} undefined for a constant vector\"");
    }
    v
}

/// Pearson correlation of predictions and labels on one date; `None` when
/// either side is constant or fewer than two samples exist.
pub fn ic_per_date(predictions: &[f64], labels: &[f64]) -> Result<Option<f64>> {
    if !check_pair("ic", predictions, labels)? {
        return Ok(None);
    }
    Ok(null_with_warning("ic", pearson(predictions, labels)))
}

/// 1-based ranks with ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Spearman correlation with midranks for ties.
pub fn rank_ic_per_date(predictions: &[f64], labels: &[f64]) -> Result<Option<f64>> {
    if !check_pair("rank_ic", predictions, labels)? {
        return Ok(None);
    }
    Ok(null_with_warning(
        "rank_ic",
        pearson(&midranks(predictions), &midranks(labels)),
    ))
}

/// Mean, population std and information ratio of a per-date series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesStats {
    pub mean: f64,
    pub std: f64,
    /// `mean / std`; `None` when the series has no spread.
    pub ir: Option<f64>,
    pub n: usize,
}

/// Null entries are skipped; an all-null series is an error.
pub fn summarize(series: &[Option<f64>]) -> Result<SeriesStats> {
    let valid: Vec<f64> = series.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::Data("no valid dates to summarize".into()));
    }
    let n = valid.len() as f64;
    let mean = valid.iter().sum::<f64>() / n;
    let std = (valid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let scale = valid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ir = (std > 8.0 * f64::EPSILON * scale).then(|| mean / std);
    Ok(SeriesStats {
        mean,
        std,
        ir,
        n: valid.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub ic_mean: f64,
    pub icir: Option<f64>,
    pub rank_ic_mean: f64,
    pub rank_icir: Option<f64>,
    pub ic: Vec<Option<f64>>,
    pub rank_ic: Vec<Option<f64>>,
    /// Number of dates with a defined IC.
    pub n_dates: usize,
}

impl MetricsSummary {
    /// Metrics over `(predictions, labels)` pairs, one per date.
    pub fn from_dates<'a, I>(dates: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
    {
        let mut ic = Vec::new();
        let mut rank_ic = Vec::new();
        for (p, l) in dates {
            ic.push(ic_per_date(p, l)?);
            rank_ic.push(rank_ic_per_date(p, l)?);
        }
        let a = summarize(&ic)?;
        let b = summarize(&rank_ic)?;
        Ok(Self {
            ic_mean: a.mean,
            icir: a.ir,
            rank_ic_mean: b.mean,
            rank_icir: b.ir,
            ic,
            rank_ic,
            n_dates: a.n,
        })
    }
}

/// Naive incremental learner used to measure how much a task's shift hurts:
/// `ΔL = L(after update) − L(before update)` on the task's test window.
#[derive(Debug, Clone)]
pub struct ShiftProbe<'a, M: ?Sized> {
    pub model: &'a M,
    pub theta: ParamSet<f64>,
    pub eta: f64,
    pub steps: usize,
}

impl<M: ForecastModel<f64> + ?Sized> ShiftProbe<'_, M> {
    /// Measures `ΔL` for one task and carries the updated weights forward.
    pub fn shift_degree(
        &mut self,
        train_x: &Tensor<f64>,
        train_y: &[f64],
        test_x: &Tensor<f64>,
        test_y: &[f64],
    ) -> Result<f64> {
        let before = mse(&self.model.predict(&self.theta, test_x)?, test_y)?;
        let (theta, _) = fine_tune(self.model, &self.theta, train_x, train_y, self.eta, self.steps)?;
        let after = mse(&self.model.predict(&theta, test_x)?, test_y)?;
        self.theta = theta;
        Ok(after - before)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Gradual,
    Middle,
    Abrupt,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Gradual, Stratum::Middle, Stratum::Abrupt];

    pub fn name(self) -> &'static str {
        match self {
            Stratum::Gradual => "gradual",
            Stratum::Middle => "middle",
            Stratum::Abrupt => "abrupt",
        }
    }
}

/// Positions of the series split into the lowest quartile of `ΔL`
/// (gradual), the highest (abrupt) and the rest. Each set is sorted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftPartition {
    pub deltas: Vec<f64>,
    pub gradual: Vec<usize>,
    pub middle: Vec<usize>,
    pub abrupt: Vec<usize>,
}

impl ShiftPartition {
    pub fn stratum_of(&self, position: usize) -> Stratum {
        if self.gradual.binary_search(&position).is_ok() {
            Stratum::Gradual
        } else if self.abrupt.binary_search(&position).is_ok() {
            Stratum::Abrupt
        } else {
            Stratum::Middle
        }
    }

    pub fn members(&self, stratum: Stratum) -> &[usize] {
        match stratum {
            Stratum::Gradual => &self.gradual,
            Stratum::Middle => &self.middle,
            Stratum::Abrupt => &self.abrupt,
        }
    }
}

/// Ascending sort of `ΔL` with ties broken by position (earlier first).
pub fn partition_by_shift(deltas: &[f64]) -> ShiftPartition {
    let mut order: Vec<usize> = (0..deltas.len()).collect();
    order.sort_by(|&a, &b| deltas[a].total_cmp(&deltas[b]).then(a.cmp(&b)));
    let q = deltas.len() / 4;
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    ShiftPartition {
        deltas: deltas.to_vec(),
        gradual: sorted(&order[..q]),
        middle: sorted(&order[q..deltas.len() - q]),
        abrupt: sorted(&order[deltas.len() - q..]),
    }
}
