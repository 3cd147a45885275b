//! Cross-sectional streams: per-date slices, normalization and the rolling
//! task schedule.

mod io;
mod normalize;
mod schedule;

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{Error, Result};

pub use io::{label_from_prices, load_csv, read_csv, write_csv, CsvSchema};
pub use normalize::{normalize, FeatureMoments};
pub use schedule::{build_schedule, Split, TaskSchedule, TaskWindow};

/// Non-fatal condition raised while preparing data. Every warning is also
/// emitted on the log as a single `warning kind=... detail=...` line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Warning {
    pub kind: String,
    pub detail: String,
}

impl Warning {
    pub fn emit(kind: &str, detail: impl Into<String>) -> Self {
        let w = Self {
            kind: kind.to_string(),
            detail: detail.into(),
        };
        log::warn!("{w}");
        w
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "warning kind={} detail={:?}", self.kind, self.detail)
    }
}

/// Calendar key of a date as found in the input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DateKey {
    Int(i64),
    Day(NaiveDate),
}

impl DateKey {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Ok(v) = s.parse::<i64>() {
            return Some(Self::Int(v));
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(Self::Day)
    }

    fn same_kind(&self, other: &Self) -> bool {
        matches!((self, other), (Self::Int(_), Self::Int(_)) | (Self::Day(_), Self::Day(_)))
    }
}

impl PartialOrd for DateKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Self::Int(a), Self::Int(b)) => Some(a.cmp(b)),
            (Self::Day(a), Self::Day(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }
}

impl fmt::Display for DateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Int(v) => write!(f, "{v}"),
            Self::Day(d) => write!(f, "{}", d.format("%Y-%m-%d")),
        }
    }
}

/// Borrowed view of one (date, instrument) observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<'a> {
    pub date_index: usize,
    pub instrument: &'a str,
    pub features: &'a [f64],
    pub label: f64,
}

/// All observations of one date, stored column-wise: `features` is `[S, D]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DateSlice {
    date_index: usize,
    date: DateKey,
    instruments: Vec<String>,
    features: Tensor<f64>,
    labels: Vec<f64>,
}

impl DateSlice {
    pub fn new(
        date_index: usize,
        date: DateKey,
        instruments: Vec<String>,
        features: Tensor<f64>,
        labels: Vec<f64>,
    ) -> Result<Self> {
        if instruments.is_empty() {
            return Err(Error::Data(format!("date {date} has no samples")));
        }
        if features.shape().len() != 2 || features.rows() != instruments.len() {
            return Err(Error::dims(
                "date slice features",
                features.shape(),
                &[instruments.len(), features.cols()],
            ));
        }
        if labels.len() != instruments.len() {
            return Err(Error::dims("date slice labels", &[labels.len()], &[instruments.len()]));
        }
        let mut seen = HashSet::with_capacity(instruments.len());
        if let Some(dup) = instruments.iter().find(|i| !seen.insert(i.as_str())) {
            return Err(Error::Data(format!("instrument {dup} repeated on date {date}")));
        }
        if let Some(i) = labels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite label for {} on date {date}",
                instruments[i]
            )));
        }
        Ok(Self {
            date_index,
            date,
            instruments,
            features,
            labels,
        })
    }

    pub fn date_index(&self) -> usize {
        self.date_index
    }

    pub fn date(&self) -> &DateKey {
        &self.date
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn instruments(&self) -> &[String] {
        &self.instruments
    }

    pub fn features(&self) -> &Tensor<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample<'_>> {
        (0..self.len()).map(move |i| Sample {
            date_index: self.date_index,
            instrument: &self.instruments[i],
            features: self.features.row(i),
            label: self.labels[i],
        })
    }

    pub(crate) fn features_mut(&mut self) -> &mut Tensor<f64> {
        &mut self.features
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [f64] {
        &mut self.labels
    }

    pub(crate) fn set_date_index(&mut self, index: usize) {
        self.date_index = index;
    }
}

/// A stream of date slices with dense, strictly increasing date indices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamDataset {
    slices: Vec<DateSlice>,
    feature_dim: usize,
    feature_names: Vec<String>,
    moments: Option<FeatureMoments>,
    warnings: Vec<Warning>,
}

impl StreamDataset {
    /// Builds a dataset; slices are re-indexed densely in the given order,
    /// which must be strictly increasing by date.
    pub fn new(mut slices: Vec<DateSlice>, feature_names: Vec<String>) -> Result<Self> {
        let feature_dim = feature_names.len();
        if feature_dim == 0 {
            return Err(Error::Data("dataset needs at least one feature".into()));
        }
        for (i, s) in slices.iter_mut().enumerate() {
            if s.features.cols() != feature_dim {
                return Err(Error::dims(
                    format!("features on date {}", s.date),
                    &[s.features.cols()],
                    &[feature_dim],
                ));
            }
            s.set_date_index(i);
        }
        for w in slices.windows(2) {
            let ordered = w[0].date.same_kind(&w[1].date) && w[0].date < w[1].date;
            if !ordered {
                return Err(Error::Data(format!(
                    "dates must be strictly increasing: {} then {}",
                    w[0].date, w[1].date
                )));
            }
        }
        Ok(Self {
            slices,
            feature_dim,
            feature_names,
            moments: None,
            warnings: Vec::new(),
        })
    }

    pub fn slices(&self) -> &[DateSlice] {
        &self.slices
    }

    pub fn slice(&self, date_index: usize) -> Option<&DateSlice> {
        self.slices.get(date_index)
    }

    pub fn n_dates(&self) -> usize {
        self.slices.len()
    }

    pub fn n_samples(&self) -> usize {
        self.slices.iter().map(DateSlice::len).sum()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn moments(&self) -> Option<&FeatureMoments> {
        self.moments.as_ref()
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    /// Index of the last date whose key is `<= key`.
    pub fn resolve_date(&self, key: &DateKey) -> Result<usize> {
        let pos = self
            .slices
            .iter()
            .take_while(|s| s.date.same_kind(key) && s.date <= *key)
            .count();
        if pos == 0 {
            return Err(Error::Schedule(format!("date {key} precedes the first date of the stream")));
        }
        Ok(pos - 1)
    }

    /// Stacks the slices in `range` into one batch.
    pub fn stack(&self, range: std::ops::Range<usize>) -> Result<(Tensor<f64>, Vec<f64>)> {
        let slices = self
            .slices
            .get(range.clone())
            .ok_or_else(|| Error::Schedule(format!("date range {range:?} is out of bounds")))?;
        let rows: usize = slices.iter().map(DateSlice::len).sum();
        let mut data = Vec::with_capacity(rows * self.feature_dim);
        let mut labels = Vec::with_capacity(rows);
        for s in slices {
            data.extend_from_slice(s.features.data());
            labels.extend_from_slice(&s.labels);
        }
        Ok((Tensor::new(vec![rows, self.feature_dim], data)?, labels))
    }

    pub(crate) fn slices_mut(&mut self) -> &mut [DateSlice] {
        &mut self.slices
    }

    pub(crate) fn set_moments(&mut self, moments: FeatureMoments) {
        self.moments = Some(moments);
    }

    pub(crate) fn push_warning(&mut self, w: Warning) {
        self.warnings.push(w);
    }
}

#[cfg(test)]
mod tests;
