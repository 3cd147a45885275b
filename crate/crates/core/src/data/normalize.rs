use serde::{Deserialize, Serialize};

use super::{DateSlice, StreamDataset, Warning};
use crate::error::{Error, Result};

/// Per-dimension feature moments estimated on the training range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMoments {
    pub mean: Vec<f64>,
    /// Population std; dimensions with zero spread are stored as 1.
    pub std: Vec<f64>,
    /// Last date index used for estimation.
    pub train_end: usize,
}

impl FeatureMoments {
    fn estimate(slices: &[DateSlice], dim: usize, train_end: usize) -> (Self, Vec<usize>) {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for s in &slices[..=train_end] {
            for row in 0..s.len() {
                n += 1;
                for (j, &v) in s.features().row(row).iter().enumerate() {
                    let delta = v - mean[j];
                    mean[j] += delta / n as f64;
                    m2[j] += delta * (v - mean[j]);
                }
            }
        }
        let mut flat = Vec::new();
        let std = m2
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let sd = (m / n as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    flat.push(j);
                    1.0
                }
            })
            .collect();
        (Self { mean, std, train_end }, flat)
    }

    /// Z-scores one feature row in place.
    pub fn apply(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// Z-scores features with moments of dates `<= train_end` and labels per
/// date with that date's cross-section (population std).
///
/// A dataset that already carries moments is returned unchanged, so
/// repeated calls are no-ops.
pub fn normalize(ds: &StreamDataset, train_end: usize) -> Result<StreamDataset> {
    if train_end >= ds.n_dates() {
        return Err(Error::Data(format!(
            "train end {train_end} is beyond the last date index {}",
            ds.n_dates().saturating_sub(1)
        )));
    }
    let mut out = ds.clone();
    if out.moments().is_some() {
        return Ok(out);
    }
    let (moments, flat) = FeatureMoments::estimate(out.slices(), out.feature_dim(), train_end);
    for j in flat {
        let name = out.feature_names()[j].clone();
        out.push_warning(Warning::emit(
            "zero_feature_std",
            format!("feature {name} is constant on the training range; centered only"),
        ));
    }
    for s in out.slices_mut() {
        let f = s.features_mut();
        for i in 0..f.rows() {
            moments.apply(f.row_mut(i));
        }
    }
    out.set_moments(moments);

    let mut warnings = Vec::new();
    for s in out.slices_mut() {
        let date = s.date().to_string();
        let labels = s.labels_mut();
        if labels.len() < 2 {
            warnings.push(Warning::emit(
                "single_sample_date",
                format!("date {date} has one sample; label left unnormalized"),
            ));
            continue;
        }
        let n = labels.len() as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let var = labels.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 {
            labels.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        } else {
            labels.iter_mut().for_each(|v| *v -= mean);
        }
    }
    for w in warnings {
        out.push_warning(w);
    }
    Ok(out)
}
