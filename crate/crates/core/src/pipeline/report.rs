use std::io::Write;

use serde::Serialize;

use super::{EpochLog, RunReport};
use crate::data::Split;
use crate::error::Result;
use crate::eval::MetricsSummary;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::MetaTrain => "meta_train",
        Split::MetaValid => "meta_valid",
        Split::MetaTest => "meta_test",
    }
}

/// One row per online task. Wall time is kept out so the file is
/// reproducible; see [`write_timing_csv`].
pub fn write_report_csv<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "k",
        "split",
        "train_loss",
        "l_mse",
        "l_reg",
        "l_test",
        "l_test_at_phi",
        "adaptive_coef",
        "ic_mean",
        "rank_ic_mean",
        "n_predictions",
    ])?;
    for t in &report.tasks {
        w.write_record([
            t.k.to_string(),
            split_name(t.split).to_string(),
            t.train_loss.to_string(),
            t.losses.l_mse.to_string(),
            t.losses.l_reg.to_string(),
            t.losses.l_test.to_string(),
            opt(t.losses.l_test_at_phi),
            opt(t.adaptive_coef),
            opt(t.mean_ic()),
            opt(t.mean_rank_ic()),
            t.n_predictions().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing_csv<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "wall_time_ms"])?;
    for t in &report.tasks {
        w.write_record([t.k.to_string(), format!("{:.3}", t.wall_time.as_secs_f64() * 1e3)])?;
    }
    w.flush()?;
    Ok(())
}

/// Meta-test predictions.
pub fn write_predictions_csv<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "instrument", "prediction", "label"])?;
    for t in report.meta_test() {
        for d in &t.dates {
            let date = d.date.to_string();
            for ((inst, p), l) in d.instruments.iter().zip(&d.predictions).zip(&d.labels) {
                w.write_record([date.as_str(), inst, &p.to_string(), &l.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn metric_fields(m: Option<&MetricsSummary>) -> [String; 5] {
    match m {
        Some(m) => [
            m.ic_mean.to_string(),
            opt(m.icir),
            m.rank_ic_mean.to_string(),
            opt(m.rank_icir),
            m.n_dates.to_string(),
        ],
        None => Default::default(),
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[(String, Option<MetricsSummary>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stratum", "ic", "icir", "rank_ic", "rank_icir", "n_dates"])?;
    for (name, m) in rows {
        let mut rec = vec![name.clone()];
        rec.extend(metric_fields(m.as_ref()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_epochs_csv<W: Write>(epochs: &[EpochLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "valid_ic", "improved"])?;
    for e in epochs {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            opt(e.valid_ic),
            e.improved.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub stratum: String,
    pub metrics: Option<MetricsSummary>,
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "stratum", "ic", "icir", "rank_ic", "rank_icir", "n_dates"])?;
    for r in rows {
        let mut rec = vec![r.variant.clone(), r.stratum.clone()];
        rec.extend(metric_fields(r.metrics.as_ref()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
