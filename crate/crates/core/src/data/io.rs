use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DateKey, DateSlice, StreamDataset, Warning};
use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Column layout of an input file. Both layouts start with `date,instrument`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvSchema {
    /// Decide from the last header column (`label` or `price`).
    #[default]
    Auto,
    /// `date,instrument,f0,...,f{D-1},label`
    Labels,
    /// `date,instrument,[f0,...,]price`; labels are next-date change rates.
    Prices,
}

/// Next-date change rates `(p[t+1] − p[t]) / p[t]`; one shorter than the input.
pub fn label_from_prices(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(Error::Data(format!("need at least 2 prices, got {}", prices.len())));
    }
    if let Some((i, p)) = prices.iter().enumerate().find(|(_, p)| !(**p > 0.0 && p.is_finite())) {
        return Err(Error::Data(format!("price at position {i} must be positive, got {p}")));
    }
    Ok(prices.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect())
}

pub fn load_csv(path: impl AsRef<Path>, schema: CsvSchema) -> Result<StreamDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

struct Row {
    line: usize,
    date: DateKey,
    instrument: String,
    features: Vec<f64>,
    value: f64,
}

fn ingest(line: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        row: line,
        message: message.into(),
    }
}

/// Parses a stream from any reader. Lines starting with `#` are ignored;
/// reported row numbers are file line numbers.
pub fn read_csv<R: Read>(reader: R, schema: CsvSchema) -> Result<StreamDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let header_line = rdr.position().line().max(1) as usize;
    if header.len() < 3 || header.iter().all(String::is_empty) {
        return Err(ingest(header_line, "empty file or header with fewer than 3 columns"));
    }
    if header[0] != "date" || header[1] != "instrument" {
        return Err(ingest(header_line, "header must start with date,instrument"));
    }
    let last = header[header.len() - 1].as_str();
    let schema = match (schema, last) {
        (CsvSchema::Auto | CsvSchema::Labels, "label") => CsvSchema::Labels,
        (CsvSchema::Auto | CsvSchema::Prices, "price") => CsvSchema::Prices,
        (CsvSchema::Prices, _) => return Err(ingest(header_line, "missing column price")),
        _ => return Err(ingest(header_line, "missing column label")),
    };
    let feature_names: Vec<String> = header[2..header.len() - 1].to_vec();
    if schema == CsvSchema::Labels && feature_names.is_empty() {
        return Err(ingest(header_line, "no feature columns"));
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(ingest(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let date = DateKey::parse(&record[0])
            .ok_or_else(|| ingest(line, format!("unparseable date {:?}", &record[0])))?;
        let instrument = record[1].to_string();
        if instrument.is_empty() {
            return Err(ingest(line, "empty instrument"));
        }
        let mut values = Vec::with_capacity(header.len() - 2);
        for (j, cell) in record.iter().enumerate().skip(2) {
            let v: f64 = cell
                .parse()
                .map_err(|_| ingest(line, format!("non-numeric value {cell:?} in column {}", header[j])))?;
            if !v.is_finite() {
                return Err(ingest(line, format!("non-finite value in column {}", header[j])));
            }
            values.push(v);
        }
        let value = values.pop().unwrap_or_default();
        if !seen.insert((date.clone(), instrument.clone())) {
            return Err(ingest(line, format!("duplicate (date, instrument) pair ({date}, {instrument})")));
        }
        if let Some(first) = rows.first().map(|r: &Row| &r.date) {
            if !first.same_kind(&date) {
                return Err(ingest(line, "mixed integer and calendar dates"));
            }
        }
        rows.push(Row {
            line,
            date,
            instrument,
            features: values,
            value,
        });
    }
    if rows.is_empty() {
        return Err(ingest(header_line + 1, "file contains no data rows"));
    }
    rows.sort_by(|a, b| a.date.partial_cmp(&b.date).expect("dates share one kind"));

    match schema {
        CsvSchema::Prices => from_prices(rows, feature_names),
        _ => group(rows, feature_names),
    }
}

fn group(rows: Vec<Row>, feature_names: Vec<String>) -> Result<StreamDataset> {
    let dim = feature_names.len();
    let mut slices = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let end = start + rows[start..].iter().take_while(|r| r.date == rows[start].date).count();
        let chunk = &rows[start..end];
        let mut data = Vec::with_capacity(chunk.len() * dim);
        for r in chunk {
            data.extend_from_slice(&r.features);
        }
        slices.push(DateSlice::new(
            slices.len(),
            chunk[0].date.clone(),
            chunk.iter().map(|r| r.instrument.clone()).collect(),
            Tensor::new(vec![chunk.len(), dim], data)?,
            chunk.iter().map(|r| r.value).collect(),
        )?);
        start = end;
    }
    StreamDataset::new(slices, feature_names)
}

/// Converts price rows to labeled rows. A sample is kept when the same
/// instrument is also observed on the next date. Without feature columns,
/// the single feature is the change rate into the current date.
fn from_prices(rows: Vec<Row>, mut feature_names: Vec<String>) -> Result<StreamDataset> {
    if let Some(r) = rows.iter().find(|r| r.value <= 0.0) {
        return Err(Error::Data(format!("nonpositive price {} at row {}", r.value, r.line)));
    }
    let mut dates: Vec<DateKey> = Vec::new();
    for r in &rows {
        if dates.last() != Some(&r.date) {
            dates.push(r.date.clone());
        }
    }
    let mut date_pos = HashMap::new();
    for (i, d) in dates.iter().enumerate() {
        date_pos.insert(d.clone(), i);
    }
    let prices: HashMap<(usize, &str), f64> = rows
        .iter()
        .map(|r| ((date_pos[&r.date], r.instrument.as_str()), r.value))
        .collect();
    let lagged = feature_names.is_empty();
    if lagged {
        feature_names.push("ret1".to_string());
    }

    let mut kept = Vec::new();
    let mut dropped = 0usize;
    for r in &rows {
        let t = date_pos[&r.date];
        let Some(&next) = prices.get(&(t + 1, r.instrument.as_str())) else {
            dropped += 1;
            continue;
        };
        let features = if lagged {
            match t.checked_sub(1).and_then(|p| prices.get(&(p, r.instrument.as_str()))) {
                Some(&prev) => label_from_prices(&[prev, r.value])?,
                None => {
                    dropped += 1;
                    continue;
                }
            }
        } else {
            r.features.clone()
        };
        let label = label_from_prices(&[r.value, next])?[0];
        kept.push(Row {
            line: r.line,
            date: r.date.clone(),
            instrument: r.instrument.clone(),
            features,
            value: label,
        });
    }
    if kept.is_empty() {
        return Err(Error::Data("price file yields no labeled samples".into()));
    }
    let mut ds = group(kept, feature_names)?;
    if dropped > 0 {
        ds.push_warning(Warning::emit(
            "unlabeled_rows",
            format!("{dropped} price rows without a next-date (or previous-date) price were dropped"),
        ));
    }
    Ok(ds)
}

/// Writes the stream in the labeled layout, optionally preceded by `#`
/// comment lines.
pub fn write_csv<W: Write>(ds: &StreamDataset, writer: W, comments: &[String]) -> Result<()> {
    let mut writer = writer;
    for c in comments {
        writeln!(writer, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string(), "instrument".to_string()];
    header.extend(ds.feature_names().iter().cloned());
    header.push("label".to_string());
    w.write_record(&header)?;
    for s in ds.slices() {
        let date = s.date().to_string();
        for sample in s.samples() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(date.clone());
            rec.push(sample.instrument.to_string());
            rec.extend(sample.features.iter().map(|v| v.to_string()));
            rec.push(sample.label.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
