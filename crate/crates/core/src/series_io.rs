//! Dataset ingestion, train/test splitting and forecast serialization.
//!
//! Datasets are JSON Lines, one series per line:
//!
//! ```text
//! {"id":"a","freq":"D","start":0,"target":[1.0,null,3.0]}
//! ```
//!
//! `null` marks a missing observation. In memory a missing value is `None`,
//! so it can never leak into arithmetic as a NaN.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::QuantileForecast;

/// One observation; `None` is the missing marker.
pub type Obs = Option<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub id: String,
    #[serde(rename = "freq")]
    pub frequency: String,
    /// Period index of the first observation.
    pub start: i64,
    #[serde(rename = "target")]
    pub values: Vec<Obs>,
}

impl TimeSeries {
    pub fn new(
        id: impl Into<String>,
        frequency: impl Into<String>,
        start: i64,
        values: Vec<Obs>,
    ) -> Result<Self> {
        let ts = TimeSeries {
            id: id.into(),
            frequency: frequency.into(),
            start,
            values,
        };
        ts.validate()?;
        Ok(ts)
    }

    /// Convenience constructor for a fully observed series.
    pub fn from_values(id: impl Into<String>, values: &[f64]) -> Result<Self> {
        Self::new(id, "", 0, values.iter().copied().map(Some).collect())
    }

    fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Validation(format!("series '{}' is empty", self.id)));
        }
        if self.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "series '{}' contains a non-finite value",
                self.id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(Option::is_none)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub series: Vec<TimeSeries>,
    pub prediction_length: usize,
    pub seasonality: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        series: Vec<TimeSeries>,
        prediction_length: usize,
        seasonality: usize,
    ) -> Result<Self> {
        if prediction_length == 0 {
            return Err(Error::Validation("prediction_length must be at least 1".into()));
        }
        if seasonality == 0 {
            return Err(Error::Validation("seasonality must be at least 1".into()));
        }
        for ts in &series {
            ts.validate()?;
            if ts.len() <= prediction_length {
                return Err(Error::Validation(format!(
                    "series '{}' has length {} but needs more than prediction_length {}",
                    ts.id,
                    ts.len(),
                    prediction_length
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            series,
            prediction_length,
            seasonality,
        })
    }
}

#[derive(Deserialize)]
struct Record {
    id: String,
    freq: String,
    start: i64,
    target: Vec<Obs>,
}

/// Parses JSON Lines records; blank lines are skipped. `origin` names the
/// source in parse errors.
pub fn parse_series<R: BufRead>(reader: R, origin: &str) -> Result<Vec<TimeSeries>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(TimeSeries::new(rec.id, rec.freq, rec.start, rec.target)?);
    }
    Ok(out)
}

/// Loads a JSON Lines dataset. The dataset is named after the file stem.
pub fn load_dataset(
    path: impl AsRef<Path>,
    prediction_length: usize,
    seasonality: usize,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let series = parse_series(BufReader::new(file), &path.display().to_string())?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Dataset::new(name, series, prediction_length, seasonality)
}

/// A series with its last `prediction_length` observations held out.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSeries {
    pub context: TimeSeries,
    pub target: Vec<Obs>,
}

pub fn split_context_target(dataset: &Dataset) -> Vec<SplitSeries> {
    let h = dataset.prediction_length;
    dataset
        .series
        .iter()
        .map(|ts| {
            let cut = ts.len() - h;
            SplitSeries {
                context: TimeSeries {
                    id: ts.id.clone(),
                    frequency: ts.frequency.clone(),
                    start: ts.start,
                    values: ts.values[..cut].to_vec(),
                },
                target: ts.values[cut..].to_vec(),
            }
        })
        .collect()
}

/// Writes `contents` to `path` through a temporary sibling file and a rename,
/// so readers never observe a truncated file.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn level_label(level: f64) -> String {
    format!("q{}", level)
}

/// Renders quantile forecasts as CSV: `item_id,step,q<level>...,mean`, one
/// row per series and horizon step, steps numbered from 1.
pub fn forecasts_to_csv(forecasts: &[QuantileForecast], default_levels: &[f64]) -> Result<String> {
    let levels = forecasts
        .first()
        .map(|f| f.levels.as_slice())
        .unwrap_or(default_levels);
    for f in forecasts {
        if f.levels != levels {
            return Err(Error::Validation(format!(
                "forecast '{}' uses a different quantile level set",
                f.item_id
            )));
        }
    }
    let mut out = String::from("item_id,step");
    for &l in levels {
        out.push(',');
        out.push_str(&level_label(l));
    }
    out.push_str(",mean\n");
    for f in forecasts {
        for step in 0..f.horizon() {
            out.push_str(&csv_field(&f.item_id));
            out.push_str(&format!(",{}", step + 1));
            for row in &f.values {
                // Display for f64 is the shortest representation that parses
                // back to the same bits.
                out.push_str(&format!(",{}", row[step]));
            }
            out.push_str(&format!(",{}\n", f.mean[step]));
        }
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_forecasts(
    path: impl AsRef<Path>,
    forecasts: &[QuantileForecast],
    default_levels: &[f64],
) -> Result<()> {
    let csv = forecasts_to_csv(forecasts, default_levels)?;
    write_atomic(path, csv.as_bytes())
}

/// Reads a forecast CSV written by [`write_forecasts`]. Series appear in file
/// order; rows of one series must be contiguous with steps 1..=H.
pub fn read_forecasts(path: impl AsRef<Path>) -> Result<Vec<QuantileForecast>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: origin.clone(),
        line,
        msg,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let n = headers.len();
    if n < 3 || &headers[0] != "item_id" || &headers[1] != "step" || &headers[n - 1] != "mean" {
        return Err(parse_err(1, "expected header item_id,step,q...,mean".into()));
    }
    let levels = (2..n - 1)
        .map(|i| {
            headers[i]
                .strip_prefix('q')
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| parse_err(1, format!("bad quantile column '{}'", &headers[i])))
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut out: Vec<QuantileForecast> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != n {
            return Err(parse_err(line, format!("expected {} fields, got {}", n, rec.len())));
        }
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("field {}: {}", j + 1, e)))
        };
        let id = &rec[0];
        let step: usize = rec[1]
            .parse()
            .map_err(|e| parse_err(line, format!("bad step: {}", e)))?;
        let new_series = out.last().is_none_or(|f| f.item_id != id);
        if new_series {
            out.push(QuantileForecast {
                item_id: id.to_string(),
                levels: levels.clone(),
                values: vec![Vec::new(); levels.len()],
                mean: Vec::new(),
            });
        }
        let f = out.last_mut().expect("pushed above");
        if step != f.mean.len() + 1 {
            return Err(parse_err(
                line,
                format!("series '{}' step {} out of order", id, step),
            ));
        }
        for (k, row) in f.values.iter_mut().enumerate() {
            row.push(num(k + 2)?);
        }
        f.mean.push(num(n - 1)?);
    }
    Ok(out)
}

/// Generic JSON Lines writer for the corpus, token and sidecar formats.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::Validation(e.to_string()))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// A generated training series as written by the `generate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub kind: String,
    pub target: Vec<Obs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CorpusLine {
    Bare(Vec<Obs>),
    Record { target: Vec<Obs> },
}

/// Reads training series from JSON Lines. Each line is either a bare array
/// or an object with a `target` array (generated corpora and datasets both
/// qualify).
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<Obs>>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: origin.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let values = match parsed {
            CorpusLine::Bare(v) => v,
            CorpusLine::Record { target } => target,
        };
        if values.is_empty() {
            return Err(Error::Validation(format!("{}:{}: empty series", origin, i + 1)));
        }
        out.push(values);
    }
    Ok(out)
}
