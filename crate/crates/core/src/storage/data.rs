//! Time-series files and the synthetic data generator.
//!
//! CSV layout is `timestamp,value` with ISO-8601 timestamps on a strict
//! 15-minute grid; any gap or disorder is rejected with its line number.
//! Fitted models round-trip through a versioned JSON document.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use chrono::{Datelike, NaiveDateTime, TimeDelta, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::models::{SeasonIndex, StochasticModels};
use crate::scalar::Scalar;

pub const STEP_SECONDS: i64 = 900;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected header 'timestamp,value', found '{found}'")]
    BadHeader { line: usize, found: String },
    #[error("line {line}: cannot parse timestamp '{found}'")]
    BadTimestamp { line: usize, found: String },
    #[error("line {line}: cannot parse value '{found}'")]
    BadValue { line: usize, found: String },
    #[error("line {line}: timestamp {found} breaks the 15-minute grid (expected {expected})")]
    Gap { line: usize, expected: String, found: String },
    #[error("unsupported model file schema version {0}")]
    SchemaVersion(u32),
    #[error("model file parse error: {0}")]
    Json(#[from] serde_json::Error),
}

/// A value series on the 15-minute grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<S: Scalar> {
    pub timestamps: Vec<NaiveDateTime>,
    pub values: Vec<S>,
}

impl<S: Scalar> TimeSeries<S> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn seasons(&self) -> Vec<SeasonIndex> {
        self.timestamps.iter().map(|t| season_index_of(*t)).collect()
    }
}

/// Hour-of-week (Monday midnight = 0) and month bucket of a timestamp.
pub fn season_index_of(ts: NaiveDateTime) -> SeasonIndex {
    let hour_of_week =
        ts.weekday().num_days_from_monday() as usize * 24 + ts.hour() as usize;
    SeasonIndex::new(hour_of_week, ts.month0() as usize)
}

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn read_timeseries_csv<S: Scalar>(path: &Path) -> Result<TimeSeries<S>, DataError> {
    let io_err = |source| DataError::Io { path: path.display().to_string(), source };
    let content = fs::read_to_string(path).map_err(io_err)?;
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "timestamp,value" => {}
        Some((i, header)) => {
            return Err(DataError::BadHeader { line: i + 1, found: header.to_string() })
        }
        None => return Err(DataError::BadHeader { line: 1, found: String::new() }),
    }
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (ts_str, value_str) = line
            .split_once(',')
            .ok_or_else(|| DataError::BadValue { line: line_no, found: line.to_string() })?;
        let ts = NaiveDateTime::parse_from_str(ts_str.trim(), TS_FORMAT)
            .map_err(|_| DataError::BadTimestamp { line: line_no, found: ts_str.to_string() })?;
        if let Some(prev) = timestamps.last() {
            let expected = *prev + TimeDelta::seconds(STEP_SECONDS);
            if ts != expected {
                return Err(DataError::Gap {
                    line: line_no,
                    expected: expected.format(TS_FORMAT).to_string(),
                    found: ts.format(TS_FORMAT).to_string(),
                });
            }
        }
        let value: f64 = value_str
            .trim()
            .parse()
            .map_err(|_| DataError::BadValue { line: line_no, found: value_str.to_string() })?;
        timestamps.push(ts);
        values.push(S::of(value));
    }
    Ok(TimeSeries { timestamps, values })
}

pub fn write_timeseries_csv<S: Scalar>(
    path: &Path,
    series: &TimeSeries<S>,
) -> Result<(), DataError> {
    let io_err = |source| DataError::Io { path: path.display().to_string(), source };
    let mut out = String::from("timestamp,value\n");
    for (ts, v) in series.timestamps.iter().zip(&series.values) {
        out.push_str(&format!("{},{}\n", ts.format(TS_FORMAT), v.to_f64x()));
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(out.as_bytes()).map_err(io_err)?;
    Ok(())
}

/// Jointly simulated wind-speed (m/s), price ($/MWh) and load (MWh) series.
#[derive(Debug, Clone)]
pub struct SyntheticDataset<S: Scalar> {
    pub wind_speed: TimeSeries<S>,
    pub price: TimeSeries<S>,
    pub load: TimeSeries<S>,
}

/// Simulates the three models jointly on the 15-minute grid starting from
/// `start`. Deterministic in the seed; `n_steps = 0` yields header-only
/// files when written.
pub fn generate_synthetic_dataset<S: Scalar>(
    models: &StochasticModels<S>,
    n_steps: usize,
    seed: u64,
    start: NaiveDateTime,
) -> SyntheticDataset<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step_seconds = S::of(STEP_SECONDS as f64);
    let mut timestamps = Vec::with_capacity(n_steps);
    let mut wind = Vec::with_capacity(n_steps);
    let mut price = Vec::with_capacity(n_steps);
    let mut load = Vec::with_capacity(n_steps);

    let mut wind_y = S::zero();
    let mut price_y = models.price.long_run_level;
    let mut demand_resid = S::zero();
    for i in 0..n_steps {
        let ts = start + TimeDelta::seconds(STEP_SECONDS * i as i64);
        let season = season_index_of(ts);
        let (wy, speed, _) = models.wind.step(wind_y, step_seconds, &mut rng);
        wind_y = wy;
        let (py, p) = models.price.step(price_y, step_seconds, &season, &mut rng);
        price_y = py;
        let (dr, d) = models.demand.step(demand_resid, &season, &mut rng);
        demand_resid = dr;
        timestamps.push(ts);
        wind.push(speed);
        price.push(p);
        load.push(d);
    }
    SyntheticDataset {
        wind_speed: TimeSeries { timestamps: timestamps.clone(), values: wind },
        price: TimeSeries { timestamps: timestamps.clone(), values: price },
        load: TimeSeries { timestamps, values: load },
    }
}

impl<S: Scalar> SyntheticDataset<S> {
    /// Writes `wind.csv`, `price.csv` and `load.csv` under `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir)
            .map_err(|source| DataError::Io { path: dir.display().to_string(), source })?;
        write_timeseries_csv(&dir.join("wind.csv"), &self.wind_speed)?;
        write_timeseries_csv(&dir.join("price.csv"), &self.price)?;
        write_timeseries_csv(&dir.join("load.csv"), &self.load)?;
        Ok(())
    }
}

/// Versioned on-disk form of a fitted model set.
#[derive(Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct ModelFile<S: Scalar> {
    pub schema_version: u32,
    pub step_seconds: f64,
    pub models: StochasticModels<S>,
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

pub fn save_models<S: Scalar>(
    path: &Path,
    models: &StochasticModels<S>,
) -> Result<(), DataError> {
    let file = ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        step_seconds: STEP_SECONDS as f64,
        models: models.clone(),
    };
    let json = serde_json::to_string_pretty(&file)?;
    fs::write(path, json)
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

pub fn load_models<S: Scalar>(path: &Path) -> Result<StochasticModels<S>, DataError> {
    let content = fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    let file: ModelFile<S> = serde_json::from_str(&content)?;
    if file.schema_version != MODEL_SCHEMA_VERSION {
        return Err(DataError::SchemaVersion(file.schema_version));
    }
    Ok(file.models)
}
