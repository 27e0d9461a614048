//! Traffic series ingestion, SNMP counter conversion, summary statistics,
//! min-max scaling, supervised windowing and the synthetic traffic generator.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, Utc};

use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Seconds between SNMP polls.
pub const DEFAULT_INTERVAL: u32 = 300;
/// Samples per day at the default interval.
pub const DAILY_PERIOD: usize = 288;
/// Samples per week at the default interval.
pub const WEEKLY_PERIOD: usize = 2016;
/// Rates above this are flagged by [`counters_to_bps`].
pub const LINK_CAPACITY_BPS: f64 = 40e9;

/// Evenly spaced traffic rates in bits per second.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    /// Unix seconds of the first sample.
    pub start: i64,
    /// Seconds between samples.
    pub interval: u32,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(start: i64, interval: u32, values: Vec<f64>) -> Result<Self> {
        if interval == 0 {
            return Err(Error::invalid("sampling interval must be positive"));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {k} is not finite")));
        }
        if let Some(k) = values.iter().position(|&v| v < 0.0) {
            return Err(Error::invalid(format!("sample {k} is negative ({})", values[k])));
        }
        Ok(TimeSeries {
            start,
            interval,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, k: usize) -> i64 {
        self.start + k as i64 * self.interval as i64
    }

    /// Sub-series of samples `from..to` with the matching start time.
    pub fn slice(&self, from: usize, to: usize) -> TimeSeries {
        TimeSeries {
            start: self.timestamp(from),
            interval: self.interval,
            values: self.values[from..to].to_vec(),
        }
    }
}

/// Parses an ISO-8601/RFC 3339 timestamp or integer Unix seconds.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Some(secs);
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.timestamp())
}

/// Formats Unix seconds as `YYYY-MM-DDTHH:MM:SSZ`.
pub fn format_timestamp(secs: i64) -> String {
    match DateTime::<Utc>::from_timestamp(secs, 0) {
        Some(t) => t.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => secs.to_string(),
    }
}

/// Result of [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSeries {
    pub series: TimeSeries,
    /// Number of missing slots filled by linear interpolation.
    pub gaps_filled: usize,
}

/// Reads a `timestamp,bps` CSV sampled every `interval` seconds.
///
/// Missing slots are filled by linear interpolation and counted.
pub fn load_csv(path: impl AsRef<Path>, interval: u32) -> Result<LoadedSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, &path.display().to_string(), interval)
}

pub fn read_csv(reader: impl std::io::Read, name: &str, interval: u32) -> Result<LoadedSeries> {
    if interval == 0 {
        return Err(Error::invalid("sampling interval must be positive"));
    }
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: name.to_string(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.len() != 2 {
        return Err(parse_err(1, format!("expected header `timestamp,bps`, found {} column(s)", headers.len())));
    }

    let step = interval as i64;
    let mut start = None;
    let mut last_ts = 0i64;
    let mut values: Vec<f64> = Vec::new();
    let mut gaps_filled = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, found {}", record.len())));
        }
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| parse_err(line, format!("unparseable timestamp `{}`", &record[0])))?;
        let value: f64 = record[1]
            .parse()
            .map_err(|_| parse_err(line, format!("unparseable value `{}`", &record[1])))?;
        if !value.is_finite() {
            return Err(parse_err(line, "value is not finite".into()));
        }
        if value < 0.0 {
            return Err(parse_err(line, format!("negative traffic value {value}")));
        }
        match start {
            None => start = Some(ts),
            Some(_) => {
                let delta = ts - last_ts;
                if delta <= 0 {
                    return Err(parse_err(line, format!("timestamp {ts} does not increase (previous {last_ts})")));
                }
                if delta % step != 0 {
                    return Err(parse_err(
                        line,
                        format!("timestamp {ts} is off the {interval}s sampling grid"),
                    ));
                }
                let missing = (delta / step - 1) as usize;
                let prev = *values.last().expect("non-empty after first row");
                for m in 1..=missing {
                    let frac = m as f64 / (missing + 1) as f64;
                    values.push(prev + (value - prev) * frac);
                }
                gaps_filled += missing;
            }
        }
        last_ts = ts;
        values.push(value);
    }
    let start = start.ok_or(Error::Empty("load_csv"))?;
    Ok(LoadedSeries {
        series: TimeSeries::new(start, interval, values)?,
        gaps_filled,
    })
}

/// Writes `timestamp,bps` rows with ISO-8601 timestamps.
pub fn write_csv(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["timestamp", "bps"]).map_err(io)?;
    for (k, v) in series.values.iter().enumerate() {
        w.write_record([format_timestamp(series.timestamp(k)), format!("{v}")])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Traffic rates derived from octet counters.
#[derive(Debug, Clone, PartialEq)]
pub struct BpsConversion {
    pub series: TimeSeries,
    /// Indices of rates above [`LINK_CAPACITY_BPS`].
    pub over_capacity: Vec<usize>,
}

/// Converts successive 64-bit octet counter readings into bits per second.
///
/// A decreasing reading is treated as a counter wrap (`delta + 2^64`).
pub fn counters_to_bps(samples: &[u64], interval: u32, start: i64) -> Result<BpsConversion> {
    if samples.len() < 2 {
        return Err(Error::TooShort {
            required: 2,
            got: samples.len(),
        });
    }
    if interval == 0 {
        return Err(Error::invalid("sampling interval must be positive"));
    }
    let values: Vec<f64> = samples
        .windows(2)
        .map(|w| w[1].wrapping_sub(w[0]) as f64 * 8.0 / interval as f64)
        .collect();
    let over_capacity = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > LINK_CAPACITY_BPS)
        .map(|(k, _)| k)
        .collect();
    Ok(BpsConversion {
        series: TimeSeries::new(start, interval, values)?,
        over_capacity,
    })
}

/// Population moments of a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub var: f64,
    /// Fisher skewness `m3 / m2^(3/2)`; `None` when the series is constant.
    pub skewness: Option<f64>,
}

pub fn summary_stats(values: &[f64]) -> Result<SummaryStats> {
    if values.len() < 2 {
        return Err(Error::TooShort {
            required: 2,
            got: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m3) = values.iter().fold((0.0, 0.0), |(s2, s3), &v| {
        let d = v - mean;
        (s2 + d * d, s3 + d * d * d)
    });
    let var = m2 / n;
    let m3 = m3 / n;
    let std = var.sqrt();
    let skewness = if var > 0.0 { Some(m3 / var.powf(1.5)) } else { None };
    Ok(SummaryStats {
        mean,
        std,
        var,
        skewness,
    })
}

/// Min-max scaling fitted on training data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalerParams {
    pub min: f64,
    pub max: f64,
}

impl ScalerParams {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max <= min {
            return Err(Error::invalid(format!("scaler needs max > min (got min {min}, max {max})")));
        }
        Ok(ScalerParams { min, max })
    }

    pub fn scale_value(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn inverse_value(&self, x: f64) -> f64 {
        x * (self.max - self.min) + self.min
    }

    /// Values outside the fitted range map outside `[0, 1]`.
    pub fn scale(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.scale_value(x)).collect()
    }

    pub fn inverse(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.inverse_value(x)).collect()
    }
}

pub fn fit_scaler(train: &[f64]) -> Result<ScalerParams> {
    if train.is_empty() {
        return Err(Error::Empty("fit_scaler"));
    }
    let min = train.iter().copied().fold(f64::INFINITY, f64::min);
    let max = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Err(Error::invalid("cannot fit a scaler on a constant training series"));
    }
    ScalerParams::new(min, max)
}

pub fn scale(xs: &[f64], p: &ScalerParams) -> Vec<f64> {
    p.scale(xs)
}

pub fn inverse_scale(xs: &[f64], p: &ScalerParams) -> Vec<f64> {
    p.inverse(xs)
}

/// Supervised `(n_past → n_future)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub n_past: usize,
    pub n_future: usize,
}

impl WindowedDataset {
    pub fn empty(n_past: usize, n_future: usize) -> Self {
        WindowedDataset {
            inputs: Vec::new(),
            targets: Vec::new(),
            n_past,
            n_future,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Appends another dataset's windows. Windows never span the boundary
    /// between the two sources.
    pub fn extend(&mut self, other: WindowedDataset) -> Result<()> {
        if (other.n_past, other.n_future) != (self.n_past, self.n_future) {
            return Err(Error::shape(
                "WindowedDataset::extend",
                format!("{}→{}", self.n_past, self.n_future),
                format!("{}→{}", other.n_past, other.n_future),
            ));
        }
        self.inputs.extend(other.inputs);
        self.targets.extend(other.targets);
        Ok(())
    }

    /// Windows each series independently and concatenates the results.
    pub fn from_series<'a>(
        series: impl IntoIterator<Item = &'a [f64]>,
        n_past: usize,
        n_future: usize,
    ) -> Result<Self> {
        let mut out = WindowedDataset::empty(n_past, n_future);
        for s in series {
            out.extend(make_windows(s, n_past, n_future)?)?;
        }
        Ok(out)
    }
}

/// Stride-1 sliding windows; `len - n_past - n_future + 1` of them.
pub fn make_windows(series: &[f64], n_past: usize, n_future: usize) -> Result<WindowedDataset> {
    if n_past == 0 || n_future == 0 {
        return Err(Error::invalid("n_past and n_future must be >= 1"));
    }
    let span = n_past + n_future;
    if series.len() < span {
        return Err(Error::TooShort {
            required: span,
            got: series.len(),
        });
    }
    let count = series.len() - span + 1;
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for w in series.windows(span) {
        inputs.push(w[..n_past].to_vec());
        targets.push(w[n_past..].to_vec());
    }
    Ok(WindowedDataset {
        inputs,
        targets,
        n_past,
        n_future,
    })
}

/// Chronological split at `floor(ratio · len)`. Both sides must hold at
/// least `min_side` samples.
pub fn split(series: &TimeSeries, ratio: f64, min_side: usize) -> Result<(TimeSeries, TimeSeries)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let cut = (ratio * series.len() as f64).floor() as usize;
    let shortest = cut.min(series.len() - cut);
    if shortest < min_side {
        return Err(Error::TooShort {
            required: min_side,
            got: shortest,
        });
    }
    Ok((series.slice(0, cut), series.slice(cut, series.len())))
}

/// A series split, scaled with train-only statistics and windowed per side.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub scaler: ScalerParams,
    pub train: TimeSeries,
    pub test: TimeSeries,
    pub train_scaled: Vec<f64>,
    pub test_scaled: Vec<f64>,
    pub train_windows: WindowedDataset,
    pub test_windows: WindowedDataset,
}

/// Splits, fits the scaler on the training side only (unless `scaler` is
/// given), and windows each side separately.
pub fn prepare_split(
    series: &TimeSeries,
    ratio: f64,
    n_past: usize,
    n_future: usize,
    scaler: Option<ScalerParams>,
) -> Result<PreparedSplit> {
    let (train, test) = split(series, ratio, n_past + n_future)?;
    let scaler = match scaler {
        Some(s) => s,
        None => fit_scaler(&train.values)?,
    };
    let train_scaled = scaler.scale(&train.values);
    let test_scaled = scaler.scale(&test.values);
    let train_windows = make_windows(&train_scaled, n_past, n_future)?;
    let test_windows = make_windows(&test_scaled, n_past, n_future)?;
    Ok(PreparedSplit {
        scaler,
        train,
        test,
        train_scaled,
        test_scaled,
        train_windows,
        test_windows,
    })
}

/// Parameters of the synthetic traffic generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthProfile {
    pub base_bps: f64,
    pub daily_amp: f64,
    pub weekly_amp: f64,
    pub trend_per_day: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            base_bps: 5e8,
            daily_amp: 2e8,
            weekly_amp: 5e7,
            trend_per_day: 1e6,
            noise_std: 2e7,
            seed: 42,
        }
    }
}

/// `base + daily sinusoid (288 samples) + weekly sinusoid (2016 samples) +
/// linear trend + Gaussian noise`, starting at `start` with the default
/// 5-minute interval.
pub fn synth(profile: &SynthProfile, length: usize, start: i64) -> Result<TimeSeries> {
    if length == 0 {
        return Err(Error::invalid("synthetic series length must be >= 1"));
    }
    let p = profile;
    for (name, v) in [
        ("base_bps", p.base_bps),
        ("daily_amp", p.daily_amp),
        ("weekly_amp", p.weekly_amp),
        ("trend_per_day", p.trend_per_day),
        ("noise_std", p.noise_std),
    ] {
        if !v.is_finite() {
            return Err(Error::invalid(format!("{name} is not finite")));
        }
    }
    if p.noise_std < 0.0 {
        return Err(Error::invalid("noise_std must be >= 0"));
    }
    let mut rng = Rng::new(p.seed);
    let mut values = Vec::with_capacity(length);
    for k in 0..length {
        let t = k as f64;
        let mut v = p.base_bps
            + p.daily_amp * (2.0 * PI * t / DAILY_PERIOD as f64).sin()
            + p.weekly_amp * (2.0 * PI * t / WEEKLY_PERIOD as f64).sin()
            + p.trend_per_day * t / DAILY_PERIOD as f64;
        if p.noise_std > 0.0 {
            v += p.noise_std * rng.standard_normal();
        }
        if v < 0.0 {
            return Err(Error::invalid(format!(
                "profile yields negative traffic ({v:.3e} bps) at sample {k}"
            )));
        }
        values.push(v);
    }
    TimeSeries::new(start, DEFAULT_INTERVAL, values)
}
