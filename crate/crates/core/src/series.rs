//! Spatio-temporal observation matrices, standardization and the
//! per-location regression design.

use std::fs::File;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::NeighborhoodWeights;

const TIMESTAMP_FORMATS: &[&str] = &["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"];

pub(crate) fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Evenly spaced, strictly increasing time labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TimeAxis {
    Index {
        start: i64,
        step: i64,
    },
    Timestamp {
        start: NaiveDateTime,
        step_minutes: i64,
    },
}

impl TimeAxis {
    pub fn label(&self, t: usize) -> String {
        match self {
            TimeAxis::Index { start, step } => (start + step * t as i64).to_string(),
            TimeAxis::Timestamp {
                start,
                step_minutes,
            } => (*start + Duration::minutes(step_minutes * t as i64))
                .format("%Y-%m-%dT%H:%M:%S")
                .to_string(),
        }
    }
}

impl Default for TimeAxis {
    fn default() -> Self {
        TimeAxis::Index { start: 1, step: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatioTemporalSeries {
    locations: Vec<String>,
    times: TimeAxis,
    /// k x T, entry (i, t) = Y_i(t).
    values: DMatrix<f64>,
}

impl SpatioTemporalSeries {
    pub fn new(locations: Vec<String>, times: TimeAxis, values: DMatrix<f64>) -> Result<Self> {
        if locations.len() != values.nrows() {
            return Err(Error::DimensionMismatch {
                expected: locations.len(),
                got: values.nrows(),
            });
        }
        if values.ncols() == 0 {
            return Err(Error::InvalidSeries("no time points".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (i, t) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::InvalidSeries(format!(
                "non-finite value at location `{}`, time {}",
                locations[i],
                times.label(t)
            )));
        }
        let step_ok = match &times {
            TimeAxis::Index { step, .. } => *step > 0,
            TimeAxis::Timestamp { step_minutes, .. } => *step_minutes > 0,
        };
        if !step_ok {
            return Err(Error::InvalidSeries("time step must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = locations.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::InvalidSeries(format!("duplicate location `{dup}`")));
        }
        Ok(Self {
            locations,
            times,
            values,
        })
    }

    /// Series with integer time labels 1..=T.
    pub fn from_matrix(locations: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        Self::new(locations, TimeAxis::default(), values)
    }

    pub fn k(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn times(&self) -> &TimeAxis {
        &self.times
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn value(&self, i: usize, t: usize) -> f64 {
        self.values[(i, t)]
    }

    /// Y(t) as a vector over locations.
    pub fn at(&self, t: usize) -> DVector<f64> {
        self.values.column(t).into_owned()
    }

    /// Keeps the given location rows, in the given order.
    pub fn select_locations(&self, rows: &[usize]) -> Self {
        let values = self.values.select_rows(rows);
        Self {
            locations: rows.iter().map(|&r| self.locations[r].clone()).collect(),
            times: self.times.clone(),
            values,
        }
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    /// Reads the series CSV: a `time` column followed by one column per
    /// location. Time labels are integers or ISO timestamps.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "time" {
            return Err(Error::InvalidSeries(
                "header must be `time` followed by location ids".into(),
            ));
        }
        let locations: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let k = locations.len();
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != k + 1 {
                return Err(Error::InvalidSeries(format!(
                    "row {}: expected {} fields, got {}",
                    row + 2,
                    k + 1,
                    rec.len()
                )));
            }
            labels.push(rec[0].to_string());
            for cell in rec.iter().skip(1) {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::InvalidSeries(format!("row {}: bad number `{cell}`", row + 2))
                })?;
                data.push(v);
            }
        }
        if labels.is_empty() {
            return Err(Error::InvalidSeries("no data rows".into()));
        }
        let times = parse_time_axis(&labels)?;
        let t = labels.len();
        // data is time-major; transpose into k x T.
        let values = DMatrix::from_row_slice(t, k, &data).transpose();
        Self::new(locations, times, values)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(&mut file).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let mut text = String::from("time");
        for id in &self.locations {
            text.push(',');
            text.push_str(id);
        }
        text.push('\n');
        for t in 0..self.len() {
            text.push_str(&self.times.label(t));
            for i in 0..self.k() {
                text.push(',');
                text.push_str(&crate::fmt_f64(self.values[(i, t)]));
            }
            text.push('\n');
        }
        out.write_all(text.as_bytes())
    }
}

fn parse_time_axis(labels: &[String]) -> Result<TimeAxis> {
    if let Ok(ints) = labels
        .iter()
        .map(|l| l.parse::<i64>())
        .collect::<Result<Vec<_>, _>>()
    {
        let step = if ints.len() > 1 { ints[1] - ints[0] } else { 1 };
        if step <= 0 || ints.windows(2).any(|w| w[1] - w[0] != step) {
            return Err(Error::InvalidSeries(
                "integer time index must be strictly increasing and evenly spaced".into(),
            ));
        }
        return Ok(TimeAxis::Index {
            start: ints[0],
            step,
        });
    }
    let stamps = labels
        .iter()
        .map(|l| {
            parse_timestamp(l).ok_or_else(|| Error::InvalidSeries(format!("bad time label `{l}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let step = if stamps.len() > 1 {
        (stamps[1] - stamps[0]).num_minutes()
    } else {
        1
    };
    if step <= 0
        || stamps
            .windows(2)
            .any(|w| w[1] - w[0] != Duration::minutes(step))
    {
        return Err(Error::InvalidSeries(
            "timestamps must be strictly increasing and evenly spaced in whole minutes".into(),
        ));
    }
    Ok(TimeAxis::Timestamp {
        start: stamps[0],
        step_minutes: step,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    pub fn apply(&self, series: &SpatioTemporalSeries) -> SpatioTemporalSeries {
        let mut values = series.values.clone();
        for (i, mut row) in values.row_iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v = (*v - self.mean[i]) / self.std[i];
            }
        }
        SpatioTemporalSeries {
            locations: series.locations.clone(),
            times: series.times.clone(),
            values,
        }
    }

    /// Maps a standardized value at location `i` back to the original scale.
    pub fn restore(&self, i: usize, z: f64) -> f64 {
        z * self.std[i] + self.mean[i]
    }
}

/// Subtracts each location's sample mean and divides by its sample standard
/// deviation (n - 1 denominator), both computed over `stats_window` only.
pub fn standardize(
    series: &SpatioTemporalSeries,
    stats_window: Range<usize>,
) -> Result<(SpatioTemporalSeries, StandardizationStats)> {
    check_range(&stats_window, series.len())?;
    let n = stats_window.len();
    if n < 2 {
        return Err(Error::WindowTooShort { len: n, p: 1 });
    }
    let mut mean = Vec::with_capacity(series.k());
    let mut std = Vec::with_capacity(series.k());
    for i in 0..series.k() {
        let window = series
            .values
            .row(i)
            .columns_range(stats_window.clone())
            .into_owned();
        let m = window.iter().sum::<f64>() / n as f64;
        let var = window.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let s = var.sqrt();
        if !(s > 0.0) || s <= f64::EPSILON * m.abs() {
            return Err(Error::ConstantSeries(series.locations[i].clone()));
        }
        mean.push(m);
        std.push(s);
    }
    let stats = StandardizationStats { mean, std };
    Ok((stats.apply(series), stats))
}

/// Keeps locations with at least `min_nonzero` nonzero observations.
pub fn filter_active_locations(
    series: &SpatioTemporalSeries,
    min_nonzero: usize,
) -> Result<SpatioTemporalSeries> {
    let keep: Vec<usize> = (0..series.k())
        .filter(|&i| series.values.row(i).iter().filter(|&&v| v != 0.0).count() >= min_nonzero)
        .collect();
    if keep.is_empty() {
        return Err(Error::AllFiltered { min_nonzero });
    }
    Ok(series.select_locations(&keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOrder {
    /// Maximum time lag.
    pub p: usize,
    /// Neighborhood levels per lag, level 0 included.
    pub eta: usize,
}

impl ModelOrder {
    pub fn new(p: usize, eta: usize) -> Result<Self> {
        if p == 0 || eta == 0 {
            return Err(Error::InvalidOrder(format!(
                "p and eta must be at least 1 (got p={p}, eta={eta})"
            )));
        }
        Ok(Self { p, eta })
    }

    /// Coefficients per location.
    pub fn n_coef(&self) -> usize {
        self.p * self.eta
    }

    /// Position of coefficient (lag `j`, level `l`) with `j` 1-based and `l`
    /// 0-based, in lag-major order.
    pub fn position(&self, j: usize, l: usize) -> usize {
        (j - 1) * self.eta + l
    }

    /// Inverse of [`ModelOrder::position`].
    pub fn lag_level(&self, q: usize) -> (usize, usize) {
        (q / self.eta + 1, q % self.eta)
    }
}

/// Regression problem `y = Z Φ_i + ε` for one location.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPair {
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub location: usize,
    /// Times covered by the rows of `z` and `y`.
    pub rows: Range<usize>,
}

pub(crate) fn check_range(range: &Range<usize>, len: usize) -> Result<()> {
    if range.start > range.end || range.end > len {
        return Err(Error::InvalidSplit(format!(
            "range {}..{} outside series of length {len}",
            range.start, range.end
        )));
    }
    Ok(())
}

/// Builds `(Z_i, y_i)` over `fit_range`. Row `r` corresponds to time
/// `t = fit_range.start + p + r`; column `(j-1)·η + l` holds `W_i^(l) Y(t-j)`.
/// Only values inside `fit_range` are read.
pub fn build_design(
    series: &SpatioTemporalSeries,
    weights: &NeighborhoodWeights,
    order: ModelOrder,
    i: usize,
    fit_range: Range<usize>,
) -> Result<DesignPair> {
    check_range(&fit_range, series.len())?;
    let p = order.p;
    if fit_range.len() <= p {
        return Err(Error::WindowTooShort {
            len: fit_range.len(),
            p,
        });
    }
    if weights.eta() < order.eta {
        return Err(Error::InvalidOrder(format!(
            "weights provide {} levels, model needs {}",
            weights.eta(),
            order.eta
        )));
    }
    if weights.k() != series.k() {
        return Err(Error::DimensionMismatch {
            expected: series.k(),
            got: weights.k(),
        });
    }
    if i >= series.k() {
        return Err(Error::DimensionMismatch {
            expected: series.k(),
            got: i,
        });
    }
    let rows = (fit_range.start + p)..fit_range.end;
    let n = rows.len();
    let mut z = DMatrix::zeros(n, order.n_coef());
    let mut y = DVector::zeros(n);
    for (r, t) in rows.clone().enumerate() {
        y[r] = series.values[(i, t)];
        for j in 1..=p {
            let lagged = series.values.column(t - j);
            for l in 0..order.eta {
                z[(r, order.position(j, l))] = weights.level(l).row(i).dot(&lagged.transpose());
            }
        }
    }
    Ok(DesignPair {
        z,
        y,
        location: i,
        rows,
    })
}

/// Regressor vector `(W_i^(l) Y(t-j))` given the history `Y(t-1), .., Y(t-p)`
/// (most recent first).
pub(crate) fn regressors(
    weights: &NeighborhoodWeights,
    order: ModelOrder,
    i: usize,
    history: &[DVector<f64>],
) -> DVector<f64> {
    let mut x = DVector::zeros(order.n_coef());
    for j in 1..=order.p {
        let lagged = &history[j - 1];
        for l in 0..order.eta {
            x[order.position(j, l)] = weights.level(l).row(i).dot(&lagged.transpose());
        }
    }
    x
}
