//! Trip records to per-zone counts on a regular time grid.
//!
//! Input is a two-column CSV with a header row: pickup timestamp, pickup
//! zone id. Any richer export should be projected onto these two columns
//! first.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::{Duration, NaiveDateTime, NaiveTime};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::series::{parse_timestamp, SpatioTemporalSeries, TimeAxis};

const MINUTES_PER_DAY: u32 = 24 * 60;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripRecord {
    pub timestamp: NaiveDateTime,
    pub zone: String,
}

/// A line that could not be turned into a [`TripRecord`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedLine {
    /// 1-based line number in the file, header included.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct TripFile {
    pub records: Vec<TripRecord>,
    pub rejected: Vec<RejectedLine>,
}

/// Parses trips, skipping (and logging) malformed lines.
pub fn read_trips_from<R: Read>(reader: R) -> Result<TripFile> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = TripFile::default();
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.rejected.push(RejectedLine {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        let parsed = match (row.get(0), row.get(1), row.len()) {
            (Some(ts), Some(zone), 2) if !zone.is_empty() => parse_timestamp(ts)
                .map(|timestamp| TripRecord {
                    timestamp,
                    zone: zone.to_string(),
                })
                .ok_or_else(|| format!("unparseable timestamp `{ts}`")),
            (_, Some(""), _) => Err("empty zone id".to_string()),
            (_, _, n) => Err(format!("expected 2 fields, found {n}")),
        };
        match parsed {
            Ok(r) => out.records.push(r),
            Err(reason) => out.rejected.push(RejectedLine { line, reason }),
        }
    }
    for r in &out.rejected {
        log::warn!("trips line {}: {}", r.line, r.reason);
    }
    if !out.rejected.is_empty() {
        log::warn!("{} trip lines skipped", out.rejected.len());
    }
    Ok(out)
}

pub fn read_trips(path: &Path) -> Result<TripFile> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trips_from(file)
}

#[derive(Debug, Clone)]
pub struct Aggregation {
    pub series: SpatioTemporalSeries,
    /// Records falling outside the requested range.
    pub out_of_range: usize,
}

/// Counts records per zone in half-open bins `[start + b·interval,
/// start + (b+1)·interval)`. Zones are sorted lexicographically and every
/// bin in `range` gets a column, zero or not.
///
/// Without an explicit `range`, the grid spans whole days from midnight of
/// the earliest record to midnight after the latest one.
pub fn aggregate_trips(
    records: &[TripRecord],
    interval_minutes: u32,
    range: Option<(NaiveDateTime, NaiveDateTime)>,
) -> Result<Aggregation> {
    if interval_minutes == 0 || !MINUTES_PER_DAY.is_multiple_of(interval_minutes) {
        return Err(Error::InvalidInterval(interval_minutes));
    }
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let step = Duration::minutes(i64::from(interval_minutes));
    let (start, end) = match range {
        Some(r) => r,
        None => {
            let first = records
                .iter()
                .map(|r| r.timestamp)
                .min()
                .unwrap_or_default();
            let last = records
                .iter()
                .map(|r| r.timestamp)
                .max()
                .unwrap_or_default();
            (
                first.date().and_time(NaiveTime::MIN),
                last.date().and_time(NaiveTime::MIN) + Duration::days(1),
            )
        }
    };
    let span = end - start;
    if span <= Duration::zero() || span.num_seconds() % step.num_seconds() != 0 {
        return Err(Error::InvalidConfig(format!(
            "time range {start} .. {end} is not a positive multiple of {interval_minutes} minutes"
        )));
    }
    let bins = (span.num_seconds() / step.num_seconds()) as usize;

    let mut counts: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut out_of_range = 0;
    for r in records {
        if r.timestamp < start || r.timestamp >= end {
            out_of_range += 1;
            continue;
        }
        let b = ((r.timestamp - start).num_seconds() / step.num_seconds()) as usize;
        counts
            .entry(r.zone.as_str())
            .or_insert_with(|| vec![0.0; bins])[b] += 1.0;
    }
    if counts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let zones: Vec<String> = counts.keys().map(|z| z.to_string()).collect();
    let values = DMatrix::from_fn(zones.len(), bins, |i, b| counts[zones[i].as_str()][b]);
    let series = SpatioTemporalSeries::new(
        zones,
        TimeAxis::Timestamp {
            start,
            step_minutes: i64::from(interval_minutes),
        },
        values,
    )?;
    Ok(Aggregation {
        series,
        out_of_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PortableRng;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn rec(t: &str, z: &str) -> TripRecord {
        TripRecord {
            timestamp: ts(t),
            zone: z.into(),
        }
    }

    #[test]
    fn three_records_one_cell() {
        let r = vec![
            rec("2024-01-01T00:01:00", "10001"),
            rec("2024-01-01T00:07:00", "10001"),
            rec("2024-01-01T00:14:59", "10001"),
        ];
        let a = aggregate_trips(&r, 15, None).unwrap();
        assert_eq!(a.series.value(0, 0), 3.0);
        assert_eq!(a.series.values().sum(), 3.0);
    }

    #[test]
    fn boundary_goes_to_later_bin() {
        let r = vec![rec("2024-01-01T00:15:00", "a")];
        let a = aggregate_trips(&r, 15, None).unwrap();
        assert_eq!(a.series.value(0, 0), 0.0);
        assert_eq!(a.series.value(0, 1), 1.0);
    }

    #[test]
    fn one_day_has_96_bins() {
        let r = vec![rec("2024-03-05T12:00:00", "z")];
        let a = aggregate_trips(&r, 15, None).unwrap();
        assert_eq!(a.series.len(), 96);
        assert_eq!(a.series.times().label(0), "2024-03-05T00:00:00");
        assert_eq!(aggregate_trips(&r, 60, None).unwrap().series.len(), 24);
    }

    #[test]
    fn intervals_must_divide_a_day() {
        let r = vec![rec("2024-03-05T12:00:00", "z")];
        assert!(matches!(
            aggregate_trips(&r, 7, None),
            Err(Error::InvalidInterval(7))
        ));
        assert!(matches!(
            aggregate_trips(&r, 0, None),
            Err(Error::InvalidInterval(0))
        ));
        assert!(matches!(
            aggregate_trips(&[], 15, None),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn zones_sorted_and_total_preserved() {
        let mut rng = PortableRng::new(5);
        let zones = ["b", "a", "c10", "c2"];
        let base = ts("2024-01-01T00:00:00");
        let records: Vec<TripRecord> = (0..2000)
            .map(|_| TripRecord {
                timestamp: base + Duration::seconds(rng.below(2 * 86_400) as i64),
                zone: zones[rng.below(4)].to_string(),
            })
            .collect();
        let a = aggregate_trips(&records, 30, None).unwrap();
        assert_eq!(a.series.locations(), &["a", "b", "c10", "c2"]);
        assert_eq!(a.series.len(), 96);
        assert_eq!(a.series.values().sum(), 2000.0);
        // independent recount of one cell
        let expect = records
            .iter()
            .filter(|r| {
                r.zone == "c2"
                    && r.timestamp >= base + Duration::minutes(30 * 50)
                    && r.timestamp < base + Duration::minutes(30 * 51)
            })
            .count();
        assert_eq!(a.series.value(3, 50), expect as f64);
    }

    #[test]
    fn explicit_range_counts_exclusions() {
        let r = vec![
            rec("2024-01-01T00:00:00", "a"),
            rec("2024-01-01T02:00:00", "a"),
        ];
        let a = aggregate_trips(
            &r,
            60,
            Some((ts("2024-01-01T00:00:00"), ts("2024-01-01T02:00:00"))),
        )
        .unwrap();
        assert_eq!(a.series.len(), 2);
        assert_eq!(a.out_of_range, 1);
        assert!(aggregate_trips(
            &r,
            60,
            Some((ts("2024-01-01T00:00:00"), ts("2024-01-01T00:30:00")))
        )
        .is_err());
    }

    #[test]
    fn malformed_lines_are_reported_not_fatal() {
        let text = "timestamp,zone\n2024-01-01 00:01:00,a\nnot a time,a\n2024-01-01T00:02:00,\n2024-01-01T00:03,b\n";
        let f = read_trips_from(text.as_bytes()).unwrap();
        assert_eq!(f.records.len(), 2);
        let lines: Vec<u64> = f.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![3, 4]);
        let a = aggregate_trips(&f.records, 15, None).unwrap();
        assert_eq!(a.series.values().sum(), f.records.len() as f64);
    }
}
