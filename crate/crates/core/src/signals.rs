//! Label and topic signals: per-camera time series of one label's weight or
//! one topic's share, resampled onto a regular grid.

use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::ImageLabelMatrix;
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::time::{day_start, format_utc, local_day, parse_utc};
use crate::topics::DocTopicAssignment;

/// Default resampling interval, five minutes.
pub const DEFAULT_INTERVAL_SECS: i64 = 300;
/// Gaps longer than this are interpolated across with a warning.
pub const GAP_WARNING_SECS: i64 = 30 * 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Label(usize),
    Topic(usize),
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalKind::Label(j) => write!(f, "label{j}"),
            SignalKind::Topic(z) => write!(f, "topic{z}"),
        }
    }
}

/// Unevenly sampled signal with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct IrregularSeries {
    pub camera_id: String,
    pub kind: SignalKind,
    points: Vec<(DateTime<Utc>, f64)>,
}

impl IrregularSeries {
    pub fn new(camera_id: impl Into<String>, kind: SignalKind, points: Vec<(DateTime<Utc>, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("series timestamps must be strictly increasing"));
        }
        if points.iter().any(|p| !p.1.is_finite()) {
            return Err(Error::invalid("series values must be finite"));
        }
        Ok(IrregularSeries {
            camera_id: camera_id.into(),
            kind,
            points,
        })
    }

    pub fn points(&self) -> &[(DateTime<Utc>, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Topic-`z` share of every image of one camera.
pub fn topic_signal(assignments: &[(DateTime<Utc>, DocTopicAssignment)], z: usize, camera: &str) -> Result<IrregularSeries> {
    let mut points = Vec::with_capacity(assignments.len());
    for (t, a) in assignments {
        let v = *a
            .theta
            .get(z)
            .ok_or_else(|| Error::invalid(format!("topic {z} out of range for K={}", a.theta.len())))?;
        points.push((*t, v.clamp(0.0, 1.0)));
    }
    IrregularSeries::new(camera, SignalKind::Topic(z), points)
}

/// Weight of label `j` in every row of a (possibly reweighted) image-label matrix.
pub fn label_signal(matrix: &ImageLabelMatrix, j: usize) -> Result<IrregularSeries> {
    if j >= matrix.dim() {
        return Err(Error::invalid(format!("label {j} out of range for M={}", matrix.dim())));
    }
    let points = matrix.rows().iter().map(|(t, b)| (*t, b.get(j))).collect();
    IrregularSeries::new(matrix.camera_id.clone(), SignalKind::Label(j), points)
}

/// Evenly sampled series with `channels` values per time step, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularSeries {
    pub start: DateTime<Utc>,
    interval_secs: i64,
    channels: usize,
    values: Vec<f64>,
}

impl RegularSeries {
    pub fn new(start: DateTime<Utc>, interval_secs: i64, channels: usize, values: Vec<f64>) -> Result<Self> {
        if interval_secs <= 0 {
            return Err(Error::invalid("sampling interval must be positive"));
        }
        if channels == 0 || values.is_empty() || !values.len().is_multiple_of(channels) {
            return Err(Error::invalid(format!(
                "{} values do not form a nonempty series of {channels} channels",
                values.len()
            )));
        }
        Ok(RegularSeries {
            start,
            interval_secs,
            channels,
            values,
        })
    }

    pub fn univariate(start: DateTime<Utc>, interval_secs: i64, values: Vec<f64>) -> Result<Self> {
        RegularSeries::new(start, interval_secs, 1, values)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn interval_secs(&self) -> i64 {
        self.interval_secs
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// All values, row-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values of time step `i`.
    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn time_at(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(self.interval_secs * i as i64)
    }

    /// Index of the grid point at `t`, if `t` lies exactly on the grid.
    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let off = (t - self.start).num_seconds();
        (off >= 0 && off % self.interval_secs == 0)
            .then(|| (off / self.interval_secs) as usize)
            .filter(|&i| i < self.len())
    }

    fn slice(&self, from: usize, to: usize) -> RegularSeries {
        RegularSeries {
            start: self.time_at(from),
            interval_secs: self.interval_secs,
            channels: self.channels,
            values: self.values[from * self.channels..to * self.channels].to_vec(),
        }
    }

    /// CSV with a `timestamp_utc` column followed by `value` (one channel) or
    /// `value_0..value_{m-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("timestamp_utc");
        if self.channels == 1 {
            out.push_str(",value");
        } else {
            for c in 0..self.channels {
                out.push_str(&format!(",value_{c}"));
            }
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format_utc(&self.time_at(i)));
            for v in self.at(i) {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Reads a series written by [`RegularSeries::write_csv`]. The interval is
    /// inferred from the first two rows; a single-row file needs `interval_hint`.
    pub fn read_csv(path: &Path, interval_hint: Option<i64>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let channels = reader.headers()?.len().saturating_sub(1);
        if channels == 0 {
            return Err(Error::invalid(format!("{}: no value columns", path.display())));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (n, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = n + 2;
            times.push(parse_utc(&rec[0]).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?);
            for field in rec.iter().skip(1) {
                values.push(field.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("bad value {field:?}: {e}"),
                })?);
            }
        }
        let start = *times
            .first()
            .ok_or_else(|| Error::invalid(format!("{}: empty series", path.display())))?;
        let interval = match times.get(1) {
            Some(t) => (*t - start).num_seconds(),
            None => interval_hint.ok_or_else(|| Error::invalid("single-row series needs an interval"))?,
        };
        let series = RegularSeries::new(start, interval, channels, values)?;
        for (i, t) in times.iter().enumerate() {
            if *t != series.time_at(i) {
                return Err(Error::Parse {
                    line: i + 2,
                    message: "timestamps are not evenly spaced".into(),
                });
            }
        }
        Ok(series)
    }
}

/// Where the resampling grid starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAlignment {
    /// At the first sample's timestamp.
    #[default]
    FirstSample,
    /// At the first multiple of the interval (since the Unix epoch) not before
    /// the first sample, so grids of different series line up with midnight.
    Clock,
}

/// Linear interpolation onto a regular grid within `[first, last]`.
pub fn resample_linear(series: &IrregularSeries, interval_secs: i64, align: GridAlignment) -> Result<RegularSeries> {
    if interval_secs <= 0 {
        return Err(Error::invalid("sampling interval must be positive"));
    }
    let pts = series.points();
    if pts.len() < 2 {
        return Err(Error::invalid(format!(
            "cannot interpolate a series of {} point(s)",
            pts.len()
        )));
    }
    for w in pts.windows(2) {
        let gap = (w[1].0 - w[0].0).num_seconds();
        if gap > GAP_WARNING_SECS {
            log::warn!(
                "{} {}: {} min gap after {}, interpolating across it",
                series.camera_id,
                series.kind,
                gap / 60,
                format_utc(&w[0].0)
            );
        }
    }
    let t0 = pts[0].0.timestamp();
    let t_end = pts[pts.len() - 1].0.timestamp();
    let g0 = match align {
        GridAlignment::FirstSample => t0,
        GridAlignment::Clock => t0.div_euclid(interval_secs) * interval_secs + if t0.rem_euclid(interval_secs) == 0 { 0 } else { interval_secs },
    };
    if g0 > t_end {
        return Err(Error::invalid("series is shorter than one grid interval"));
    }
    let n = ((t_end - g0) / interval_secs + 1) as usize;
    let mut values = Vec::with_capacity(n);
    let mut seg = 0usize;
    for i in 0..n {
        let t = g0 + interval_secs * i as i64;
        while seg + 2 < pts.len() && pts[seg + 1].0.timestamp() < t {
            seg += 1;
        }
        let (ta, va) = (pts[seg].0.timestamp(), pts[seg].1);
        let (tb, vb) = (pts[seg + 1].0.timestamp(), pts[seg + 1].1);
        let v = if t <= ta {
            va
        } else if t >= tb {
            vb
        } else {
            let f = (t - ta) as f64 / (tb - ta) as f64;
            va + f * (vb - va)
        };
        values.push(v);
    }
    let start = DateTime::from_timestamp(g0, 0).expect("in-range timestamp");
    RegularSeries::univariate(start, interval_secs, values)
}

/// Means of consecutive non-overlapping blocks of `factor` steps; a trailing
/// partial block is averaged over its own length.
pub fn downsample_mean(series: &RegularSeries, factor: usize) -> Result<RegularSeries> {
    if factor == 0 {
        return Err(Error::invalid("downsampling factor must be at least 1"));
    }
    let m = series.channels();
    let mut values = Vec::with_capacity(series.values().len() / factor + m);
    for block in series.values().chunks(factor * m) {
        let rows = block.len() / m;
        for c in 0..m {
            let s: f64 = block.iter().skip(c).step_by(m).sum();
            values.push(s / rows as f64);
        }
    }
    RegularSeries::new(series.start, series.interval_secs() * factor as i64, m, values)
}

/// Sliding length-`k` windows of a series, each flattened to one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsequenceSet {
    pub k: usize,
    /// Length of every vector, `channels * k`.
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl SubsequenceSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// The `N - k` subsequences `[x_i, ..., x_{i+k-1}]`, `i = 0..N-k`, stride one.
///
/// The window starting at `N - k` is not included.
pub fn subsequences(series: &RegularSeries, k: usize) -> Result<SubsequenceSet> {
    let n = series.len();
    if k == 0 {
        return Err(Error::invalid("subsequence length must be at least 1"));
    }
    if n <= k {
        return Err(Error::invalid(format!("series of length {n} has no subsequences of length {k}")));
    }
    let m = series.channels();
    let vectors = (0..n - k)
        .map(|i| series.values()[i * m..(i + k) * m].to_vec())
        .collect();
    Ok(SubsequenceSet { k, dim: m * k, vectors })
}

/// Consecutive non-overlapping windows of `window_secs`; a trailing partial
/// window is dropped.
pub fn window_partition(series: &RegularSeries, window_secs: i64) -> Result<Vec<RegularSeries>> {
    let step = series.interval_secs();
    if window_secs <= 0 || window_secs % step != 0 {
        return Err(Error::invalid(format!(
            "window of {window_secs}s is not a positive multiple of the {step}s interval"
        )));
    }
    let per = (window_secs / step) as usize;
    let count = series.len() / per;
    if count == 0 {
        return Err(Error::invalid("series is shorter than one window"));
    }
    Ok((0..count).map(|s| series.slice(s * per, (s + 1) * per)).collect())
}

/// Whole local days covered by the series: for each day whose every grid
/// point in `[midnight, next midnight)` is present, that day's sub-series.
pub fn day_windows(series: &RegularSeries, tz: &FixedOffset) -> Vec<(NaiveDate, RegularSeries)> {
    let step = series.interval_secs();
    let mut out = Vec::new();
    if series.is_empty() {
        return out;
    }
    let first = local_day(&series.start, tz);
    let last = local_day(&series.time_at(series.len() - 1), tz);
    let mut day = first;
    while day <= last {
        let lo = day_start(day, tz);
        let hi = day_start(day.succ_opt().expect("date in range"), tz);
        let from = ((lo - series.start).num_seconds() + step - 1).div_euclid(step);
        let to = ((hi - series.start).num_seconds() + step - 1).div_euclid(step);
        let expected = ((hi - lo).num_seconds() + step - 1) / step;
        if from >= 0 && to as usize <= series.len() && to - from == expected {
            out.push((day, series.slice(from as usize, to as usize)));
        }
        day = day.succ_opt().expect("date in range");
    }
    out
}

/// Writes an irregular series as `timestamp_utc,value`.
pub fn write_irregular_csv(series: &IrregularSeries, path: &Path) -> Result<()> {
    let mut out = String::from("timestamp_utc,value\n");
    for (t, v) in series.points() {
        out.push_str(&format!("{},{}\n", format_utc(t), fmt_f64(*v)));
    }
    std::fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn t(min: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap() + Duration::minutes(min)
    }

    fn irregular(points: &[(i64, f64)]) -> IrregularSeries {
        IrregularSeries::new("c", SignalKind::Topic(0), points.iter().map(|&(m, v)| (t(m), v)).collect()).unwrap()
    }

    fn regular(values: &[f64]) -> RegularSeries {
        RegularSeries::univariate(t(0), 300, values.to_vec()).unwrap()
    }

    #[test]
    fn uniform_theta_gives_constant_signal() {
        let a: Vec<_> = (0..5)
            .map(|i| (t(i * 3), DocTopicAssignment { theta: vec![0.25; 4] }))
            .collect();
        let s = topic_signal(&a, 2, "c").unwrap();
        assert!(s.points().iter().all(|p| p.1 == 0.25));
        assert_eq!(topic_signal(&a[..1], 0, "c").unwrap().len(), 1);
        assert!(topic_signal(&a, 4, "c").is_err());
    }

    #[test]
    fn resample_examples() {
        let s = resample_linear(&irregular(&[(0, 0.0), (10, 1.0)]), 300, GridAlignment::FirstSample).unwrap();
        assert_eq!(s.values(), &[0.0, 0.5, 1.0]);
        let s = resample_linear(&irregular(&[(0, 0.0), (30, 3.0)]), 300, GridAlignment::FirstSample).unwrap();
        assert_eq!(s.values(), &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
        let s = resample_linear(&irregular(&[(0, 4.0), (5, 1.0), (10, 7.0)]), 300, GridAlignment::FirstSample).unwrap();
        assert_eq!(s.values(), &[4.0, 1.0, 7.0]);
        assert!(resample_linear(&irregular(&[(0, 1.0)]), 300, GridAlignment::FirstSample).is_err());
    }

    #[test]
    fn clock_alignment_starts_on_interval_multiple() {
        let pts = [(2, 0.0), (20, 18.0)];
        let s = resample_linear(&irregular(&pts), 300, GridAlignment::Clock).unwrap();
        assert_eq!(s.start, t(5));
        assert_eq!(s.values(), &[3.0, 8.0, 13.0, 18.0]);
    }

    #[test]
    fn downsample_examples() {
        let s = downsample_mean(&regular(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 3).unwrap();
        assert_eq!(s.values(), &[2.0, 5.0]);
        assert_eq!(s.interval_secs(), 900);
        let s = downsample_mean(&regular(&[1.0, 2.0, 3.0, 4.0, 5.0]), 3).unwrap();
        assert_eq!(s.values(), &[2.0, 4.5]);
        let r = regular(&[1.0, 5.0]);
        assert_eq!(downsample_mean(&r, 1).unwrap(), r);
        assert!(downsample_mean(&r, 0).is_err());
    }

    #[test]
    fn subsequence_examples() {
        let s = subsequences(&regular(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(s.vectors, vec![vec![1.0, 2.0], vec![2.0, 3.0]]);
        let s = subsequences(&regular(&[1.0, 2.0, 3.0]), 1).unwrap();
        assert_eq!(s.vectors, vec![vec![1.0], vec![2.0]]);
        assert!(subsequences(&regular(&[1.0, 2.0]), 2).is_err());
        let multi = RegularSeries::new(t(0), 300, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap();
        let s = subsequences(&multi, 2).unwrap();
        assert_eq!(s.dim, 4);
        assert_eq!(s.vectors[0], vec![1.0, 10.0, 2.0, 20.0]);
    }

    #[test]
    fn window_examples() {
        let three_days = regular(&vec![1.0; 3 * 288]);
        let w = window_partition(&three_days, 86_400).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|s| s.len() == 288));
        assert_eq!(w[1].start, t(24 * 60));
        let one = regular(&vec![0.0; 288]);
        assert_eq!(window_partition(&one, 86_400).unwrap().len(), 1);
        let partial = regular(&vec![0.0; 300]);
        assert_eq!(window_partition(&partial, 86_400).unwrap().len(), 1);
        assert!(window_partition(&regular(&[0.0; 10]), 86_400).is_err());
        assert!(window_partition(&one, 100).is_err());
    }

    #[test]
    fn day_windows_keep_only_full_local_days() {
        // starts 22:00 UTC on Dec 31, runs 50 h
        let start = t(-120);
        let s = RegularSeries::univariate(start, 300, (0..600).map(|i| i as f64).collect()).unwrap();
        let utc = crate::time::offset_hours(0).unwrap();
        let days = day_windows(&s, &utc);
        assert_eq!(days.len(), 2);
        assert_eq!(days[0].0, NaiveDate::from_ymd_opt(2018, 1, 1).unwrap());
        assert_eq!(days[0].1.start, t(0));
        assert_eq!(days[0].1.values()[0], 24.0);
        assert_eq!(days[1].1.len(), 288);
        let est = crate::time::offset_hours(-5).unwrap();
        let days = day_windows(&s, &est);
        assert_eq!(days.len(), 1);
        assert_eq!(days[0].0, NaiveDate::from_ymd_opt(2018, 1, 1).unwrap());
        assert_eq!(days[0].1.start, t(5 * 60));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = RegularSeries::new(t(0), 300, 2, vec![0.1, 1.0, 0.2, 2.0, 1.0 / 3.0, 3.0]).unwrap();
        s.write_csv(&p).unwrap();
        assert_eq!(RegularSeries::read_csv(&p, None).unwrap(), s);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("timestamp_utc,value_0,value_1\n2018-01-01T00:00:00Z,0.1,1.0\n"));
        let one = regular(&[2.5]);
        one.write_csv(&p).unwrap();
        assert!(RegularSeries::read_csv(&p, None).is_err());
        assert_eq!(RegularSeries::read_csv(&p, Some(300)).unwrap(), one);
    }

    #[test]
    fn label_signal_reads_weights() {
        use crate::corpus::BagVector;
        let rows = vec![
            (t(0), BagVector::from_pairs([(1, 2.0)])),
            (t(3), BagVector::from_pairs([(0, 1.0)])),
        ];
        let m = ImageLabelMatrix::new("c", rows, 2).unwrap();
        let s = label_signal(&m, 1).unwrap();
        assert_eq!(s.points().iter().map(|p| p.1).collect::<Vec<_>>(), vec![2.0, 0.0]);
        assert!(label_signal(&m, 2).is_err());
    }

    fn arb_irregular() -> impl Strategy<Value = Vec<(i64, f64)>> {
        prop::collection::vec((1i64..40, -5.0f64..5.0), 2..30).prop_map(|v| {
            let mut acc = 0;
            v.into_iter()
                .map(|(d, x)| {
                    acc += d;
                    (acc, x)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn resampling_stays_within_range(pts in arb_irregular()) {
            let s = irregular(&pts);
            let r = resample_linear(&s, 300, GridAlignment::FirstSample).unwrap();
            let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.values().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
            prop_assert!(r.time_at(r.len() - 1) <= s.points().last().unwrap().0);
        }

        #[test]
        fn constant_resamples_to_constant(pts in arb_irregular(), c in -3.0f64..3.0) {
            let pts: Vec<(i64, f64)> = pts.into_iter().map(|(m, _)| (m, c)).collect();
            let r = resample_linear(&irregular(&pts), 300, GridAlignment::Clock);
            if let Ok(r) = r {
                prop_assert!(r.values().iter().all(|&v| v == c));
            }
        }

        #[test]
        fn subsequences_reconstruct_series(vals in prop::collection::vec(-1.0f64..1.0, 3..40), k in 1usize..3) {
            let s = regular(&vals);
            let sub = subsequences(&s, k).unwrap();
            prop_assert_eq!(sub.len(), vals.len() - k);
            for (i, v) in sub.vectors.iter().enumerate() {
                prop_assert_eq!(&v[..], &vals[i..i + k]);
            }
            let mut rebuilt: Vec<f64> = sub.vectors.iter().map(|v| v[0]).collect();
            rebuilt.extend_from_slice(&sub.vectors.last().unwrap()[1..]);
            prop_assert_eq!(&rebuilt[..], &vals[..vals.len() - 1]);
        }

        #[test]
        fn windows_concatenate_to_truncated_series(len in 1usize..200, per in 1usize..20) {
            let vals: Vec<f64> = (0..len).map(|i| i as f64).collect();
            let s = regular(&vals);
            match window_partition(&s, 300 * per as i64) {
                Ok(w) => {
                    let joined: Vec<f64> = w.iter().flat_map(|x| x.values().to_vec()).collect();
                    prop_assert_eq!(&joined[..], &vals[..(len / per) * per]);
                    for pair in w.windows(2) {
                        prop_assert!(pair[0].time_at(pair[0].len() - 1) < pair[1].start);
                    }
                }
                Err(_) => prop_assert!(len < per),
            }
        }
    }
}
