//! Penalized mean-change segmentation and calendar validation of the
//! resulting events.
//!
//! The objective over change points `rho_1 < ... < rho_R` is
//! `sum_r C(segment_r) + R * B` with `C` the unsquared L2 norm of a segment's
//! deviations from its mean. It is minimized exactly by optimal partitioning.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::signals::RegularSeries;
use crate::time::{day_start, format_utc};

/// Default merge window for event pairing, 24 h.
pub const DEFAULT_MERGE_WINDOW_SECS: i64 = 24 * 3600;
/// Default number of events kept.
pub const DEFAULT_TOP_N: usize = 8;
/// Default matching tolerance around a truth day, 12 h.
pub const DEFAULT_TOLERANCE_SECS: i64 = 12 * 3600;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangePointResult {
    /// Start index of every segment after the first.
    pub rho: Vec<usize>,
    pub penalty: f64,
    pub total_cost: f64,
    pub segment_means: Vec<f64>,
}

impl ChangePointResult {
    /// Segment boundaries `[0, rho_1, ..., rho_R, n]`.
    pub fn boundaries(&self, n: usize) -> Vec<usize> {
        let mut b = Vec::with_capacity(self.rho.len() + 2);
        b.push(0);
        b.extend_from_slice(&self.rho);
        b.push(n);
        b
    }
}

/// Running mean and sum of squared deviations.
#[derive(Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    /// `||x - mean||_2` of the values pushed so far.
    fn cost(&self) -> f64 {
        self.m2.max(0.0).sqrt()
    }
}

fn segment_cost(x: &[f64]) -> f64 {
    let mut w = Welford::default();
    x.iter().rev().for_each(|&v| w.push(v));
    w.cost()
}

/// Exact minimizer of the penalized objective for a univariate series.
pub fn detect_changepoints(series: &RegularSeries, penalty: f64) -> Result<ChangePointResult> {
    if series.channels() != 1 {
        return Err(Error::invalid("change-point detection expects a univariate series"));
    }
    segment(series.values(), penalty)
}

/// [`detect_changepoints`] on raw values.
pub fn segment(x: &[f64], penalty: f64) -> Result<ChangePointResult> {
    if !(penalty >= 0.0) || !penalty.is_finite() {
        return Err(Error::invalid(format!("penalty must be finite and non-negative, got {penalty}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contains non-finite values"));
    }
    let n = x.len();
    if n == 0 {
        return Ok(ChangePointResult {
            rho: vec![],
            penalty,
            total_cost: 0.0,
            segment_means: vec![],
        });
    }
    let mut f = vec![0.0; n + 1];
    let mut last = vec![0usize; n + 1];
    f[0] = -penalty;
    for t in 1..=n {
        // grow the last segment leftwards so its cost updates in O(1)
        let mut acc = Welford::default();
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for s in (0..t).rev() {
            acc.push(x[s]);
            let v = f[s] + acc.cost() + penalty;
            if v <= best {
                best = v;
                arg = s;
            }
        }
        f[t] = best;
        last[t] = arg;
    }
    let mut rho = Vec::new();
    let mut t = n;
    while t > 0 {
        let s = last[t];
        if s > 0 {
            rho.push(s);
        }
        t = s;
    }
    rho.reverse();

    let mut bounds = vec![0];
    bounds.extend_from_slice(&rho);
    bounds.push(n);
    let segment_means = bounds
        .windows(2)
        .map(|w| x[w[0]..w[1]].iter().sum::<f64>() / (w[1] - w[0]) as f64)
        .collect();
    let total_cost = bounds.windows(2).map(|w| segment_cost(&x[w[0]..w[1]])).sum::<f64>() + rho.len() as f64 * penalty;
    Ok(ChangePointResult {
        rho,
        penalty,
        total_cost,
        segment_means,
    })
}

/// `||X||_2 / 20` of the raw values.
pub fn default_penalty(series: &RegularSeries) -> f64 {
    series.values().iter().map(|v| v * v).sum::<f64>().sqrt() / 20.0
}

/// `||X - mean(X)||_2 / 20`: a translation-invariant variant of the default.
pub fn centered_penalty(series: &RegularSeries) -> f64 {
    let x = series.values();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt() / 20.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionEvent {
    pub start: DateTime<Utc>,
    /// `None` when the event has no closing change point.
    pub end: Option<DateTime<Utc>>,
    /// `|mean after - mean before|` at the start.
    pub magnitude: f64,
}

/// Groups change points into events and keeps the `top_n` largest.
///
/// Walking forward, a change point opens an event. Every following change
/// point within `merge_window_secs` of the start is absorbed and the last one
/// absorbed closes the event. If none falls inside the window, the next
/// change point closes it instead. Returned events are in time order.
pub fn pair_events(result: &ChangePointResult, series: &RegularSeries, merge_window_secs: i64, top_n: usize) -> Vec<DetectionEvent> {
    let rho = &result.rho;
    let mut events = Vec::new();
    let mut i = 0;
    while i < rho.len() {
        let start = series.time_at(rho[i]);
        let magnitude = (result.segment_means[i + 1] - result.segment_means[i]).abs();
        let mut j = i + 1;
        while j < rho.len() && (series.time_at(rho[j]) - start).num_seconds() <= merge_window_secs {
            j += 1;
        }
        let end = if j > i + 1 {
            Some(series.time_at(rho[j - 1]))
        } else if j < rho.len() {
            j += 1;
            Some(series.time_at(rho[j - 1]))
        } else {
            None
        };
        events.push(DetectionEvent { start, end, magnitude });
        i = j;
    }
    events.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then(a.start.cmp(&b.start)));
    events.truncate(top_n);
    events.sort_by_key(|e| e.start);
    events
}

/// Writes events as `start_utc,end_utc,magnitude`; open events have an empty end.
pub fn write_events_csv(events: &[DetectionEvent], path: &Path) -> Result<()> {
    let mut out = String::from("start_utc,end_utc,magnitude\n");
    for e in events {
        out.push_str(&format!(
            "{},{},{}\n",
            format_utc(&e.start),
            e.end.as_ref().map(format_utc).unwrap_or_default(),
            fmt_f64(e.magnitude)
        ));
    }
    File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Rain,
    Snow,
    Holiday,
    ParkingBan,
}

impl EventKind {
    pub const ALL: [EventKind; 4] = [EventKind::Rain, EventKind::Snow, EventKind::Holiday, EventKind::ParkingBan];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "rain" => Ok(EventKind::Rain),
            "snow" => Ok(EventKind::Snow),
            "holiday" => Ok(EventKind::Holiday),
            "parking_ban" => Ok(EventKind::ParkingBan),
            other => Err(Error::invalid(format!("unknown event kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CalendarEntry {
    pub date: NaiveDate,
    pub kind: EventKind,
}

/// Date-quantized ground truth, one entry per (date, kind).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventCalendar {
    events: BTreeSet<CalendarEntry>,
}

impl EventCalendar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (NaiveDate, EventKind)>) -> Self {
        let mut c = Self::new();
        for (d, k) in entries {
            c.insert(d, k);
        }
        c
    }

    /// Adds an entry; returns false if it was already present.
    pub fn insert(&mut self, date: NaiveDate, kind: EventKind) -> bool {
        self.events.insert(CalendarEntry { date, kind })
    }

    pub fn entries(&self) -> impl Iterator<Item = &CalendarEntry> {
        self.events.iter()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Entries whose kind is in `kinds`.
    pub fn restrict(&self, kinds: &[EventKind]) -> EventCalendar {
        EventCalendar {
            events: self.events.iter().filter(|e| kinds.contains(&e.kind)).cloned().collect(),
        }
    }

    /// Distinct dates, ascending.
    pub fn dates(&self) -> BTreeSet<NaiveDate> {
        self.events.iter().map(|e| e.date).collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    /// Reads `{"events": [{"date": "YYYY-MM-DD", "kind": "snow"}, ...]}`;
    /// repeated (date, kind) pairs are rejected.
    pub fn read_json(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            events: Vec<CalendarEntry>,
        }
        let raw: Raw = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let mut c = EventCalendar::new();
        for e in raw.events {
            if !c.insert(e.date, e.kind) {
                return Err(Error::invalid(format!("calendar lists {:?} on {} twice", e.kind, e.date)));
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Matches detections to truth days.
///
/// Each distinct truth date is the span `[midnight, next midnight)` in `tz`.
/// A detection whose start lies within `tolerance_secs` of a span matches the
/// earliest still-unmatched such date; detections are visited in time order.
pub fn match_events(detected: &[DetectionEvent], truth: &EventCalendar, tolerance_secs: i64, tz: &FixedOffset) -> MatchCounts {
    let days: Vec<NaiveDate> = truth.dates().into_iter().collect();
    let spans: Vec<(DateTime<Utc>, DateTime<Utc>)> = days
        .iter()
        .map(|d| {
            let lo = day_start(*d, tz);
            let hi = day_start(d.succ_opt().expect("date in range"), tz);
            (lo - Duration::seconds(tolerance_secs), hi + Duration::seconds(tolerance_secs))
        })
        .collect();
    let mut starts: Vec<DateTime<Utc>> = detected.iter().map(|e| e.start).collect();
    starts.sort();
    let mut used = vec![false; days.len()];
    let mut tp = 0;
    for s in &starts {
        if let Some(k) = (0..days.len()).find(|&k| !used[k] && spans[k].0 <= *s && *s < spans[k].1) {
            used[k] = true;
            tp += 1;
        }
    }
    MatchCounts {
        tp,
        fp: starts.len() - tp,
        fn_: days.len() - tp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 (harmonic mean); undefined ratios are 0.
pub fn precision_recall_f1(c: MatchCounts) -> Metrics {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Metrics { precision, recall, f1 }
}
