//! Day-level anomaly scoring (RPDAS) against nominal reference days and
//! threshold sweeps evaluated against a date calendar.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, FixedOffset, NaiveDate, Utc};
use serde::Serialize;

use crate::changepoint::{precision_recall_f1, EventCalendar, MatchCounts};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::ratio::{ratio_bound, symmetrized_rp, RulsifConfig};
use crate::signals::{day_windows, subsequences, RegularSeries, SubsequenceSet};

/// Default relative-density parameter for anomaly scoring.
pub const DEFAULT_GAMMA: f64 = 1e-3;
/// Default subsequence lengths swept.
pub const DEFAULT_KS: [usize; 4] = [1, 2, 4, 8];
/// Default number of evenly spaced thresholds over `[0, 1/gamma]`.
pub const DEFAULT_TAU_POINTS: usize = 200;

/// One test window ready for scoring.
#[derive(Debug, Clone)]
pub struct TestWindow {
    pub day: NaiveDate,
    pub start: DateTime<Utc>,
    pub sample: SubsequenceSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowScore {
    pub day: NaiveDate,
    pub start: DateTime<Utc>,
    pub sample_size: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnomalyScoreSeries {
    pub k: usize,
    pub gamma: f64,
    pub windows: Vec<WindowScore>,
}

/// Mean symmetrized relative Pearson divergence of every test window against
/// each reference window. Empty windows are skipped with a warning.
pub fn rpdas_series(tests: &[TestWindow], references: &[SubsequenceSet], cfg: &RulsifConfig) -> Result<AnomalyScoreSeries> {
    let refs: Vec<&SubsequenceSet> = references.iter().filter(|r| !r.is_empty()).collect();
    if refs.is_empty() {
        return Err(Error::invalid("at least one nonempty reference window is required"));
    }
    let k = refs[0].k;
    let dim = refs[0].dim;
    if refs.iter().any(|r| r.dim != dim) || tests.iter().any(|t| !t.sample.is_empty() && t.sample.dim != dim) {
        return Err(Error::invalid("all windows must share the subsequence dimension"));
    }
    let bound = ratio_bound(cfg.gamma);
    let mut windows = Vec::with_capacity(tests.len());
    for t in tests {
        if t.sample.is_empty() {
            log::warn!("skipping empty window {}", t.day);
            continue;
        }
        let mut parts = Vec::with_capacity(refs.len());
        for r in &refs {
            parts.push(symmetrized_rp(&t.sample.vectors, &r.vectors, cfg)?);
        }
        // fixed summation order: the score does not depend on reference order
        parts.sort_by(f64::total_cmp);
        let score = (parts.iter().sum::<f64>() / parts.len() as f64).clamp(0.0, bound);
        log::debug!("{} k={k}: rpdas {score}", t.day);
        windows.push(WindowScore {
            day: t.day,
            start: t.start,
            sample_size: t.sample.len(),
            score,
        });
    }
    Ok(AnomalyScoreSeries {
        k,
        gamma: cfg.gamma,
        windows,
    })
}

/// Days whose score strictly exceeds `tau`, ascending.
pub fn detect_days(scores: &AnomalyScoreSeries, tau: f64) -> Vec<NaiveDate> {
    let mut d: Vec<NaiveDate> = scores.windows.iter().filter(|w| w.score > tau).map(|w| w.day).collect();
    d.sort();
    d
}

/// `n` evenly spaced thresholds over `[0, 1/gamma]` plus every observed score.
pub fn default_taus(scores: &AnomalyScoreSeries, n: usize) -> Vec<f64> {
    let top = ratio_bound(scores.gamma).min(f64::MAX);
    let mut taus: Vec<f64> = match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| top * i as f64 / (n - 1) as f64).collect(),
    };
    taus.extend(scores.windows.iter().map(|w| w.score));
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    taus
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: MatchCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    /// One point per distinct threshold, ascending in `tau`.
    pub points: Vec<PrPoint>,
    pub auc: f64,
    /// Highest-F1 point; the smallest threshold wins ties.
    pub best: PrPoint,
    /// Fraction of scored days that are truth days (the null predictor's precision).
    pub prevalence: f64,
}

impl PrCurve {
    /// CSV with columns `tau,precision,recall`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("tau,precision,recall\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", fmt_f64(p.tau), fmt_f64(p.precision), fmt_f64(p.recall)));
        }
        File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Truth days restricted to the days that were scored.
pub fn scored_truth(scores: &AnomalyScoreSeries, truth: &EventCalendar) -> BTreeSet<NaiveDate> {
    let days: BTreeSet<NaiveDate> = scores.windows.iter().map(|w| w.day).collect();
    truth.dates().intersection(&days).copied().collect()
}

/// Precision of flagging every scored day.
pub fn null_precision(scores: &AnomalyScoreSeries, truth: &EventCalendar) -> f64 {
    let days: BTreeSet<NaiveDate> = scores.windows.iter().map(|w| w.day).collect();
    if days.is_empty() {
        return 0.0;
    }
    scored_truth(scores, truth).len() as f64 / days.len() as f64
}

/// Evaluates day-level detections at every threshold.
///
/// A day is detected at `tau` when its score is strictly above `tau`, and
/// counts as a true positive when it is a truth day. Thresholds are sorted
/// and deduplicated first, so their input order is irrelevant.
pub fn sweep_thresholds(scores: &AnomalyScoreSeries, truth: &EventCalendar, taus: &[f64]) -> Result<PrCurve> {
    let truth_days = scored_truth(scores, truth);
    if truth_days.is_empty() {
        return Err(Error::invalid("no truth event falls on a scored day; recall is undefined"));
    }
    let mut taus: Vec<f64> = taus.iter().copied().filter(|t| !t.is_nan()).collect();
    if taus.is_empty() {
        return Err(Error::invalid("threshold grid is empty"));
    }
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let n_days = scores.windows.iter().map(|w| w.day).collect::<BTreeSet<_>>().len();
    let prevalence = truth_days.len() as f64 / n_days as f64;

    let points: Vec<PrPoint> = taus
        .iter()
        .map(|&tau| {
            let flagged = detect_days(scores, tau);
            let tp = flagged.iter().filter(|d| truth_days.contains(d)).count();
            let counts = MatchCounts {
                tp,
                fp: flagged.len() - tp,
                fn_: truth_days.len() - tp,
            };
            let m = precision_recall_f1(counts);
            PrPoint {
                tau,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                counts,
            }
        })
        .collect();

    let mut best = points[0];
    for p in &points[1..] {
        if p.f1 > best.f1 {
            best = *p;
        }
    }
    let auc = pr_auc(&points, prevalence);
    Ok(PrCurve {
        points,
        auc,
        best,
        prevalence,
    })
}

/// Trapezoidal area under precision over recall.
///
/// Uses the points with at least one detection, sorted by recall (ties by
/// descending precision), extended flat to recall 0 and, if recall 1 is never
/// reached, closed with the flag-everything point `(1, prevalence)`.
fn pr_auc(points: &[PrPoint], prevalence: f64) -> f64 {
    let mut pr: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.counts.tp + p.counts.fp > 0)
        .map(|p| (p.recall, p.precision))
        .collect();
    if pr.is_empty() {
        return 0.0;
    }
    pr.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pr.dedup();
    if pr[0].0 > 0.0 {
        pr.insert(0, (0.0, pr[0].1));
    }
    if pr[pr.len() - 1].0 < 1.0 {
        pr.push((1.0, prevalence));
    }
    let area: f64 = pr.windows(2).map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1)).sum();
    area.clamp(0.0, 1.0)
}

/// Day windows of `series` split into reference and test windows, each
/// embedded as length-`k` subsequences. Partial days are dropped, and when
/// `test_days` is given, non-reference days outside it are ignored.
pub fn day_samples(
    series: &RegularSeries,
    tz: &FixedOffset,
    reference_days: &BTreeSet<NaiveDate>,
    test_days: Option<&BTreeSet<NaiveDate>>,
    k: usize,
) -> Result<(Vec<SubsequenceSet>, Vec<TestWindow>)> {
    let mut refs = Vec::new();
    let mut tests = Vec::new();
    for (day, window) in day_windows(series, tz) {
        let is_ref = reference_days.contains(&day);
        if !is_ref && test_days.is_some_and(|t| !t.contains(&day)) {
            continue;
        }
        let sample = subsequences(&window, k)?;
        if is_ref {
            refs.push(sample);
        } else {
            tests.push(TestWindow {
                day,
                start: window.start,
                sample,
            });
        }
    }
    if refs.is_empty() {
        return Err(Error::invalid("none of the reference days is fully covered by the signal"));
    }
    Ok((refs, tests))
}

/// Outcome of one subsequence length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KResult {
    pub scores: AnomalyScoreSeries,
    pub curve: PrCurve,
}

/// Summary row `(k, tau*, AUC, F1*)` with the counts at `tau*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionSummary {
    pub k: usize,
    pub tau_star: f64,
    pub auc: f64,
    pub f1_star: f64,
    pub precision: f64,
    pub recall: f64,
    pub counts: MatchCounts,
    pub prevalence: f64,
}

impl KResult {
    pub fn summary(&self) -> DetectionSummary {
        let b = self.curve.best;
        DetectionSummary {
            k: self.scores.k,
            tau_star: b.tau,
            auc: self.curve.auc,
            f1_star: b.f1,
            precision: b.precision,
            recall: b.recall,
            counts: b.counts,
            prevalence: self.curve.prevalence,
        }
    }
}

/// Scores and evaluates `series` for every subsequence length in `ks`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_k(
    series: &RegularSeries,
    tz: &FixedOffset,
    reference_days: &BTreeSet<NaiveDate>,
    test_days: Option<&BTreeSet<NaiveDate>>,
    ks: &[usize],
    truth: &EventCalendar,
    cfg: &RulsifConfig,
    tau_points: usize,
) -> Result<Vec<KResult>> {
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let (refs, tests) = day_samples(series, tz, reference_days, test_days, k)?;
        let scores = rpdas_series(&tests, &refs, cfg)?;
        let taus = default_taus(&scores, tau_points);
        let curve = sweep_thresholds(&scores, truth, &taus)?;
        out.push(KResult { scores, curve });
    }
    Ok(out)
}

/// The result with the highest F1*, then AUC, then the smallest k.
pub fn best_k(results: &[KResult]) -> Option<&KResult> {
    results.iter().fold(None, |acc: Option<&KResult>, r| match acc {
        None => Some(r),
        Some(a) => {
            let (sa, sr) = (a.summary(), r.summary());
            if sr.f1_star > sa.f1_star || (sr.f1_star == sa.f1_star && sr.auc > sa.auc) {
                Some(r)
            } else {
                Some(a)
            }
        }
    })
}

/// Scores CSV `day,k,rpdas` over several k, in (k, day) order.
pub fn write_scores_csv(series: &[&AnomalyScoreSeries], path: &Path) -> Result<()> {
    let mut out = String::from("day,k,rpdas\n");
    for s in series {
        for w in &s.windows {
            out.push_str(&format!("{},{},{}\n", w.day, s.k, fmt_f64(w.score)));
        }
    }
    File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// Summary CSV `k,tau_star,auc,f1` one row per k.
pub fn write_summary_csv(rows: &[DetectionSummary], path: &Path) -> Result<()> {
    let mut out = String::from("k,tau_star,auc,f1\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.k, fmt_f64(r.tau_star), fmt_f64(r.auc), fmt_f64(r.f1_star)));
    }
    File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}
