//! Synthetic annotation streams with known topics, mixtures and events.
//!
//! Each frame draws its own random stream from `derive_seed(seed, [camera, frame])`,
//! so regenerating a frame under an event override touches nothing else.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, Utc};
use rand::distr::weighted::WeightedIndex;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::changepoint::{EventCalendar, EventKind};
use crate::error::{Error, Result};
use crate::ingest::{AnnotationRecord, Label};
use crate::rng::{derive_seed, seeded};
use crate::time::{day_start, local_day, offset_hours};

/// Default scrape cadence, about three minutes per frame.
pub const DEFAULT_FRAME_INTERVAL_SECS: i64 = 180;

const SIMPLEX_TOL: f64 = 1e-9;

/// A topic mixture at an offset from the schedule origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub at_secs: f64,
    pub mixture: Vec<f64>,
}

/// Piecewise-linear topic mixture over time, optionally periodic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub origin: DateTime<Utc>,
    pub keyframes: Vec<Keyframe>,
    /// When set, keyframe offsets must lie in `[0, period)` and the curve wraps.
    #[serde(default)]
    pub period_secs: Option<f64>,
}

impl Schedule {
    /// A schedule that holds one mixture forever.
    pub fn constant(origin: DateTime<Utc>, mixture: Vec<f64>) -> Self {
        Schedule {
            origin,
            keyframes: vec![Keyframe { at_secs: 0.0, mixture }],
            period_secs: None,
        }
    }

    /// A 24 h profile anchored at local midnight; keyframes are given in hours.
    pub fn daily(first_day: NaiveDate, tz: &FixedOffset, profile: &[(f64, Vec<f64>)]) -> Self {
        Schedule {
            origin: day_start(first_day, tz),
            keyframes: profile
                .iter()
                .map(|(h, m)| Keyframe {
                    at_secs: h * 3600.0,
                    mixture: m.clone(),
                })
                .collect(),
            period_secs: Some(86_400.0),
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.keyframes.is_empty() {
            return Err(Error::invalid("schedule has no keyframes"));
        }
        for w in self.keyframes.windows(2) {
            if !(w[0].at_secs < w[1].at_secs) {
                return Err(Error::invalid("keyframe offsets must strictly increase"));
            }
        }
        if let Some(p) = self.period_secs {
            if !(p > 0.0) {
                return Err(Error::invalid("schedule period must be positive"));
            }
            let first = self.keyframes[0].at_secs;
            let last = self.keyframes[self.keyframes.len() - 1].at_secs;
            if first < 0.0 || last >= p {
                return Err(Error::invalid("periodic keyframes must lie in [0, period)"));
            }
        }
        for kf in &self.keyframes {
            check_simplex(&kf.mixture, k, "keyframe mixture")?;
        }
        Ok(())
    }

    /// Mixture at instant `t`, linear between neighbouring keyframes.
    pub fn mixture_at(&self, t: DateTime<Utc>) -> Vec<f64> {
        let mut s = (t - self.origin).num_milliseconds() as f64 / 1000.0;
        let kfs = &self.keyframes;
        let n = kfs.len();
        if let Some(p) = self.period_secs {
            s = s.rem_euclid(p);
            // Wrap: the segment after the last keyframe runs into the first one of the next period.
            let (a, b, ta, tb) = match kfs.iter().position(|kf| kf.at_secs > s) {
                Some(0) => (&kfs[n - 1], &kfs[0], kfs[n - 1].at_secs - p, kfs[0].at_secs),
                Some(i) => (&kfs[i - 1], &kfs[i], kfs[i - 1].at_secs, kfs[i].at_secs),
                None => (&kfs[n - 1], &kfs[0], kfs[n - 1].at_secs, kfs[0].at_secs + p),
            };
            return lerp(&a.mixture, &b.mixture, ta, tb, s);
        }
        if s <= kfs[0].at_secs {
            return kfs[0].mixture.clone();
        }
        match kfs.iter().position(|kf| kf.at_secs > s) {
            Some(i) => lerp(&kfs[i - 1].mixture, &kfs[i].mixture, kfs[i - 1].at_secs, kfs[i].at_secs, s),
            None => kfs[n - 1].mixture.clone(),
        }
    }
}

fn lerp(a: &[f64], b: &[f64], ta: f64, tb: f64, s: f64) -> Vec<f64> {
    let u = if tb > ta { ((s - ta) / (tb - ta)).clamp(0.0, 1.0) } else { 0.0 };
    a.iter().zip(b).map(|(x, y)| x + u * (y - x)).collect()
}

/// Half-open time interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeSpan {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        TimeSpan { start, end }
    }

    /// Whole local days `[first, last]` inclusive.
    pub fn local_days(first: NaiveDate, last: NaiveDate, tz: &FixedOffset) -> Self {
        TimeSpan {
            start: day_start(first, tz),
            end: day_start(last + Duration::days(1), tz),
        }
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub id: String,
    /// Recording periods, in time order and disjoint.
    pub spans: Vec<TimeSpan>,
    pub schedule: Schedule,
}

/// A modification of the scheduled mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum MixtureOp {
    /// Use this mixture outright.
    Replace { mixture: Vec<f64> },
    /// Scale one topic by `factor`; the freed mass is shared by the others in proportion.
    Damp { topic: usize, factor: f64 },
    /// Raise (or lower) one topic to `level`, taking the difference from `donors` in proportion.
    Set { topic: usize, level: f64, donors: Vec<usize> },
}

impl MixtureOp {
    fn validate(&self, k: usize) -> Result<()> {
        let check_topic = |z: usize| {
            if z < k {
                Ok(())
            } else {
                Err(Error::invalid(format!("topic {z} out of range for K = {k}")))
            }
        };
        match self {
            MixtureOp::Replace { mixture } => check_simplex(mixture, k, "override mixture"),
            MixtureOp::Damp { topic, factor } => {
                check_topic(*topic)?;
                if !(0.0..=1.0).contains(factor) {
                    return Err(Error::invalid("damping factor must lie in [0, 1]"));
                }
                Ok(())
            }
            MixtureOp::Set { topic, level, donors } => {
                check_topic(*topic)?;
                if !(0.0..=1.0).contains(level) {
                    return Err(Error::invalid("set level must lie in [0, 1]"));
                }
                if donors.is_empty() || donors.contains(topic) {
                    return Err(Error::invalid("set needs donors other than its own topic"));
                }
                donors.iter().try_for_each(|&d| check_topic(d))
            }
        }
    }

    /// Applies the op to a simplex, returning a simplex.
    pub fn apply(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            MixtureOp::Replace { mixture } => mixture.clone(),
            MixtureOp::Damp { topic, factor } => {
                let z = *topic;
                let freed = theta[z] * (1.0 - factor);
                let rest: f64 = (0..theta.len()).filter(|&j| j != z).map(|j| theta[j]).sum();
                let others = (theta.len() - 1).max(1) as f64;
                theta
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        if j == z {
                            v * factor
                        } else if rest > 0.0 {
                            v + freed * v / rest
                        } else {
                            v + freed / others
                        }
                    })
                    .collect()
            }
            MixtureOp::Set { topic, level, donors } => {
                let mut out = theta.to_vec();
                let pool: f64 = donors.iter().map(|&d| theta[d]).sum();
                // Cannot take more than the donors hold.
                let delta = (level - theta[*topic]).min(pool);
                out[*topic] += delta;
                for &d in donors {
                    let share = if pool > 0.0 { theta[d] / pool } else { 1.0 / donors.len() as f64 };
                    out[d] = (out[d] - delta * share).max(0.0);
                }
                let s: f64 = out.iter().sum();
                out.iter_mut().for_each(|v| *v /= s);
                out
            }
        }
    }
}

/// An event overriding the mixture of one camera over a time span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedEvent {
    pub camera: String,
    pub span: TimeSpan,
    /// Applied in order to the scheduled mixture.
    pub ops: Vec<MixtureOp>,
    /// Calendar kinds recorded for every local day the span touches.
    #[serde(default)]
    pub kinds: Vec<EventKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Label of each vocabulary column of `phi_true`.
    pub labels: Vec<Label>,
    /// K x M, rows are distributions over `labels`.
    pub phi_true: Vec<Vec<f64>>,
    pub cameras: Vec<CameraSpec>,
    /// Poisson mean of the number of label draws per frame (before deduplication).
    pub labels_per_image: f64,
    #[serde(default = "default_interval")]
    pub frame_interval_secs: i64,
    /// Concentration c of an optional per-frame Dirichlet(c * theta) perturbation.
    #[serde(default)]
    pub dirichlet_concentration: Option<f64>,
    /// Labels attached to every frame, e.g. a watermark.
    #[serde(default)]
    pub always_present: Vec<Label>,
    #[serde(default)]
    pub events: Vec<InjectedEvent>,
    #[serde(default)]
    pub timezone_offset_hours: i32,
    #[serde(default)]
    pub seed: u64,
}

fn default_interval() -> i64 {
    DEFAULT_FRAME_INTERVAL_SECS
}

fn check_simplex(v: &[f64], k: usize, what: &str) -> Result<()> {
    if v.len() != k {
        return Err(Error::invalid(format!("{what} has {} entries, expected {k}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL * k.max(1) as f64 {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl GeneratorSpec {
    pub fn num_topics(&self) -> usize {
        self.phi_true.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.labels.len()
    }

    pub fn timezone(&self) -> Result<FixedOffset> {
        offset_hours(self.timezone_offset_hours)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_topics();
        let m = self.vocab_size();
        if k == 0 || m == 0 {
            return Err(Error::invalid("generator needs at least one topic and one label"));
        }
        let distinct: BTreeSet<&Label> = self.labels.iter().collect();
        if distinct.len() != m {
            return Err(Error::invalid("generator labels must be distinct"));
        }
        if self.always_present.iter().any(|l| distinct.contains(l)) {
            return Err(Error::invalid("always-present labels must not be topic labels"));
        }
        for row in &self.phi_true {
            check_simplex(row, m, "phi_true row")?;
        }
        if !(self.labels_per_image > 0.0) || !self.labels_per_image.is_finite() {
            return Err(Error::invalid("labels_per_image must be positive"));
        }
        if self.frame_interval_secs <= 0 {
            return Err(Error::invalid("frame interval must be positive"));
        }
        if let Some(c) = self.dirichlet_concentration {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::invalid("Dirichlet concentration must be positive"));
            }
        }
        self.timezone()?;
        let mut ids = BTreeSet::new();
        for cam in &self.cameras {
            if !ids.insert(cam.id.as_str()) {
                return Err(Error::invalid(format!("duplicate camera {:?}", cam.id)));
            }
            for s in &cam.spans {
                if s.end < s.start {
                    return Err(Error::invalid(format!("camera {:?} has a reversed span", cam.id)));
                }
            }
            for w in cam.spans.windows(2) {
                if w[1].start < w[0].end {
                    return Err(Error::invalid(format!("camera {:?} spans overlap or are unordered", cam.id)));
                }
            }
            cam.schedule.validate(k)?;
        }
        for ev in &self.events {
            self.validate_event(ev)?;
        }
        Ok(())
    }

    fn validate_event(&self, ev: &InjectedEvent) -> Result<()> {
        let cam = self
            .cameras
            .iter()
            .find(|c| c.id == ev.camera)
            .ok_or_else(|| Error::invalid(format!("event names unknown camera {:?}", ev.camera)))?;
        if ev.span.end < ev.span.start {
            return Err(Error::invalid("event span is reversed"));
        }
        let horizon_start = cam.spans.first().map(|s| s.start);
        let horizon_end = cam.spans.last().map(|s| s.end);
        let inside = match (horizon_start, horizon_end) {
            (Some(a), Some(b)) => ev.span.start >= a && ev.span.end <= b,
            _ => ev.span.start == ev.span.end,
        };
        if !inside {
            return Err(Error::invalid("event span lies outside the generation horizon"));
        }
        ev.ops.iter().try_for_each(|op| op.validate(self.num_topics()))
    }
}

/// True mixture of one generated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTheta {
    pub timestamp: DateTime<Utc>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub phi_true: Vec<Vec<f64>>,
    /// Per camera, one entry per frame in time order.
    pub theta: BTreeMap<String, Vec<FrameTheta>>,
    pub calendar: EventCalendar,
}

impl GroundTruth {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Generated annotations, grouped per camera in time order, with their truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    pub records: BTreeMap<String, Vec<AnnotationRecord>>,
    pub truth: GroundTruth,
}

impl SyntheticStream {
    /// All records, ordered by camera then time.
    pub fn all_records(&self) -> Vec<AnnotationRecord> {
        self.records.values().flatten().cloned().collect()
    }
}

struct Sampler {
    topic_draws: Vec<WeightedIndex<f64>>,
}

impl Sampler {
    fn new(spec: &GeneratorSpec) -> Result<Self> {
        let topic_draws = spec
            .phi_true
            .iter()
            .map(|row| WeightedIndex::new(row).map_err(|e| Error::invalid(format!("phi_true row: {e}"))))
            .collect::<Result<_>>()?;
        Ok(Sampler { topic_draws })
    }
}

fn draw_dirichlet(rng: &mut ChaCha8Rng, theta: &[f64], c: f64) -> Vec<f64> {
    let mut g: Vec<f64> = theta
        .iter()
        .map(|&t| {
            if t > 0.0 {
                Gamma::new(c * t, 1.0).expect("positive shape").sample(rng)
            } else {
                0.0
            }
        })
        .collect();
    let s: f64 = g.iter().sum();
    if s > 0.0 && s.is_finite() {
        g.iter_mut().for_each(|v| *v /= s);
        g
    } else {
        theta.to_vec()
    }
}

fn draw_frame(
    spec: &GeneratorSpec,
    sampler: &Sampler,
    camera: &str,
    timestamp: DateTime<Utc>,
    mixture: &[f64],
    seed: u64,
) -> (AnnotationRecord, Vec<f64>) {
    let mut rng = seeded(seed);
    let theta = match spec.dirichlet_concentration {
        Some(c) => draw_dirichlet(&mut rng, mixture, c),
        None => mixture.to_vec(),
    };
    let poisson = Poisson::new(spec.labels_per_image).expect("validated rate");
    let n = loop {
        let v: f64 = poisson.sample(&mut rng);
        if v >= 1.0 {
            break v as usize;
        }
    };
    let topic_pick = WeightedIndex::new(&theta).expect("mixture is a simplex");
    let mut labels: BTreeSet<Label> = spec.always_present.iter().cloned().collect();
    for _ in 0..n {
        let z = topic_pick.sample(&mut rng);
        let j = sampler.topic_draws[z].sample(&mut rng);
        labels.insert(spec.labels[j].clone());
    }
    let record = AnnotationRecord {
        camera_id: camera.to_string(),
        timestamp,
        labels,
    };
    (record, theta)
}

fn frame_times(spec: &GeneratorSpec, cam: &CameraSpec) -> Vec<DateTime<Utc>> {
    let step = Duration::seconds(spec.frame_interval_secs);
    let mut out = Vec::new();
    for span in &cam.spans {
        let mut t = span.start;
        while t < span.end {
            out.push(t);
            t += step;
        }
    }
    out
}

fn frame_seed(spec: &GeneratorSpec, cam_idx: usize, frame: usize) -> u64 {
    derive_seed(spec.seed, &[cam_idx as u64, frame as u64])
}

/// Generates every camera's stream, then applies `spec.events` in order.
pub fn generate(spec: &GeneratorSpec) -> Result<SyntheticStream> {
    spec.validate()?;
    let sampler = Sampler::new(spec)?;
    let mut records = BTreeMap::new();
    let mut theta = BTreeMap::new();
    for (ci, cam) in spec.cameras.iter().enumerate() {
        let mut recs = Vec::new();
        let mut thetas = Vec::new();
        for (fi, t) in frame_times(spec, cam).into_iter().enumerate() {
            let mixture = cam.schedule.mixture_at(t);
            let (rec, th) = draw_frame(spec, &sampler, &cam.id, t, &mixture, frame_seed(spec, ci, fi));
            recs.push(rec);
            thetas.push(FrameTheta { timestamp: t, theta: th });
        }
        records.insert(cam.id.clone(), recs);
        theta.insert(cam.id.clone(), thetas);
    }
    let mut stream = SyntheticStream {
        records,
        truth: GroundTruth {
            phi_true: spec.phi_true.clone(),
            theta,
            calendar: EventCalendar::new(),
        },
    };
    for ev in &spec.events {
        apply_event(spec, &sampler, &mut stream, ev)?;
    }
    Ok(stream)
}

/// Regenerates the frames inside the event span under its override and records
/// its calendar days. The override replaces any earlier one on the same frames.
pub fn inject(spec: &GeneratorSpec, stream: &mut SyntheticStream, event: &InjectedEvent) -> Result<()> {
    spec.validate()?;
    spec.validate_event(event)?;
    let sampler = Sampler::new(spec)?;
    apply_event(spec, &sampler, stream, event)
}

fn apply_event(spec: &GeneratorSpec, sampler: &Sampler, stream: &mut SyntheticStream, ev: &InjectedEvent) -> Result<()> {
    let (ci, cam) = spec
        .cameras
        .iter()
        .enumerate()
        .find(|(_, c)| c.id == ev.camera)
        .ok_or_else(|| Error::invalid(format!("event names unknown camera {:?}", ev.camera)))?;
    let times = frame_times(spec, cam);
    let recs = stream
        .records
        .get_mut(&cam.id)
        .ok_or_else(|| Error::invalid(format!("stream has no camera {:?}", cam.id)))?;
    let thetas = stream
        .truth
        .theta
        .get_mut(&cam.id)
        .ok_or_else(|| Error::invalid(format!("truth has no camera {:?}", cam.id)))?;
    if recs.len() != times.len() || thetas.len() != times.len() {
        return Err(Error::invalid("stream does not match the generator spec"));
    }
    for (fi, &t) in times.iter().enumerate() {
        if !ev.span.contains(t) {
            continue;
        }
        let mut mixture = cam.schedule.mixture_at(t);
        for op in &ev.ops {
            mixture = op.apply(&mixture);
        }
        let (rec, th) = draw_frame(spec, sampler, &cam.id, t, &mixture, frame_seed(spec, ci, fi));
        recs[fi] = rec;
        thetas[fi] = FrameTheta { timestamp: t, theta: th };
    }
    if ev.span.end > ev.span.start && !ev.kinds.is_empty() {
        let tz = spec.timezone()?;
        let last_instant = ev.span.end - Duration::seconds(1);
        let mut day = local_day(&ev.span.start, &tz);
        let last = local_day(&last_instant, &tz);
        while day <= last {
            for &kind in &ev.kinds {
                stream.truth.calendar.insert(day, kind);
            }
            day += Duration::days(1);
        }
    }
    Ok(())
}

/// `n` labels `"{stem} {i:02}"`, alternating between sources 1 and 2.
fn token_labels(stem: &str, n: usize) -> Vec<Label> {
    (0..n)
        .map(|i| {
            if i % 2 == 0 {
                Label::new(1, format!("{stem} {i:02}"))
            } else {
                let mut c = stem.chars();
                let cap: String = c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default();
                Label::new(2, format!("{cap} {i:02}"))
            }
        })
        .collect()
}

/// Rows supported on consecutive disjoint blocks of the vocabulary.
fn block_phi(block_sizes: &[usize], weight: impl Fn(usize) -> f64) -> Vec<Vec<f64>> {
    let m: usize = block_sizes.iter().sum();
    let mut rows = Vec::new();
    let mut offset = 0;
    for &b in block_sizes {
        let mut row = vec![0.0; m];
        let total: f64 = (0..b).map(&weight).sum();
        for r in 0..b {
            row[offset + r] = weight(r) / total;
        }
        rows.push(row);
        offset += b;
    }
    rows
}

fn one_hot(k: usize, z: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[z] = 1.0;
    v
}

pub const RECOVERY_TOPICS: usize = 5;
pub const RECOVERY_BLOCK: usize = 40;
pub const RECOVERY_DOCS: usize = 5000;

/// Five topics on disjoint 40-label blocks. One camera cycles through the topics
/// every day: pure plateaus joined by one-hour linear ramps.
pub fn topic_recovery_spec(seed: u64) -> GeneratorSpec {
    let k = RECOVERY_TOPICS;
    let labels: Vec<Label> = (0..k).flat_map(|z| token_labels(&format!("topic{z}"), RECOVERY_BLOCK)).collect();
    let phi_true = block_phi(&vec![RECOVERY_BLOCK; k], |_| 1.0);
    let slot = 24.0 / k as f64;
    let ramp = 1.0;
    let mut profile = Vec::new();
    for z in 0..k {
        let start = z as f64 * slot;
        profile.push((start, one_hot(k, z)));
        profile.push((start + slot - ramp, one_hot(k, z)));
    }
    let tz = offset_hours(0).expect("zero offset");
    let first = NaiveDate::from_ymd_opt(2018, 3, 1).expect("valid date");
    let schedule = Schedule::daily(first, &tz, &profile);
    let start = day_start(first, &tz);
    let end = start + Duration::seconds(DEFAULT_FRAME_INTERVAL_SECS * RECOVERY_DOCS as i64);
    GeneratorSpec {
        labels,
        phi_true,
        cameras: vec![CameraSpec {
            id: "cam-r".into(),
            spans: vec![TimeSpan::new(start, end)],
            schedule,
        }],
        labels_per_image: 10.0,
        frame_interval_secs: DEFAULT_FRAME_INTERVAL_SECS,
        dirichlet_concentration: None,
        always_present: Vec::new(),
        events: Vec::new(),
        timezone_offset_hours: 0,
        seed,
    }
}

/// Topic indices of the traffic scenario.
pub mod scenario {
    pub const BACKGROUND: usize = 0;
    pub const TRAFFIC: usize = 1;
    pub const NIGHT: usize = 2;
    pub const WINTRY: usize = 3;
    pub const CAMERA: &str = "cam-01";
    pub const TZ_HOURS: i32 = -5;
}

/// Date layout of the traffic scenario: a nominal reference week and a test period.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioLayout {
    pub reference_days: Vec<NaiveDate>,
    pub test_days: Vec<NaiveDate>,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

fn day_range(first: NaiveDate, last: NaiveDate) -> Vec<NaiveDate> {
    first.iter_days().take_while(|d| *d <= last).collect()
}

pub fn scenario_layout() -> ScenarioLayout {
    ScenarioLayout {
        reference_days: day_range(ymd(2017, 11, 6), ymd(2017, 11, 12)),
        test_days: day_range(ymd(2017, 12, 17), ymd(2018, 1, 31)),
    }
}

/// Daily profile over (daylight scene, traffic, night, wintry).
fn traffic_profile() -> Vec<(f64, Vec<f64>)> {
    vec![
        (0.0, vec![0.0, 0.05, 0.95, 0.0]),
        (5.0, vec![0.0, 0.05, 0.95, 0.0]),
        (6.5, vec![0.30, 0.50, 0.20, 0.0]),
        (8.0, vec![0.35, 0.65, 0.0, 0.0]),
        (10.0, vec![0.75, 0.25, 0.0, 0.0]),
        (14.0, vec![0.75, 0.25, 0.0, 0.0]),
        (16.0, vec![0.35, 0.55, 0.10, 0.0]),
        // Dark by the evening rush in winter.
        (17.5, vec![0.0, 0.75, 0.25, 0.0]),
        (19.5, vec![0.0, 0.35, 0.65, 0.0]),
        (21.5, vec![0.0, 0.05, 0.95, 0.0]),
    ]
}

/// One camera, a nominal week in November and 46 test days with holidays, a
/// parking ban, snow days (traffic down, wintry up) and rain days (wintry up only).
pub fn traffic_scenario_spec(seed: u64) -> GeneratorSpec {
    use scenario::*;
    let tz = offset_hours(TZ_HOURS).expect("valid offset");
    let layout = scenario_layout();
    let blocks = [60usize, 30, 30, 30];
    let stems = ["scene", "traffic", "night", "wintry"];
    let labels: Vec<Label> = stems.iter().zip(blocks).flat_map(|(s, b)| token_labels(s, b)).collect();
    // Mildly skewed within each topic.
    let phi_true = block_phi(&blocks, |r| 1.0 / (r as f64 + 8.0));
    let ref_first = layout.reference_days[0];
    let ref_last = *layout.reference_days.last().expect("non-empty");
    let test_first = layout.test_days[0];
    let test_last = *layout.test_days.last().expect("non-empty");
    let at = |d: NaiveDate, h: i64| day_start(d, &tz) + Duration::hours(h);

    let damp_traffic = |f: f64| MixtureOp::Damp { topic: TRAFFIC, factor: f };
    let wintry_to = |level: f64| MixtureOp::Set {
        topic: WINTRY,
        level,
        donors: vec![BACKGROUND, NIGHT],
    };
    let event = |start, end, ops, kinds| InjectedEvent {
        camera: CAMERA.into(),
        span: TimeSpan::new(start, end),
        ops,
        kinds,
    };
    let mut events = Vec::new();
    for d in [ymd(2017, 12, 25), ymd(2017, 12, 26), ymd(2018, 1, 1), ymd(2018, 1, 15)] {
        let factor = if d == ymd(2017, 12, 25) { 0.6 } else { 0.75 };
        events.push(event(at(d, 0), at(d, 24), vec![damp_traffic(factor)], vec![EventKind::Holiday]));
    }
    // The ban comes first so the storm override wins where they overlap.
    events.push(event(
        at(ymd(2018, 1, 4), 7),
        at(ymd(2018, 1, 5), 17),
        vec![damp_traffic(0.5)],
        vec![EventKind::ParkingBan],
    ));
    for d in [ymd(2017, 12, 20), ymd(2018, 1, 4), ymd(2018, 1, 9), ymd(2018, 1, 17), ymd(2018, 1, 30)] {
        let factor = if d == ymd(2018, 1, 4) { 0.5 } else { 0.7 };
        events.push(event(
            at(d, 4),
            at(d, 20),
            vec![damp_traffic(factor), wintry_to(0.5)],
            vec![EventKind::Snow],
        ));
    }
    for d in [ymd(2017, 12, 23), ymd(2018, 1, 12), ymd(2018, 1, 24)] {
        events.push(event(at(d, 4), at(d, 20), vec![wintry_to(0.3)], vec![EventKind::Rain]));
    }

    GeneratorSpec {
        labels,
        phi_true,
        cameras: vec![CameraSpec {
            id: CAMERA.into(),
            spans: vec![
                TimeSpan::local_days(ref_first, ref_last, &tz),
                TimeSpan::local_days(test_first, test_last, &tz),
            ],
            schedule: Schedule::daily(ref_first, &tz, &traffic_profile()),
        }],
        labels_per_image: 12.0,
        frame_interval_secs: DEFAULT_FRAME_INTERVAL_SECS,
        dirichlet_concentration: None,
        always_present: vec![Label::new(1, "massdot"), Label::new(2, "MassDOT")],
        events,
        timezone_offset_hours: TZ_HOURS,
        seed,
    }
}
