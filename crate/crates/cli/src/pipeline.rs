use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use topicsig::changepoint::{
    default_penalty, detect_changepoints, match_events, pair_events, precision_recall_f1, write_events_csv,
    EventCalendar, EventKind, MatchCounts, Metrics,
};
use topicsig::corpus::{build_matrices, per_camera_idf, reweight, BagVector, ImageLabelMatrix};
use topicsig::detect::{best_k, sweep_k, write_scores_csv, write_summary_csv, DetectionSummary};
use topicsig::fmt_f64;
use topicsig::ingest::{
    build_vocabulary, drop_duplicate_frames, frequency_filter, parse_annotations, write_annotations, CorpusStats,
    SourceRegistry, Vocabulary,
};
use topicsig::ratio::RulsifConfig;
use topicsig::signals::{label_signal, resample_linear, topic_signal, write_irregular_csv, IrregularSeries, RegularSeries, SignalKind};
use topicsig::synth::{generate, scenario, scenario_layout, topic_recovery_spec, traffic_scenario_spec, GeneratorSpec, GroundTruth};
use topicsig::time::{format_utc, local_day, offset_hours, parse_utc};
use topicsig::topics::{fit_online_vb, infer_theta, select_k, DocTopicAssignment, SelectConfig, TopicModel};

use crate::config::{Resolved, Settings, Weighting};
use crate::{CliError, CliResult};

/// Paths of the artifacts inside a work directory.
#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

/// File-system-safe form of a camera id.
pub fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workdir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.json")
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.json")
    }

    pub fn matrix(&self, camera: &str) -> (PathBuf, PathBuf) {
        let base = self.root.join("matrices").join(safe_name(camera));
        (base.with_extension("csv"), base.with_extension("json"))
    }

    pub fn cameras(&self) -> PathBuf {
        self.root.join("matrices").join("cameras.json")
    }

    pub fn selection_csv(&self) -> PathBuf {
        self.root.join("selection.csv")
    }

    pub fn selection_json(&self) -> PathBuf {
        self.root.join("selection.json")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model.json")
    }

    pub fn fit_summary(&self) -> PathBuf {
        self.root.join("fit.json")
    }

    pub fn topics_csv(&self) -> PathBuf {
        self.root.join("topics.csv")
    }

    pub fn theta(&self, camera: &str) -> PathBuf {
        self.root.join("theta").join(format!("{}.csv", safe_name(camera)))
    }

    pub fn signal(&self, name: &str) -> PathBuf {
        self.root.join("signals").join(format!("{name}.csv"))
    }

    pub fn raw_signal(&self, name: &str) -> PathBuf {
        self.root.join("signals").join(format!("{name}.raw.csv"))
    }

    pub fn changepoint(&self, name: &str, suffix: &str) -> PathBuf {
        self.root.join("changepoint").join(format!("{name}.{suffix}"))
    }

    pub fn anomaly(&self, name: &str, suffix: &str) -> PathBuf {
        self.root.join("anomaly").join(format!("{name}.{suffix}"))
    }

    pub fn stage_config(&self, stage: &str) -> PathBuf {
        self.root.join("config").join(format!("{stage}.toml"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|_| CliError::input(format!("missing {}; {hint}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn require(path: &Path, hint: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::input(format!("missing {}; {hint}", path.display())))
    }
}

fn echo_config(wd: &Workdir, cfg: &Resolved, stage: &str) -> CliResult<()> {
    write_text(&wd.stage_config(stage), &cfg.echo())
}

fn timezone(s: &Settings) -> CliResult<FixedOffset> {
    Ok(offset_hours(s.timezone_offset_hours)?)
}

const RUN_INGEST: &str = "run `topicsig ingest` first";
const RUN_FIT: &str = "run `topicsig fit` first";
const RUN_SIGNALS: &str = "run `topicsig signals` first";

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub records: usize,
    pub vocabulary: usize,
    pub cameras: BTreeMap<String, usize>,
}

/// Parses annotations, builds and filters the vocabulary, and writes one
/// weighted image-label matrix per camera.
pub fn ingest(cfg: &Resolved) -> CliResult<IngestSummary> {
    let s = &cfg.settings;
    let wd = Workdir::new(&s.workdir);
    let path = s
        .annotations
        .as_ref()
        .ok_or_else(|| CliError::input("no annotations file: set `annotations` in the config or pass --annotations"))?;
    let registry = SourceRegistry::new(s.ingest.sources.iter().copied());
    let mut records = parse_annotations(path, &registry)?;
    if s.ingest.drop_duplicates {
        records = drop_duplicate_frames(records);
    }
    let exclusions: BTreeSet<String> = s.ingest.exclusions.iter().cloned().collect();
    let full = build_vocabulary(&records, &exclusions)?;
    let full_stats = CorpusStats::compute(&records, &full);
    let vocab = frequency_filter(&full, &full_stats, s.ingest.cutoff)?;
    let stats = CorpusStats::compute(&records, &vocab);
    let matrices = build_matrices(&records, &vocab)?;

    ensure_parent(&wd.vocab())?;
    vocab.write_json(&wd.vocab())?;
    stats.write_json(&wd.stats())?;
    let mut cameras = BTreeMap::new();
    for (cam, m) in &matrices {
        let m = match s.ingest.weighting {
            Weighting::Tf => m.clone(),
            Weighting::Tfidf => reweight(m, &per_camera_idf(&vocab, &stats, cam, s.ingest.idf_counts)?)?,
        };
        let (csv, side) = wd.matrix(cam);
        ensure_parent(&csv)?;
        m.write(&csv, &side)?;
        cameras.insert(cam.clone(), m.len());
    }
    write_json(&wd.cameras(), &cameras.keys().collect::<Vec<_>>())?;
    echo_config(&wd, cfg, "ingest")?;
    log::info!("ingested {} records, {} labels, {} cameras", records.len(), vocab.len(), cameras.len());
    Ok(IngestSummary {
        records: records.len(),
        vocabulary: vocab.len(),
        cameras,
    })
}

fn camera_list(wd: &Workdir) -> CliResult<Vec<String>> {
    read_json(&wd.cameras(), RUN_INGEST)
}

fn load_matrices(wd: &Workdir) -> CliResult<(Vocabulary, BTreeMap<String, ImageLabelMatrix>)> {
    require(&wd.vocab(), RUN_INGEST)?;
    let vocab = Vocabulary::read_json(&wd.vocab())?;
    let mut out = BTreeMap::new();
    for cam in camera_list(wd)? {
        let (csv, side) = wd.matrix(&cam);
        require(&csv, RUN_INGEST)?;
        let m = ImageLabelMatrix::read(&csv, &side)?;
        if m.dim() != vocab.len() {
            return Err(CliError::input(format!("matrix for {cam:?} does not match vocab.json; rerun ingest")));
        }
        out.insert(cam, m);
    }
    Ok((vocab, out))
}

fn corpus(matrices: &BTreeMap<String, ImageLabelMatrix>) -> Vec<BagVector> {
    matrices.values().flat_map(|m| m.bags().cloned()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub k_grid: Vec<usize>,
    pub delta_k: usize,
    pub resamples: usize,
    pub seed: u64,
    pub perplexity: Vec<f64>,
    pub k_star: Option<usize>,
}

/// Perplexity over the K grid and the selected K*.
pub fn select(cfg: &Resolved) -> CliResult<SelectionSummary> {
    let s = &cfg.settings;
    let wd = Workdir::new(&s.workdir);
    let (vocab, matrices) = load_matrices(&wd)?;
    let sel = SelectConfig {
        resamples: s.select.resamples,
        split: s.select.split,
        seed: s.select.seed,
        vb: s.topics.vb(),
        priors: s.topics.alpha.map(|_| s.topics.priors(1)),
        rel_tol: s.select.rel_tol,
    };
    let curve = select_k(&corpus(&matrices), vocab.len(), &s.select.k_grid, s.select.delta_k, &sel)?;
    curve.write_csv(&wd.selection_csv())?;
    let summary = SelectionSummary {
        k_grid: curve.k_grid.clone(),
        delta_k: curve.delta_k,
        resamples: s.select.resamples,
        seed: s.select.seed,
        perplexity: curve.perp.clone(),
        k_star: curve.k_star,
    };
    write_json(&wd.selection_json(), &summary)?;
    echo_config(&wd, cfg, "select-k")?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub passes: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub updates: usize,
    pub elbo: Vec<f64>,
    pub vocab_hash: String,
    pub top_labels: Vec<Vec<String>>,
}

fn write_theta(path: &Path, rows: &[(DateTime<Utc>, DocTopicAssignment)], k: usize) -> CliResult<()> {
    let mut out = String::from("timestamp_utc");
    for z in 0..k {
        out.push_str(&format!(",topic_{z}"));
    }
    out.push('\n');
    for (t, a) in rows {
        out.push_str(&format_utc(t));
        for v in &a.theta {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Reads a `theta/<camera>.csv` file back.
pub fn read_theta(path: &Path) -> CliResult<Vec<(DateTime<Utc>, DocTopicAssignment)>> {
    let text = fs::read_to_string(path).map_err(|_| CliError::input(format!("missing {}; {RUN_FIT}", path.display())))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let mut fields = line.split(',');
        let bad = |m: String| CliError::input(format!("{} line {}: {m}", path.display(), n + 1));
        let t = parse_utc(fields.next().unwrap_or_default()).map_err(|e| bad(e.to_string()))?;
        let theta = fields
            .map(|f| f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}"))))
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push((t, DocTopicAssignment { theta }));
    }
    Ok(rows)
}

/// Resolves K for `fit`: the configured value, or K* from `selection.json`.
fn fit_k(s: &Settings, wd: &Workdir) -> CliResult<usize> {
    if !s.topics.use_selection {
        return Ok(s.topics.k);
    }
    let sel: SelectionSummary = read_json(&wd.selection_json(), "run `topicsig select-k` first")?;
    sel.k_star
        .ok_or_else(|| CliError::input("selection found no K*; set topics.k explicitly"))
}

/// Fits the topic model on all cameras' matrices and writes per-image theta.
pub fn fit(cfg: &Resolved) -> CliResult<FitSummary> {
    let s = &cfg.settings;
    let wd = Workdir::new(&s.workdir);
    let (vocab, matrices) = load_matrices(&wd)?;
    let k = fit_k(s, &wd)?;
    let priors = s.topics.priors(k);
    let vb = s.topics.vb();
    let (model, trace) = fit_online_vb(&corpus(&matrices), vocab.len(), k, priors, &vb, &vocab.digest())?;
    model.write_json(&wd.model())?;
    // Theta is inferred with the model as persisted, so later stages agree with it.
    let model = TopicModel::read_json(&wd.model())?;
    let inference = s.topics.inference();
    for (cam, m) in &matrices {
        let rows: Vec<_> = m.rows().iter().map(|(t, b)| (*t, infer_theta(&model, b, &inference))).collect();
        write_theta(&wd.theta(cam), &rows, k)?;
    }
    let mut topics = String::from("topic,rank,label,weight\n");
    let mut top_labels = Vec::new();
    for z in 0..k {
        let top = model.top_labels(z, 10);
        for (r, (j, w)) in top.iter().enumerate() {
            topics.push_str(&format!("{z},{r},\"{}\",{}\n", vocab.label(*j).replace('"', "\"\""), fmt_f64(*w)));
        }
        top_labels.push(top.iter().map(|(j, _)| vocab.label(*j).to_string()).collect());
    }
    write_text(&wd.topics_csv(), &topics)?;
    let summary = FitSummary {
        k,
        alpha: priors.alpha,
        beta: priors.beta,
        passes: vb.passes,
        batch_size: vb.batch_size,
        seed: vb.seed,
        updates: trace.updates,
        elbo: trace.elbo,
        vocab_hash: vocab.digest(),
        top_labels,
    };
    write_json(&wd.fit_summary(), &summary)?;
    echo_config(&wd, cfg, "fit")?;
    Ok(summary)
}

/// What a signal is built from.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalSource {
    /// Column `z` of the fitted theta.
    Topic(usize),
    /// One vocabulary label's weighted presence.
    Label(String),
    /// Column `z` of a synthetic truth bundle.
    TruthTopic { truth: PathBuf, topic: usize },
}

fn crop_days(series: &RegularSeries, tz: &FixedOffset, start: Option<NaiveDate>, end: Option<NaiveDate>) -> CliResult<RegularSeries> {
    if start.is_none() && end.is_none() {
        return Ok(series.clone());
    }
    let keep = |i: usize| {
        let d = local_day(&series.time_at(i), tz);
        start.is_none_or(|a| d >= a) && end.is_none_or(|b| d <= b)
    };
    let idx: Vec<usize> = (0..series.len()).filter(|&i| keep(i)).collect();
    let (Some(&first), Some(&last)) = (idx.first(), idx.last()) else {
        return Err(CliError::input("the day crop leaves no samples"));
    };
    let c = series.channels();
    let values = series.values()[first * c..(last + 1) * c].to_vec();
    Ok(RegularSeries::new(series.time_at(first), series.interval_secs(), c, values)?)
}

/// Builds, resamples and writes one signal per camera. Returns the signal names.
pub fn signals(cfg: &Resolved, source: &SignalSource, cameras: &[String]) -> CliResult<Vec<String>> {
    let s = &cfg.settings;
    let wd = Workdir::new(&s.workdir);
    let mut names = Vec::new();
    let mut emit = |name: String, irregular: IrregularSeries| -> CliResult<()> {
        let regular = resample_linear(&irregular, s.signals.interval_secs, s.signals.align)?;
        ensure_parent(&wd.signal(&name))?;
        write_irregular_csv(&irregular, &wd.raw_signal(&name))?;
        regular.write_csv(&wd.signal(&name))?;
        names.push(name);
        Ok(())
    };
    match source {
        SignalSource::TruthTopic { truth, topic } => {
            let bundle = GroundTruth::read_json(truth).map_err(|e| CliError::input(format!("{}: {e}", truth.display())))?;
            let targets: Vec<String> = if cameras.is_empty() { bundle.theta.keys().cloned().collect() } else { cameras.to_vec() };
            for cam in targets {
                let frames = bundle
                    .theta
                    .get(&cam)
                    .ok_or_else(|| CliError::input(format!("truth bundle has no camera {cam:?}")))?;
                let pts = frames
                    .iter()
                    .map(|f| {
                        f.theta.get(*topic).map(|v| (f.timestamp, *v)).ok_or_else(|| {
                            CliError::input(format!("truth topic {topic} out of range"))
                        })
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                let series = IrregularSeries::new(cam.clone(), SignalKind::Topic(*topic), pts)?;
                emit(format!("{}.truth-topic{topic}", safe_name(&cam)), series)?;
            }
        }
        SignalSource::Topic(z) => {
            require(&wd.model(), RUN_FIT)?;
            let model = TopicModel::read_json(&wd.model())?;
            if *z >= model.num_topics() {
                return Err(CliError::input(format!("topic {z} out of range for K = {}", model.num_topics())));
            }
            let targets = if cameras.is_empty() { camera_list(&wd)? } else { cameras.to_vec() };
            for cam in targets {
                let rows = read_theta(&wd.theta(&cam))?;
                let series = topic_signal(&rows, *z, &cam)?;
                emit(format!("{}.topic{z}", safe_name(&cam)), series)?;
            }
        }
        SignalSource::Label(label) => {
            let (vocab, matrices) = load_matrices(&wd)?;
            let j = vocab
                .get(label)
                .ok_or_else(|| CliError::input(format!("label {label:?} is not in the vocabulary")))?;
            for (cam, m) in &matrices {
                if !cameras.is_empty() && !cameras.contains(cam) {
                    continue;
                }
                emit(format!("{}.label{j}", safe_name(cam)), label_signal(m, j)?)?;
            }
        }
    }
    echo_config(&wd, cfg, "signals")?;
    Ok(names)
}

fn load_signal(wd: &Workdir, s: &Settings, name: &str) -> CliResult<RegularSeries> {
    let path = wd.signal(name);
    require(&path, RUN_SIGNALS)?;
    Ok(RegularSeries::read_csv(&path, Some(s.signals.interval_secs))?)
}

fn load_calendar(s: &Settings, kinds: &[EventKind]) -> CliResult<Option<EventCalendar>> {
    let Some(path) = &s.calendar else {
        return Ok(None);
    };
    let cal = EventCalendar::read_json(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(Some(if kinds.is_empty() { cal } else { cal.restrict(kinds) }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthMetrics {
    pub kinds: Vec<EventKind>,
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TruthMetrics {
    fn new(kinds: &[EventKind], counts: MatchCounts, m: Metrics) -> Self {
        TruthMetrics {
            kinds: kinds.to_vec(),
            counts,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChangepointSummary {
    pub signal: String,
    pub samples: usize,
    pub penalty: f64,
    pub penalty_rule: Option<String>,
    pub change_points: Vec<String>,
    pub total_cost: f64,
    pub events: usize,
    pub merge_window_hours: f64,
    pub top_n: usize,
    pub tolerance_hours: f64,
    pub truth: Option<TruthMetrics>,
}

/// Penalized mean-change segmentation of one signal, paired into events.
pub fn changepoint(cfg: &Resolved, name: &str) -> CliResult<ChangepointSummary> {
    let s = &cfg.settings;
    let c = &s.changepoint;
    let wd = Workdir::new(&s.workdir);
    let tz = timezone(s)?;
    let series = crop_days(&load_signal(&wd, s, name)?, &tz, c.start_day, c.end_day)?;
    if series.channels() != 1 {
        return Err(CliError::input("change points need a univariate signal"));
    }
    let penalty = c.penalty.unwrap_or_else(|| default_penalty(&series));
    let result = detect_changepoints(&series, penalty)?;
    let merge = (c.merge_window_hours * 3600.0).round() as i64;
    let events = pair_events(&result, &series, merge, c.top_n);
    let events_path = wd.changepoint(name, "events.csv");
    ensure_parent(&events_path)?;
    write_events_csv(&events, &events_path)?;

    // Plot data: the signal with its piecewise-constant fit.
    let bounds = result.boundaries(series.len());
    let mut fit = String::from("timestamp_utc,value,fitted\n");
    for (seg, w) in bounds.windows(2).enumerate() {
        for i in w[0]..w[1] {
            fit.push_str(&format!(
                "{},{},{}\n",
                format_utc(&series.time_at(i)),
                fmt_f64(series.at(i)[0]),
                fmt_f64(result.segment_means[seg])
            ));
        }
    }
    write_text(&wd.changepoint(name, "fit.csv"), &fit)?;

    let tol = (c.tolerance_hours * 3600.0).round() as i64;
    let truth = load_calendar(s, &c.truth_kinds)?.map(|cal| {
        let counts = match_events(&events, &cal, tol, &tz);
        TruthMetrics::new(&c.truth_kinds, counts, precision_recall_f1(counts))
    });
    let summary = ChangepointSummary {
        signal: name.to_string(),
        samples: series.len(),
        penalty,
        penalty_rule: c.penalty.is_none().then(|| "||X||_2/20".to_string()),
        change_points: result.rho.iter().map(|&i| format_utc(&series.time_at(i))).collect(),
        total_cost: result.total_cost,
        events: events.len(),
        merge_window_hours: c.merge_window_hours,
        top_n: c.top_n,
        tolerance_hours: c.tolerance_hours,
        truth,
    };
    write_json(&wd.changepoint(name, "metrics.json"), &summary)?;
    echo_config(&wd, cfg, "changepoint")?;
    Ok(summary)
}

fn day_set(start: Option<NaiveDate>, end: Option<NaiveDate>) -> Option<BTreeSet<NaiveDate>> {
    match (start, end) {
        (Some(a), Some(b)) => Some(a.iter_days().take_while(|d| *d <= b).collect()),
        (Some(a), None) => Some(BTreeSet::from([a])),
        (None, Some(b)) => Some(BTreeSet::from([b])),
        (None, None) => None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnomalySummary {
    pub signal: String,
    pub gamma: f64,
    pub seed: u64,
    pub reference_days: Vec<NaiveDate>,
    pub scored_days: usize,
    pub truth_kinds: Vec<EventKind>,
    pub rows: Vec<SummaryRow>,
    pub best: SummaryRow,
}

/// One line of the `(k, tau*, AUC, F1*)` table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SummaryRow {
    pub k: usize,
    pub tau_star: f64,
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub counts: MatchCounts,
    pub prevalence: f64,
}

impl From<DetectionSummary> for SummaryRow {
    fn from(d: DetectionSummary) -> Self {
        SummaryRow {
            k: d.k,
            tau_star: d.tau_star,
            auc: d.auc,
            f1: d.f1_star,
            precision: d.precision,
            recall: d.recall,
            counts: d.counts,
            prevalence: d.prevalence,
        }
    }
}

/// Daily RPDAS against the reference days, for every k, with PR curves.
pub fn anomaly(cfg: &Resolved, name: &str) -> CliResult<AnomalySummary> {
    let s = &cfg.settings;
    let a = &s.anomaly;
    let wd = Workdir::new(&s.workdir);
    let tz = timezone(s)?;
    let series = load_signal(&wd, s, name)?;
    let refs = day_set(a.reference_start, a.reference_end)
        .ok_or_else(|| CliError::input("set anomaly.reference_start and anomaly.reference_end"))?;
    let tests = day_set(a.test_start, a.test_end);
    let truth = load_calendar(s, &a.truth_kinds)?
        .ok_or_else(|| CliError::input("anomaly scoring needs a calendar: set `calendar` in the config"))?;
    let rulsif = RulsifConfig {
        gamma: a.gamma,
        folds: a.folds,
        max_centers: a.max_centers,
        seed: a.seed,
        ..RulsifConfig::default()
    };
    let results = sweep_k(&series, &tz, &refs, tests.as_ref(), &a.ks, &truth, &rulsif, a.tau_points)?;
    let best = best_k(&results).ok_or_else(|| CliError::input("no k values to sweep"))?;

    let scores_path = wd.anomaly(name, "scores.csv");
    ensure_parent(&scores_path)?;
    write_scores_csv(&results.iter().map(|r| &r.scores).collect::<Vec<_>>(), &scores_path)?;
    for r in &results {
        r.curve.write_csv(&wd.anomaly(name, &format!("k{}.pr.csv", r.scores.k)))?;
    }
    let rows: Vec<DetectionSummary> = results.iter().map(|r| r.summary()).collect();
    write_summary_csv(&rows, &wd.anomaly(name, "summary.csv"))?;
    let summary = AnomalySummary {
        signal: name.to_string(),
        gamma: a.gamma,
        seed: a.seed,
        reference_days: refs.into_iter().collect(),
        scored_days: best.scores.windows.len(),
        truth_kinds: a.truth_kinds.clone(),
        rows: rows.iter().copied().map(SummaryRow::from).collect(),
        best: best.summary().into(),
    };
    write_json(&wd.anomaly(name, "summary.json"), &summary)?;
    echo_config(&wd, cfg, "anomaly")?;
    Ok(summary)
}

fn stage_files(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.to_string_lossy().ends_with(suffix))
                .collect()
        })
        .unwrap_or_default();
    out.sort();
    out
}

fn read_value(path: &Path) -> CliResult<Value> {
    read_json(path, "artifact is unreadable")
}

/// Collects every stage's metrics into `report.json` and a tidy `report.csv`.
/// Stages without artifacts are listed under `missing`.
pub fn report(cfg: &Resolved) -> CliResult<Value> {
    let wd = Workdir::new(&cfg.settings.workdir);
    let mut stages = serde_json::Map::new();
    let mut missing = Vec::new();
    let mut tidy = String::from("stage,item,metric,value\n");
    let mut row = |stage: &str, item: &str, metric: &str, v: &Value| {
        if let Some(x) = v.as_f64() {
            tidy.push_str(&format!("{stage},{item},{metric},{}\n", fmt_f64(x)));
        }
    };

    if wd.stats().exists() && wd.vocab().exists() {
        let stats = read_value(&wd.stats())?;
        let vocab = read_value(&wd.vocab())?;
        let labels = vocab.get("labels").and_then(Value::as_array).map_or(0, Vec::len);
        row("ingest", "all", "images", &stats["total"]);
        row("ingest", "all", "labels", &json!(labels));
        stages.insert("ingest".into(), json!({ "images": stats["total"], "labels": labels, "per_camera": stats["per_camera_counts"] }));
    } else {
        missing.push("ingest");
    }
    if wd.selection_json().exists() {
        let v = read_value(&wd.selection_json())?;
        row("select-k", "all", "k_star", &v["k_star"]);
        stages.insert("select-k".into(), v);
    } else {
        missing.push("select-k");
    }
    if wd.fit_summary().exists() {
        let v = read_value(&wd.fit_summary())?;
        row("fit", "all", "k", &v["k"]);
        stages.insert("fit".into(), v);
    } else {
        missing.push("fit");
    }
    let signal_files = stage_files(&wd.root().join("signals"), ".csv");
    let names: Vec<String> = signal_files
        .iter()
        .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
        .filter(|f| !f.ends_with(".raw.csv"))
        .map(|f| f.trim_end_matches(".csv").to_string())
        .collect();
    if names.is_empty() {
        missing.push("signals");
    } else {
        stages.insert("signals".into(), json!(names));
    }
    for (stage, dir, suffix) in [
        ("changepoint", "changepoint", ".metrics.json"),
        ("anomaly", "anomaly", ".summary.json"),
    ] {
        let files = stage_files(&wd.root().join(dir), suffix);
        if files.is_empty() {
            missing.push(stage);
            continue;
        }
        let mut by_signal = serde_json::Map::new();
        for f in files {
            let v = read_value(&f)?;
            let name = v["signal"].as_str().unwrap_or_default().to_string();
            if stage == "changepoint" {
                row(stage, &name, "events", &v["events"]);
                if let Some(t) = v.get("truth").filter(|t| !t.is_null()) {
                    for m in ["precision", "recall", "f1"] {
                        row(stage, &name, m, &t[m]);
                    }
                }
            } else if let Some(rows) = v["rows"].as_array() {
                for r in rows {
                    let k = r["k"].as_u64().unwrap_or_default();
                    for m in ["tau_star", "auc", "f1"] {
                        row(stage, &name, &format!("k{k}.{m}"), &r[m]);
                    }
                }
            }
            by_signal.insert(name, v);
        }
        stages.insert(stage.into(), Value::Object(by_signal));
    }
    let report = json!({ "stages": stages, "missing": missing });
    write_json(&wd.report(), &report)?;
    write_text(&wd.report_csv(), &tidy)?;
    Ok(report)
}

/// Built-in generator presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Five topics on disjoint label blocks, 5000 frames.
    TopicRecovery,
    /// Nominal week plus 46 test days with injected traffic and storm events.
    Traffic,
}

impl Preset {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "topic-recovery" => Ok(Preset::TopicRecovery),
            "traffic" => Ok(Preset::Traffic),
            _ => Err(CliError::input(format!("unknown preset {s:?}; expected topic-recovery or traffic"))),
        }
    }
}

/// Reads a generator spec; `.toml` files are TOML, anything else JSON.
pub fn read_spec(path: &Path) -> CliResult<GeneratorSpec> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub records: usize,
    pub cameras: usize,
    pub calendar_entries: usize,
}

fn scenario_config() -> String {
    let lay = scenario_layout();
    let first = |v: &[NaiveDate]| v[0];
    let last = |v: &[NaiveDate]| v[v.len() - 1];
    format!(
        "annotations = \"annotations.jsonl\"\n\
         calendar = \"calendar.json\"\n\
         workdir = \"work\"\n\
         timezone_offset_hours = {tz}\n\n\
         # Rain days shift idf enough to blur the traffic topic; presence weights keep it sharp.\n\
         [ingest]\nweighting = \"tf\"\n\n\
         [topics]\nk = 5\npasses = 200\n\n\
         [changepoint]\nstart_day = \"{ts}\"\nend_day = \"{te}\"\ntruth_kinds = [\"snow\", \"rain\"]\n\n\
         [anomaly]\nreference_start = \"{rs}\"\nreference_end = \"{re}\"\ntest_start = \"{ts}\"\ntest_end = \"{te}\"\n\
         truth_kinds = [\"snow\", \"holiday\", \"parking_ban\"]\n",
        tz = scenario::TZ_HOURS,
        rs = first(&lay.reference_days),
        re = last(&lay.reference_days),
        ts = first(&lay.test_days),
        te = last(&lay.test_days),
    )
}

/// Generates annotations plus truth from a spec file or a preset.
pub fn synth(spec: &GeneratorSpec, out: &Path, preset: Option<Preset>) -> CliResult<SynthSummary> {
    let stream = generate(spec)?;
    fs::create_dir_all(out).map_err(|e| CliError::input(format!("cannot create {}: {e}", out.display())))?;
    let records = stream.all_records();
    write_annotations(&out.join("annotations.jsonl"), &records)?;
    stream.truth.write_json(&out.join("truth.json"))?;
    stream.truth.calendar.write_json(&out.join("calendar.json"))?;
    write_json(&out.join("spec.json"), spec)?;
    if preset == Some(Preset::Traffic) {
        write_text(&out.join("pipeline.toml"), &scenario_config())?;
    }
    Ok(SynthSummary {
        records: records.len(),
        cameras: stream.records.len(),
        calendar_entries: stream.truth.calendar.len(),
    })
}

pub fn preset_spec(preset: Preset, seed: u64) -> GeneratorSpec {
    match preset {
        Preset::TopicRecovery => topic_recovery_spec(seed),
        Preset::Traffic => traffic_scenario_spec(seed),
    }
}

/// Whole local days covered by a series, for messages and tests.
pub fn covered_days(series: &RegularSeries, tz: &FixedOffset) -> Vec<NaiveDate> {
    let mut days: Vec<NaiveDate> = (0..series.len()).map(|i| local_day(&series.time_at(i), tz)).collect();
    days.dedup();
    days
}

/// Start of the local day after `d`, handy when cropping by hand.
pub fn next_day(d: NaiveDate) -> NaiveDate {
    d + Duration::days(1)
}
