//! Pipeline configuration: a TOML file, `--set` overrides, and the echoed
//! effective configuration with the origin of every value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use topicsig::changepoint::{EventKind, DEFAULT_MERGE_WINDOW_SECS, DEFAULT_TOLERANCE_SECS, DEFAULT_TOP_N};
use topicsig::corpus::IdfCounts;
use topicsig::detect::{DEFAULT_GAMMA, DEFAULT_KS, DEFAULT_TAU_POINTS};
use topicsig::ingest::{DEFAULT_CUTOFF, DEFAULT_EXCLUSIONS};
use topicsig::signals::{GridAlignment, DEFAULT_INTERVAL_SECS};
use topicsig::topics::{InferenceConfig, OnlineVbConfig, Priors};

use crate::CliError;

/// How image-label matrices are weighted before topic fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Binary presence.
    Tf,
    /// Binary presence times the per-camera idf.
    Tfidf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub cutoff: f64,
    pub exclusions: Vec<String>,
    pub sources: Vec<u32>,
    pub weighting: Weighting,
    pub idf_counts: IdfCounts,
    pub drop_duplicates: bool,
}

impl Default for IngestSettings {
    fn default() -> Self {
        IngestSettings {
            cutoff: DEFAULT_CUTOFF,
            exclusions: DEFAULT_EXCLUSIONS.iter().map(|s| s.to_string()).collect(),
            sources: vec![1, 2],
            weighting: Weighting::Tfidf,
            idf_counts: IdfCounts::PerCamera,
            drop_duplicates: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicSettings {
    pub k: usize,
    /// Take K from `selection.json` instead of `k`.
    pub use_selection: bool,
    /// Unset means `50 / K`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub batch_size: usize,
    pub passes: usize,
    pub kappa: f64,
    pub tau0: f64,
    pub max_iterations: usize,
    pub tol: f64,
    pub track_elbo: bool,
    pub seed: u64,
}

impl Default for TopicSettings {
    fn default() -> Self {
        let vb = OnlineVbConfig::default();
        TopicSettings {
            k: 20,
            use_selection: false,
            alpha: None,
            beta: Priors::for_topics(1).beta,
            batch_size: vb.batch_size,
            passes: vb.passes,
            kappa: vb.kappa,
            tau0: vb.tau0,
            max_iterations: vb.inference.max_iterations,
            tol: vb.inference.tol,
            track_elbo: false,
            seed: 0,
        }
    }
}

impl TopicSettings {
    pub fn priors(&self, k: usize) -> Priors {
        let mut p = Priors::for_topics(k);
        if let Some(a) = self.alpha {
            p.alpha = a;
        }
        p.beta = self.beta;
        p
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            max_iterations: self.max_iterations,
            tol: self.tol,
        }
    }

    pub fn vb(&self) -> OnlineVbConfig {
        OnlineVbConfig {
            batch_size: self.batch_size,
            passes: self.passes,
            kappa: self.kappa,
            tau0: self.tau0,
            inference: self.inference(),
            seed: self.seed,
            track_elbo: self.track_elbo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSettings {
    pub k_grid: Vec<usize>,
    pub delta_k: usize,
    pub resamples: usize,
    pub split: f64,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for SelectSettings {
    fn default() -> Self {
        SelectSettings {
            k_grid: vec![5, 10, 15, 20, 25, 30],
            delta_k: 5,
            resamples: 50,
            split: 0.8,
            rel_tol: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSettings {
    pub interval_secs: i64,
    pub align: GridAlignment,
}

impl Default for SignalSettings {
    fn default() -> Self {
        SignalSettings {
            interval_secs: DEFAULT_INTERVAL_SECS,
            align: GridAlignment::Clock,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChangepointSettings {
    /// Unset means `||X||_2 / 20` of the analysed signal.
    pub penalty: Option<f64>,
    pub merge_window_hours: f64,
    pub top_n: usize,
    pub tolerance_hours: f64,
    /// Optional crop of the signal to whole local days.
    pub start_day: Option<NaiveDate>,
    pub end_day: Option<NaiveDate>,
    /// Calendar kinds counted as truth; empty means all.
    pub truth_kinds: Vec<EventKind>,
}

impl Default for ChangepointSettings {
    fn default() -> Self {
        ChangepointSettings {
            penalty: None,
            merge_window_hours: DEFAULT_MERGE_WINDOW_SECS as f64 / 3600.0,
            top_n: DEFAULT_TOP_N,
            tolerance_hours: DEFAULT_TOLERANCE_SECS as f64 / 3600.0,
            start_day: None,
            end_day: None,
            truth_kinds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalySettings {
    pub gamma: f64,
    pub ks: Vec<usize>,
    pub tau_points: usize,
    /// Inclusive range of nominal reference days.
    pub reference_start: Option<NaiveDate>,
    pub reference_end: Option<NaiveDate>,
    /// Inclusive range of scored days; unset scores every other full day.
    pub test_start: Option<NaiveDate>,
    pub test_end: Option<NaiveDate>,
    pub truth_kinds: Vec<EventKind>,
    pub folds: usize,
    pub max_centers: usize,
    pub seed: u64,
}

impl Default for AnomalySettings {
    fn default() -> Self {
        AnomalySettings {
            gamma: DEFAULT_GAMMA,
            ks: DEFAULT_KS.to_vec(),
            tau_points: DEFAULT_TAU_POINTS,
            reference_start: None,
            reference_end: None,
            test_start: None,
            test_end: None,
            truth_kinds: Vec::new(),
            folds: 5,
            max_centers: 100,
            seed: 0,
        }
    }
}

/// Fully resolved configuration. Missing keys take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub annotations: Option<PathBuf>,
    pub workdir: PathBuf,
    pub calendar: Option<PathBuf>,
    pub timezone_offset_hours: i32,
    pub ingest: IngestSettings,
    pub topics: TopicSettings,
    pub select: SelectSettings,
    pub signals: SignalSettings,
    pub changepoint: ChangepointSettings,
    pub anomaly: AnomalySettings,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            annotations: None,
            workdir: PathBuf::from("topicsig-out"),
            calendar: None,
            timezone_offset_hours: 0,
            ingest: IngestSettings::default(),
            topics: TopicSettings::default(),
            select: SelectSettings::default(),
            signals: SignalSettings::default(),
            changepoint: ChangepointSettings::default(),
            anomaly: AnomalySettings::default(),
        }
    }
}

/// Where a value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Origin {
    Default,
    File,
    Flag,
}

/// Notes attached to defaults whose values come from the method itself.
const DEFAULT_NOTES: &[(&str, &str)] = &[
    ("ingest.cutoff", "document-frequency high-pass cutoff"),
    ("signals.interval_secs", "5 min resampling grid"),
    ("topics.alpha", "document-topic prior 50/K"),
    ("topics.beta", "topic-label prior"),
    ("changepoint.penalty", "penalty ||X||_2/20 of the analysed signal"),
    ("anomaly.gamma", "relative density parameter"),
    ("anomaly.ks", "subsequence lengths swept"),
    ("changepoint.merge_window_hours", "24 h minimum event duration"),
    ("changepoint.top_n", "top detection events kept"),
    ("changepoint.tolerance_hours", "+-12 h validation window"),
];

/// Settings together with the origin of each leaf key.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub settings: Settings,
    origins: BTreeMap<String, Origin>,
}

fn leaf_paths(table: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => leaf_paths(t, &path, out),
            _ => out.push(path),
        }
    }
}

/// TOML dates become plain strings so they deserialize as calendar dates.
fn dates_as_strings(table: &mut Table) {
    for (_, v) in table.iter_mut() {
        match v {
            Value::Datetime(d) => *v = Value::String(d.to_string()),
            Value::Table(t) => dates_as_strings(t),
            _ => {}
        }
    }
}

fn parse_override(raw: &str) -> Result<(String, Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::input(format!("override {raw:?} is not of the form key=value")))?;
    let key = key.trim().to_string();
    if key.is_empty() {
        return Err(CliError::input(format!("override {raw:?} has an empty key")));
    }
    let text = value.trim();
    // Parse as a TOML value; bare words fall back to strings.
    let parsed = format!("v = {text}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()));
    Ok((key, parsed))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::input(format!("override {key:?}: {p:?} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl Resolved {
    /// Reads `config` (if any) and applies `key=value` overrides on top.
    pub fn load(config: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::input(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::input(format!("config {}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        dates_as_strings(&mut table);
        let mut origins = BTreeMap::new();
        let mut file_keys = Vec::new();
        leaf_paths(&table, "", &mut file_keys);
        for k in file_keys {
            origins.insert(k, Origin::File);
        }
        for raw in overrides {
            let (key, mut value) = parse_override(raw)?;
            if let Value::Datetime(d) = &value {
                value = Value::String(d.to_string());
            }
            set_path(&mut table, &key, value)?;
            origins.insert(key, Origin::Flag);
        }
        let mut settings: Settings = Value::Table(table)
            .try_into()
            .map_err(|e| CliError::input(format!("invalid configuration: {e}")))?;
        if let Some(dir) = config.and_then(Path::parent) {
            // Relative paths in a file are relative to that file.
            for (key, path) in [
                ("annotations", settings.annotations.as_mut()),
                ("calendar", settings.calendar.as_mut()),
                ("workdir", Some(&mut settings.workdir)),
            ] {
                if let Some(p) = path {
                    if origins.get(key) == Some(&Origin::File) && p.is_relative() {
                        *p = dir.join(&*p);
                    }
                }
            }
        }
        let resolved = Resolved { settings, origins };
        resolved.validate()?;
        Ok(resolved)
    }

    pub fn origin(&self, key: &str) -> Origin {
        self.origins.get(key).copied().unwrap_or(Origin::Default)
    }

    fn validate(&self) -> Result<(), CliError> {
        let s = &self.settings;
        let bad = |m: &str| Err(CliError::input(format!("invalid configuration: {m}")));
        if !(0.0..1.0).contains(&s.ingest.cutoff) {
            return bad("ingest.cutoff must lie in [0, 1)");
        }
        if s.ingest.sources.is_empty() {
            return bad("ingest.sources must not be empty");
        }
        if s.topics.k == 0 || s.topics.batch_size == 0 {
            return bad("topics.k and topics.batch_size must be positive");
        }
        if let Some(a) = s.topics.alpha {
            if !(a > 0.0) {
                return bad("topics.alpha must be positive");
            }
        }
        if !(s.topics.beta > 0.0) || !(s.topics.kappa > 0.5 && s.topics.kappa <= 1.0) || !(s.topics.tau0 >= 0.0) {
            return bad("topics.beta must be positive, kappa in (0.5, 1], tau0 >= 0");
        }
        if !(s.select.split > 0.0 && s.select.split < 1.0) || s.select.resamples == 0 || s.select.delta_k == 0 {
            return bad("select.split must lie in (0, 1); resamples and delta_k must be positive");
        }
        if s.signals.interval_secs <= 0 {
            return bad("signals.interval_secs must be positive");
        }
        if let Some(b) = s.changepoint.penalty {
            if !(b >= 0.0) {
                return bad("changepoint.penalty must be non-negative");
            }
        }
        if !(s.changepoint.merge_window_hours >= 0.0) || !(s.changepoint.tolerance_hours >= 0.0) {
            return bad("changepoint windows must be non-negative");
        }
        if !(s.anomaly.gamma > 0.0 && s.anomaly.gamma <= 1.0) {
            return bad("anomaly.gamma must lie in (0, 1]");
        }
        if s.anomaly.ks.is_empty() || s.anomaly.ks.contains(&0) {
            return bad("anomaly.ks must be non-empty and positive");
        }
        if s.anomaly.folds < 2 || s.anomaly.max_centers == 0 {
            return bad("anomaly.folds must be at least 2 and max_centers positive");
        }
        topicsig::time::offset_hours(s.timezone_offset_hours).map_err(CliError::from)?;
        Ok(())
    }

    /// The effective configuration as TOML, with rules for derived defaults
    /// and an `[origin]` table naming the source of every value.
    pub fn echo(&self) -> String {
        let mut value = Value::try_from(&self.settings).expect("settings serialize to TOML");
        let table = value.as_table_mut().expect("settings are a table");
        if self.settings.topics.alpha.is_none() {
            if let Some(Value::Table(t)) = table.get_mut("topics") {
                t.insert("alpha_rule".into(), Value::String("50/K".into()));
            }
        }
        if self.settings.changepoint.penalty.is_none() {
            if let Some(Value::Table(t)) = table.get_mut("changepoint") {
                t.insert("penalty_rule".into(), Value::String("||X||_2/20".into()));
            }
        }
        let mut keys = Vec::new();
        leaf_paths(table, "", &mut keys);
        for (k, _) in DEFAULT_NOTES {
            keys.push(k.to_string());
        }
        keys.sort();
        keys.dedup();
        let mut origin = Table::new();
        for k in keys {
            let base = k
                .strip_suffix("_rule")
                .map(str::to_string)
                .unwrap_or_else(|| k.clone());
            let text = match self.origin(&base) {
                Origin::File => "file".to_string(),
                Origin::Flag => "flag".to_string(),
                Origin::Default => match DEFAULT_NOTES.iter().find(|(n, _)| *n == base) {
                    Some((_, note)) => format!("default: {note}"),
                    None => "default".to_string(),
                },
            };
            origin.insert(k, Value::String(text));
        }
        table.insert("origin".into(), Value::Table(origin));
        toml::to_string(&value).expect("TOML serialization cannot fail")
    }
}
