use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use topicsig_cli::pipeline::{self, Preset, SignalSource};
use topicsig_cli::{CliError, CliResult, Resolved};

#[derive(Parser, Debug)]
#[command(name = "topicsig", version, about = "Topic signals, change points and anomaly scores from image annotations")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Work directory for all artifacts.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Override any setting, e.g. `--set topics.k=10`. Repeatable; wins over the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse annotations and build per-camera image-label matrices.
    Ingest {
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Held-out perplexity over a K grid.
    SelectK {
        #[arg(long)]
        resamples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the topic model and infer per-image topic mixtures.
    Fit {
        #[arg(long)]
        k: Option<usize>,
        /// Use K* from a previous select-k run.
        #[arg(long)]
        use_selection: bool,
        #[arg(long)]
        passes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build and resample topic or label signals.
    Signals(SignalArgs),
    /// Penalized change-point detection on one signal.
    Changepoint {
        /// Signal name as written by `signals`, e.g. `cam-01.topic3`.
        #[arg(long)]
        signal: String,
        #[arg(long)]
        penalty: Option<f64>,
    },
    /// Daily density-ratio anomaly scores on one signal.
    Anomaly {
        #[arg(long)]
        signal: String,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic annotation stream with ground truth.
    Synth {
        /// Generator spec, JSON or TOML.
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        spec: Option<PathBuf>,
        /// `traffic` or `topic-recovery`.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate the metrics of every finished stage.
    Report,
    /// Print the effective configuration with the origin of each value.
    Config,
}

#[derive(Args, Debug)]
struct SignalArgs {
    /// Topic index.
    #[arg(long, conflicts_with = "label", required_unless_present = "label")]
    topic: Option<usize>,
    /// Prefixed vocabulary label, e.g. `1:car`.
    #[arg(long)]
    label: Option<String>,
    /// Take topic mixtures from a synthetic truth bundle instead of the fitted model.
    #[arg(long, requires = "topic", conflicts_with = "label")]
    from_truth: Option<PathBuf>,
    /// Restrict to these cameras. Repeatable.
    #[arg(long = "camera")]
    cameras: Vec<String>,
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn push<T: ToString>(out: &mut Vec<String>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        out.push(format!("{key}={}", v.to_string()));
    }
}

/// Flattens flags into `key=value` overrides, applied after `--set`.
fn flag_overrides(cli: &Cli) -> Vec<String> {
    let mut out = cli.overrides.clone();
    if let Some(w) = &cli.workdir {
        out.push(format!("workdir={}", toml_string(&w.to_string_lossy())));
    }
    match &cli.command {
        Command::Ingest { annotations: Some(a) } => {
            out.push(format!("annotations={}", toml_string(&a.to_string_lossy())));
        }
        Command::SelectK { resamples, seed } => {
            push(&mut out, "select.resamples", resamples);
            push(&mut out, "select.seed", seed);
        }
        Command::Fit { k, use_selection, passes, seed } => {
            push(&mut out, "topics.k", k);
            if *use_selection {
                out.push("topics.use_selection=true".into());
            }
            push(&mut out, "topics.passes", passes);
            push(&mut out, "topics.seed", seed);
        }
        Command::Changepoint { penalty, .. } => push(&mut out, "changepoint.penalty", penalty),
        Command::Anomaly { gamma, seed, .. } => {
            push(&mut out, "anomaly.gamma", gamma);
            push(&mut out, "anomaly.seed", seed);
        }
        _ => {}
    }
    out
}

fn emit(text: &str) -> CliResult<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print<T: Serialize>(value: &T) -> CliResult<()> {
    emit(&format!("{}\n", serde_json::to_string_pretty(value)?))
}

fn run(cli: Cli) -> CliResult<()> {
    if let Command::Synth { spec, preset, seed, out } = &cli.command {
        let preset = preset.as_deref().map(Preset::parse).transpose()?;
        let spec = match (spec, preset) {
            (Some(path), _) => pipeline::read_spec(path)?,
            (None, Some(p)) => pipeline::preset_spec(p, *seed),
            (None, None) => return Err(CliError::input("pass --spec or --preset")),
        };
        return print(&pipeline::synth(&spec, out, preset)?);
    }
    let cfg = Resolved::load(cli.config.as_deref(), &flag_overrides(&cli))?;
    match &cli.command {
        Command::Ingest { .. } => print(&pipeline::ingest(&cfg)?),
        Command::SelectK { .. } => print(&pipeline::select(&cfg)?),
        Command::Fit { .. } => print(&pipeline::fit(&cfg)?),
        Command::Signals(a) => {
            let source = match (&a.topic, &a.label, &a.from_truth) {
                (Some(z), _, Some(truth)) => SignalSource::TruthTopic {
                    truth: truth.clone(),
                    topic: *z,
                },
                (Some(z), _, None) => SignalSource::Topic(*z),
                (None, Some(l), _) => SignalSource::Label(l.clone()),
                (None, None, _) => return Err(CliError::input("pass --topic or --label")),
            };
            print(&pipeline::signals(&cfg, &source, &a.cameras)?)
        }
        Command::Changepoint { signal, .. } => print(&pipeline::changepoint(&cfg, signal)?),
        Command::Anomaly { signal, .. } => print(&pipeline::anomaly(&cfg, signal)?),
        Command::Report => print(&pipeline::report(&cfg)?),
        Command::Config => emit(&cfg.echo()),
        Command::Synth { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { topicsig_cli::EXIT_BAD_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
