//! Command-line front end: the `train`, `ablate`, and `report` subcommands
//! and their artifact emission.
//!
//! * `train --config PATH --out DIR [--set key.path=value ...]` runs a
//!   curriculum and writes per-stage metrics CSVs, checkpoints, and a
//!   `manifest.json` that is self-contained: the resolved config embedded in
//!   it reproduces the run with no other inputs.
//! * `ablate --config PATH --strategies a,b --seeds s1,s2 --out DIR` runs
//!   every (strategy, seed) pair from paired initial policies and emits one
//!   curves CSV per strategy, a summary table as CSV and aligned text, and
//!   an SVG overlaying the reward-accuracy curves.
//! * `report --runs DIR[,DIR...] --out DIR` reads manifests and metrics from
//!   finished runs and renders the four-panel training-dynamics figure
//!   (reward accuracy, entropy, mean response length, clip fraction).
//!
//! Errors print as a single JSON line on stderr and exit nonzero; log
//! verbosity is controlled by the `RUST_LOG` environment variable.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::config::{apply_override, load_value, ConfigError, RunConfig};
use crate::manifest::{format_config_hash, timestamp_now, Artifact, ManifestError, RunManifest};
use crate::metrics::{read_metrics_csv, MetricsError, TrainMetrics};
use crate::pad::{PadError, Strategy};
use crate::plot::{four_panel, line_chart, Series};
use crate::trainer::{run_ablation, run_curriculum, LogSink, StrategySummary, TrainerError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("run directory {dir}: {reason}")]
    RunDir { dir: String, reason: String },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    WriteCsv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Strategy(#[from] PadError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type CliResult<T> = Result<T, CliError>;

/// Desk-scale training simulator for prioritized advantage distillation.
#[derive(Debug, Parser)]
#[command(name = "padsim", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a training curriculum from a JSON config.
    Train {
        /// Path to the run config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; its basename becomes the run id.
        #[arg(long)]
        out: PathBuf,
        /// Dotted-path config override, e.g. --set stages.0.pad.rho=0.25.
        /// May be given multiple times; applied in order.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Compare batch-selection strategies over a seed set.
    Ablate {
        /// Path to the run config (JSON); stages[0] is the ablation base.
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated strategy names (at least two).
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the four-panel training-dynamics figure for finished runs.
    Report {
        /// Comma-separated run directories (each holding a manifest.json).
        #[arg(long, value_delimiter = ',', required = true)]
        runs: Vec<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, out, set } => {
            cmd_train(&config, &out, &set)?;
        }
        Command::Ablate {
            config,
            strategies,
            seeds,
            out,
        } => {
            cmd_ablate(&config, &strategies, &seeds, &out)?;
        }
        Command::Report { runs, out } => {
            cmd_report(&runs, &out)?;
        }
    }
    Ok(())
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Writes serde rows as a headered CSV; the same writer settings as the
/// metrics schema, so parse → re-emit is byte-identical.
pub fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|source| CliError::WriteCsv {
        path: path.display().to_string(),
        source,
    })?;
    let map_err = |source: csv::Error| CliError::WriteCsv {
        path: path.display().to_string(),
        source,
    };
    for row in rows {
        writer.serialize(row).map_err(map_err)?;
    }
    writer.flush().map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a headered CSV of serde rows back.
pub fn read_rows_csv<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| CliError::WriteCsv {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row.map_err(|source| CliError::WriteCsv {
            path: path.display().to_string(),
            source,
        })?);
    }
    Ok(rows)
}

fn run_id_of(out_dir: &Path) -> String {
    out_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string())
}

fn relative_to<'a>(path: &'a Path, base: &Path) -> &'a Path {
    path.strip_prefix(base).unwrap_or(path)
}

/// Loads, overrides, resolves, and validates a config file.
fn prepare_config(config_path: &Path, overrides: &[String]) -> CliResult<RunConfig> {
    let mut tree = load_value(config_path)?;
    for spec in overrides {
        apply_override(&mut tree, spec)?;
    }
    let mut cfg = RunConfig::from_value(tree)?;
    cfg.resolve();
    cfg.validate()
        .map_err(|violations| ConfigError::Invalid { violations })?;
    Ok(cfg)
}

/// `train`: run the curriculum, write artifacts and the manifest.
pub fn cmd_train(
    config_path: &Path,
    out_dir: &Path,
    overrides: &[String],
) -> CliResult<RunManifest> {
    let cfg = prepare_config(config_path, overrides)?;
    let config_hash = cfg.config_hash();
    let initial = cfg.initial_policy()?;
    create_dir(out_dir)?;
    let run_id = run_id_of(out_dir);
    let started_at = timestamp_now();
    let mut sink = LogSink {
        every: 100,
        label: run_id.clone(),
    };
    let outcome = run_curriculum(
        &initial,
        &cfg.stages,
        config_hash,
        cfg.root_seed,
        out_dir,
        &mut sink,
    )?;
    let mut artifacts = Vec::new();
    for stage in &outcome.stages {
        artifacts.push(Artifact {
            kind: "metrics".to_string(),
            path: relative_to(&stage.metrics_path, out_dir).to_path_buf(),
        });
        artifacts.push(Artifact {
            kind: "checkpoint".to_string(),
            path: relative_to(&stage.checkpoint_path, out_dir).to_path_buf(),
        });
    }
    let manifest = RunManifest {
        run_id,
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: format_config_hash(config_hash),
        root_seed: cfg.root_seed,
        seeds: cfg.stages.iter().map(|s| s.seed).collect(),
        resolved_config: cfg,
        started_at,
        finished_at: timestamp_now(),
        artifacts,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    log::info!(
        "train: wrote {} stage(s) to {}",
        outcome.stages.len(),
        out_dir.display()
    );
    Ok(manifest)
}

/// One row of a per-strategy curves CSV: reward accuracy aggregated over
/// seeds at each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub reward_accuracy_mean: f64,
    pub reward_accuracy_std: f64,
}

/// One row of the ablation summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub terminal_accuracy_mean: f64,
    pub terminal_accuracy_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
}

impl From<&StrategySummary> for SummaryRow {
    fn from(s: &StrategySummary) -> Self {
        Self {
            strategy: s.strategy.to_string(),
            terminal_accuracy_mean: s.terminal_accuracy_mean,
            terminal_accuracy_std: s.terminal_accuracy_std,
            auc_mean: s.auc_mean,
            auc_std: s.auc_std,
        }
    }
}

/// Renders the summary as a fixed-width text table.
pub fn summary_text(rows: &[SummaryRow]) -> String {
    let mut text = format!(
        "{:<16} {:>22} {:>21} {:>10} {:>9}\n",
        "strategy", "terminal_accuracy_mean", "terminal_accuracy_std", "auc_mean", "auc_std"
    );
    for row in rows {
        text.push_str(&format!(
            "{:<16} {:>22.4} {:>21.4} {:>10.4} {:>9.4}\n",
            row.strategy,
            row.terminal_accuracy_mean,
            row.terminal_accuracy_std,
            row.auc_mean,
            row.auc_std
        ));
    }
    text
}

fn per_step_mean_std(curves: &[&[TrainMetrics]]) -> Vec<CurveRow> {
    let steps = curves.first().map_or(0, |c| c.len());
    (0..steps)
        .map(|t| {
            let values: Vec<f64> = curves.iter().map(|c| c[t].reward_accuracy).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            CurveRow {
                step: t,
                reward_accuracy_mean: mean,
                reward_accuracy_std: var.sqrt(),
            }
        })
        .collect()
}

/// `ablate`: run the strategy comparison, write curves, summary, overlay.
pub fn cmd_ablate(
    config_path: &Path,
    strategy_names: &[String],
    seeds: &[u64],
    out_dir: &Path,
) -> CliResult<RunManifest> {
    let strategies: Vec<Strategy> = strategy_names
        .iter()
        .map(|name| Strategy::from_str(name))
        .collect::<Result<_, _>>()?;
    if strategies.len() < 2 {
        return Err(CliError::Usage(format!(
            "ablate needs at least two strategies, got {}",
            strategies.len()
        )));
    }
    let cfg = prepare_config(config_path, &[])?;
    let base = cfg.stages[0].clone();
    let mut sink = LogSink {
        every: 100,
        label: "ablate".to_string(),
    };
    let outcome = run_ablation(&base, &cfg.policy, &strategies, seeds, &mut sink)?;
    create_dir(out_dir)?;
    let started_at = timestamp_now();

    let mut artifacts = Vec::new();
    let mut overlay_series = Vec::new();
    for &strategy in &strategies {
        let curves: Vec<&[TrainMetrics]> = outcome
            .runs
            .iter()
            .filter(|r| r.strategy == strategy)
            .map(|r| r.metrics.as_slice())
            .collect();
        let rows = per_step_mean_std(&curves);
        let name = format!("curves_{strategy}.csv");
        write_rows_csv(&out_dir.join(&name), &rows)?;
        artifacts.push(Artifact {
            kind: "curves".to_string(),
            path: PathBuf::from(name),
        });
        overlay_series.push(Series::new(
            strategy.to_string(),
            rows.iter()
                .map(|r| (r.step as f64, r.reward_accuracy_mean))
                .collect(),
        ));
    }

    let summary_rows: Vec<SummaryRow> = outcome.summary.iter().map(SummaryRow::from).collect();
    write_rows_csv(&out_dir.join("summary.csv"), &summary_rows)?;
    write_text(&out_dir.join("summary.txt"), &summary_text(&summary_rows))?;
    write_text(
        &out_dir.join("ablation_overlay.svg"),
        &line_chart(
            "Reward accuracy by strategy (mean over seeds)",
            &overlay_series,
        ),
    )?;
    for name in ["summary.csv", "summary.txt", "ablation_overlay.svg"] {
        artifacts.push(Artifact {
            kind: if name.ends_with(".svg") {
                "plot"
            } else {
                "summary"
            }
            .to_string(),
            path: PathBuf::from(name),
        });
    }

    let manifest = RunManifest {
        run_id: run_id_of(out_dir),
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: format_config_hash(cfg.config_hash()),
        root_seed: cfg.root_seed,
        seeds: seeds.to_vec(),
        resolved_config: cfg,
        started_at,
        finished_at: timestamp_now(),
        artifacts,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    for row in &summary_rows {
        log::info!(
            "ablate: {} terminal accuracy {:.4} ± {:.4}, AUC {:.4}",
            row.strategy,
            row.terminal_accuracy_mean,
            row.terminal_accuracy_std,
            row.auc_mean
        );
    }
    Ok(manifest)
}

/// Reads one run directory: its manifest and its metrics, with stage streams
/// concatenated on a single step axis.
fn load_run(dir: &Path) -> CliResult<(String, Vec<TrainMetrics>)> {
    let run_err = |reason: String| CliError::RunDir {
        dir: dir.display().to_string(),
        reason,
    };
    let manifest =
        RunManifest::load(&dir.join("manifest.json")).map_err(|e| run_err(e.to_string()))?;
    let metric_paths: Vec<&Artifact> = manifest
        .artifacts
        .iter()
        .filter(|a| a.kind == "metrics")
        .collect();
    if metric_paths.is_empty() {
        return Err(run_err("manifest lists no metrics artifacts".to_string()));
    }
    let mut rows = Vec::new();
    let mut offset = 0usize;
    for artifact in metric_paths {
        let stage_rows = read_metrics_csv(&dir.join(&artifact.path))?;
        let len = stage_rows.len();
        rows.extend(stage_rows.into_iter().map(|mut m| {
            m.step += offset;
            m
        }));
        offset += len;
    }
    Ok((manifest.run_id, rows))
}

/// `report`: overlay finished runs in the four-panel dynamics figure.
pub fn cmd_report(run_dirs: &[PathBuf], out_dir: &Path) -> CliResult<PathBuf> {
    if run_dirs.is_empty() {
        return Err(CliError::Usage(
            "report needs at least one run directory".to_string(),
        ));
    }
    let mut runs = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        runs.push(load_run(dir)?);
    }
    create_dir(out_dir)?;
    let path = out_dir.join("report.svg");
    write_text(&path, &four_panel(&runs))?;
    log::info!("report: wrote {}", path.display());
    Ok(path)
}
