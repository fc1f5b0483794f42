//! Experiment configs, single runs, parameter sweeps and replay.
//!
//! A config is one TOML document with `[episode]`, `[learner]` and `[train]`
//! tables plus optional `[[sweep]]` blocks. Any field can be overridden with
//! a dotted path (`train.seed=7`, `episode.map.apple_multiplier=0.5`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::agents::LearnerConfig;
use crate::env::{Env, EnvError, EpisodeConfig};
use crate::metrics::{replay, sweep_aggregate, EpisodeLog, LogError, ReplayReport, SummaryRow, SweepPoint, SweepRun};
use crate::trainer::{TrainConfig, TrainError, TrainReport, Trainer, SUMMARY_FILE};

pub const OUTPUT_ROOT_ENV: &str = "FRUITMARKET_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const SWEEP_TABLE: &str = "sweep.csv";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Train(TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Log(#[from] LogError),
}

impl ExperimentError {
    /// Errors caused by the configuration rather than by running it.
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_))
    }
}

impl From<TrainError> for ExperimentError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Roster { .. } | TrainError::Env(EnvError::Config(_)) => {
                ExperimentError::Config(e.to_string())
            }
            other => ExperimentError::Train(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted path of the swept field.
    pub parameter: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_root: Option<PathBuf>,
    /// Trailing fraction of each run's agent steps averaged in sweep tables.
    pub aggregate_window: f64,
    pub episode: EpisodeConfig,
    pub learner: LearnerConfig,
    pub train: TrainConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepAxis>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            output_root: None,
            aggregate_window: 0.1,
            episode: EpisodeConfig::default(),
            learner: LearnerConfig::default(),
            train: TrainConfig::default(),
            sweep: Vec::new(),
        }
    }
}

/// Parses a `--set` value as TOML, falling back to a bare string.
pub fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets `path` (dot separated) in `table`, creating intermediate tables.
pub fn set_path(table: &mut Table, path: &str, value: Value) -> Result<(), ExperimentError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ExperimentError::Config(format!("bad parameter path `{path}`")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for (depth, p) in parents.iter().enumerate() {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(ExperimentError::Config(format!(
                    "`{}` is not a table in `{path}`",
                    parts[..=depth].join(".")
                )))
            }
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn dir_component(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "._-=".contains(c) { c } else { '_' }).collect()
}

/// One point of a sweep: its directory name, the swept assignments and the
/// resolved config.
#[derive(Clone, Debug)]
pub struct SweepCase {
    pub dir: String,
    pub assignments: Vec<(String, String)>,
    pub config: ExperimentConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text` and applies `key=value` overrides.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self, ExperimentError> {
        // parse once as-is so errors carry line numbers
        let mut cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        if !overrides.is_empty() {
            let mut table: Table = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
            for o in overrides {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| ExperimentError::Config(format!("override `{o}` is not key=value")))?;
                set_path(&mut table, k.trim(), parse_value(v.trim()))?;
            }
            cfg = Self::from_table(table)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::with_overrides(&text, overrides)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    fn from_table(table: Table) -> Result<Self, ExperimentError> {
        Self::deserialize(Value::Table(table)).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn to_table(&self) -> Table {
        match Value::try_from(self).expect("configs serialize to TOML") {
            Value::Table(t) => t,
            _ => unreachable!("a struct serializes to a table"),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs serialize to TOML")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |m: String| ExperimentError::Config(m);
        if self.name.is_empty() || dir_component(&self.name) != self.name {
            return Err(cfg(format!("name `{}` must be non-empty and use only letters, digits, `.`, `_`, `-`, `=`", self.name)));
        }
        if !(self.aggregate_window > 0.0 && self.aggregate_window <= 1.0) {
            return Err(cfg(format!("aggregate_window must be in (0, 1], got {}", self.aggregate_window)));
        }
        self.episode.validate().map_err(|e| cfg(format!("episode: {e}")))?;
        self.learner.validate().map_err(cfg)?;
        self.train.validate().map_err(|e| cfg(e.to_string()))?;
        for axis in &self.sweep {
            if axis.values.is_empty() {
                return Err(cfg(format!("sweep over `{}` has no values", axis.parameter)));
            }
            if axis.parameter.starts_with("sweep") || axis.parameter == "name" {
                return Err(cfg(format!("`{}` cannot be swept", axis.parameter)));
            }
            for v in &axis.values {
                if let Value::Float(f) = v {
                    if !f.is_finite() {
                        return Err(cfg(format!("sweep over `{}` has a non-finite value", axis.parameter)));
                    }
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for axis in &self.sweep {
            if !seen.insert(axis.parameter.as_str()) {
                return Err(cfg(format!("more than one sweep block for `{}`", axis.parameter)));
            }
        }
        Ok(())
    }

    /// Output root: explicit argument, then the config, then the
    /// environment variable, then `runs`.
    pub fn output_root(&self, explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.output_root.clone())
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
    }

    /// The cartesian product of all sweep blocks, each as a validated config
    /// without sweep blocks.
    pub fn sweep_cases(&self) -> Result<Vec<SweepCase>, ExperimentError> {
        if self.sweep.is_empty() {
            return Err(ExperimentError::Config("config has no [[sweep]] blocks".into()));
        }
        let mut base = self.clone();
        base.sweep.clear();
        let base = base.to_table();
        let mut cases: Vec<Vec<(usize, &Value)>> = vec![Vec::new()];
        for (a, axis) in self.sweep.iter().enumerate() {
            cases = cases
                .into_iter()
                .flat_map(|prefix| {
                    axis.values.iter().map(move |v| {
                        let mut next = prefix.clone();
                        next.push((a, v));
                        next
                    })
                })
                .collect();
        }
        let mut out: Vec<SweepCase> = Vec::with_capacity(cases.len());
        for case in cases {
            let mut table = base.clone();
            let mut assignments = Vec::new();
            for (a, v) in case {
                let p = &self.sweep[a].parameter;
                set_path(&mut table, p, v.clone())?;
                assignments.push((p.clone(), label(v)));
            }
            let dir = assignments
                .iter()
                .map(|(p, v)| dir_component(&format!("{}={v}", p.rsplit('.').next().unwrap_or(p))))
                .collect::<Vec<_>>()
                .join("__");
            if out.iter().any(|c| c.dir == dir) {
                return Err(ExperimentError::Config(format!("two sweep points share the output directory `{dir}`")));
            }
            let mut config = Self::from_table(table).map_err(|e| {
                let what = assignments.iter().map(|(p, v)| format!("{p}={v}")).collect::<Vec<_>>().join(", ");
                ExperimentError::Config(format!("sweep point {what}: {e}"))
            })?;
            config.name = dir.clone();
            config.validate()?;
            out.push(SweepCase { dir, assignments, config });
        }
        Ok(out)
    }
}

/// What to do when the run directory already has content.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Existing {
    Refuse,
    Overwrite,
    /// Continue from a checkpoint (the latest when `None`).
    Resume(Option<PathBuf>),
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub report: TrainReport,
}

fn is_nonempty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Trains one population into `root/<name>`.
pub fn run(config: &ExperimentConfig, root: &Path, existing: Existing) -> Result<RunOutcome, ExperimentError> {
    config.validate()?;
    if !config.sweep.is_empty() {
        return Err(ExperimentError::Config("config has [[sweep]] blocks; use the sweep command".into()));
    }
    let run_dir = root.join(&config.name);
    let snapshot = run_dir.join(CONFIG_SNAPSHOT);
    let trainer = match &existing {
        Existing::Resume(ck) => {
            let saved = ExperimentConfig::load(&snapshot, &[])?;
            if saved != *config {
                return Err(ExperimentError::Config(format!(
                    "config differs from the snapshot in {}; resume needs the same config",
                    run_dir.display()
                )));
            }
            Trainer::resume(
                config.train.clone(),
                config.episode.clone(),
                config.learner.clone(),
                &run_dir,
                ck.as_deref(),
            )?
        }
        Existing::Refuse | Existing::Overwrite => {
            if is_nonempty_dir(&run_dir) {
                if existing == Existing::Refuse {
                    return Err(ExperimentError::Config(format!(
                        "output directory {} already exists (use --force to overwrite or --resume)",
                        run_dir.display()
                    )));
                }
                fs::remove_dir_all(&run_dir)?;
            }
            fs::create_dir_all(&run_dir)?;
            fs::write(&snapshot, config.to_toml_string())?;
            Trainer::new(config.train.clone(), config.episode.clone(), config.learner.clone(), Some(&run_dir))?
        }
    };
    let report = trainer.run()?;
    Ok(RunOutcome { run_dir, report })
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub runs: Vec<PathBuf>,
    pub table: PathBuf,
    pub points: Vec<SweepPoint>,
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// One fresh population per sweep point under `root/<name>/`, then the
/// aggregate table `sweep.csv` next to them.
pub fn sweep(config: &ExperimentConfig, root: &Path, existing: Existing) -> Result<SweepOutcome, ExperimentError> {
    config.validate()?;
    let cases = config.sweep_cases()?;
    let dir = root.join(&config.name);
    if existing == Existing::Refuse && is_nonempty_dir(&dir) {
        return Err(ExperimentError::Config(format!(
            "output directory {} already exists (use --force to overwrite)",
            dir.display()
        )));
    }
    if existing == Existing::Overwrite && dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_SNAPSHOT), config.to_toml_string())?;
    let mut runs = Vec::new();
    let mut sweep_runs = Vec::new();
    for case in &cases {
        let out = run(&case.config, &dir, existing.clone())?;
        let parameter = case.assignments.iter().map(|(p, _)| p.as_str()).collect::<Vec<_>>().join(",");
        let value = case.assignments.iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join(",");
        let summary = out.run_dir.join(SUMMARY_FILE);
        let rows = if summary.exists() { read_summary(&summary)? } else { Vec::new() };
        sweep_runs.push(SweepRun { parameter, value, rows });
        runs.push(out.run_dir);
    }
    let points = sweep_aggregate(&sweep_runs, config.aggregate_window)
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let table = dir.join(SWEEP_TABLE);
    let mut w = csv::Writer::from_path(&table)?;
    for p in &points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(SweepOutcome { dir, runs, table, points })
}

/// Re-simulates a saved episode log.
pub fn replay_file(path: &Path) -> Result<ReplayReport, ExperimentError> {
    Ok(replay(&EpisodeLog::load(path)?))
}

/// The generated map for `config` and `seed` as a character matrix.
pub fn dump_map(config: &EpisodeConfig, seed: u64) -> Result<String, ExperimentError> {
    let env = Env::new(EpisodeConfig { seed, ..config.clone() }).map_err(|e| match e {
        EnvError::Config(_) | EnvError::World(_) => ExperimentError::Config(e.to_string()),
        other => ExperimentError::Config(other.to_string()),
    })?;
    Ok(env.world().dump())
}
