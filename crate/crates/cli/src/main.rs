use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fruitmarket::bench::{bench, BenchReport, Scenario};
use fruitmarket::env::manifest;
use fruitmarket::exchange::Mechanism;
use fruitmarket::experiment::{self, ExperimentConfig, ExperimentError, Existing};
use fruitmarket::metrics::ReplayReport;

const CONFIG_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

/// Fruit Market: train and analyse populations of bartering agents.
#[derive(Parser, Debug)]
#[command(name = "fruitmarket", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Parser, Debug)]
struct ConfigArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Override a config field by dotted path, e.g. `episode.map.apple_multiplier=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output root; defaults to the config's `output_root`, then $FRUITMARKET_OUTPUT_ROOT, then `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one population.
    Run {
        #[command(flatten)]
        args: ConfigArgs,
        /// Master seed (same as `--set train.seed=N`).
        #[arg(long)]
        seed: Option<u64>,
        /// Continue the run in the output directory from its latest checkpoint.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
        /// Continue from this checkpoint instead of the latest.
        #[arg(long, requires = "resume")]
        checkpoint: Option<PathBuf>,
    },
    /// Train one fresh population per sweep point and write the aggregate table.
    Sweep {
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Re-simulate an episode log and compare it event by event.
    Replay { log: PathBuf },
    /// Measure environment and matching throughput.
    Bench {
        /// tiny, default or regions.
        #[arg(default_value = "tiny")]
        scenario: String,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 20_000)]
        ticks: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fail when slower than this stored report by more than `--tolerance`.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        tolerance: f64,
        /// Write the report as JSON to this file.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Print the generated map as a character matrix.
    DumpMap {
        /// Experiment config; the default episode config when omitted.
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the action tables as JSON.
    Actions {
        /// Only this mechanism.
        #[arg(long)]
        mechanism: Option<String>,
    },
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|()| out.flush());
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load(args: &ConfigArgs, extra: &[String]) -> Result<ExperimentConfig, Failure> {
    let mut set = args.set.clone();
    set.extend_from_slice(extra);
    Ok(ExperimentConfig::load(&args.config, &set)?)
}

fn existing(args: &ConfigArgs) -> Existing {
    if args.force {
        Existing::Overwrite
    } else {
        Existing::Refuse
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { args, seed, resume, checkpoint } => {
            let extra: Vec<String> = seed.map(|s| format!("train.seed={s}")).into_iter().collect();
            let cfg = load(&args, &extra)?;
            let root = cfg.output_root(args.out.as_deref());
            let mode = if resume { Existing::Resume(checkpoint) } else { existing(&args) };
            let out = experiment::run(&cfg, &root, mode)?;
            emit(&format!("run directory: {}\n", out.run_dir.display()));
            emit(&format!("episodes: {}\n", out.report.episodes));
            emit(&format!("average agent steps: {}\n", out.report.agent_steps));
        }
        Command::Sweep { args } => {
            let cfg = load(&args, &[])?;
            let root = cfg.output_root(args.out.as_deref());
            let out = experiment::sweep(&cfg, &root, existing(&args))?;
            for r in &out.runs {
                emit(&format!("run directory: {}\n", r.display()));
            }
            emit(&format!("sweep table: {}\n", out.table.display()));
        }
        Command::Replay { log } => match experiment::replay_file(&log)? {
            r @ ReplayReport::Exact { .. } => emit(&format!("{r}\n")),
            r => return Err(Failure::Runtime(r.to_string())),
        },
        Command::Bench { scenario, trials, ticks, seed, baseline, tolerance, save } => {
            let s = Scenario::parse(&scenario).ok_or_else(|| {
                Failure::Config(format!("unknown scenario `{scenario}` (expected tiny, default or regions)"))
            })?;
            let base: Option<BenchReport> = match &baseline {
                Some(p) => {
                    let text = fs::read_to_string(p)
                        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?;
                    Some(serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?)
                }
                None => None,
            };
            let report = bench(s, trials, ticks, seed).map_err(|e| Failure::Runtime(e.to_string()))?;
            let json = serde_json::to_string_pretty(&report).expect("reports serialize");
            emit(&format!("{json}\n"));
            if let Some(p) = save {
                fs::write(&p, format!("{json}\n")).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
            }
            if let Some(msg) = base.and_then(|b| report.regression(&b, tolerance)) {
                return Err(Failure::Runtime(msg));
            }
        }
        Command::DumpMap { config, set, seed } => {
            let cfg = match config {
                Some(path) => ExperimentConfig::load(&path, &set)?,
                None => ExperimentConfig::with_overrides("", &set)?,
            };
            emit(&experiment::dump_map(&cfg.episode, seed)?);
        }
        Command::Actions { mechanism } => {
            let mut modes = manifest();
            if let Some(m) = mechanism {
                if !Mechanism::ALL.iter().any(|x| x.name() == m) {
                    return Err(Failure::Config(format!("unknown mechanism `{m}`")));
                }
                modes.retain(|x| x.mechanism == m);
            }
            emit(&format!("{}\n", serde_json::to_string_pretty(&modes).expect("manifest serializes")));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { CONFIG_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(CONFIG_ERROR)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(RUNTIME_ERROR)
        }
    }
}
