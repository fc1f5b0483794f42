//! Line-delimited episode logs.
//!
//! An episode log is a sequence of JSON records, one per line, each tagged
//! with `"type"`:
//!
//! - `header`: schema version, episode number, seed, config hash, the full
//!   episode config, roster, and the population agent id of each slot;
//! - `actions`: the action indices submitted for tick `t`;
//! - `event`: one [`Event`] of tick `t`, numbered by `seq` from 0 within
//!   the tick;
//! - `end`: final per-player state and ground items.
//!
//! Records appear in (tick, seq) order, each tick's `actions` record first.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::economy::{Orientation, RewardLedger};
use crate::env::{Env, EpisodeConfig, RosterEntry, StepResult};
use crate::exchange::Offer;
use crate::rng::fnv1a64;
use crate::world::Position;

use super::Event;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("log schema version {found}, this build reads version {SCHEMA_VERSION}")]
    Schema { found: u32 },
    #[error("log has no header record")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: u32,
    pub episode: u64,
    pub seed: u64,
    pub config_hash: String,
    pub config: EpisodeConfig,
    pub roster: Vec<RosterEntry>,
    /// Population agent id per roster slot; empty outside training.
    pub agents: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalPlayer {
    pub position: Position,
    pub orientation: Orientation,
    pub inventory: [u32; 2],
    pub satiation: u8,
    pub offer: Offer,
    pub ledger: RewardLedger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndState {
    pub t: u32,
    pub players: Vec<FinalPlayer>,
    pub ground: [u64; 2],
}

impl EndState {
    pub fn capture(env: &Env) -> Self {
        Self {
            t: env.tick(),
            players: env
                .players()
                .iter()
                .map(|p| FinalPlayer {
                    position: p.position,
                    orientation: p.orientation,
                    inventory: p.inventory,
                    satiation: p.satiation,
                    offer: p.offer,
                    ledger: p.ledger,
                })
                .collect(),
            ground: env.world().ground_items(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickLog {
    pub t: u32,
    pub actions: Vec<usize>,
    pub events: Vec<Event>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header(LogHeader),
    Actions { t: u32, actions: Vec<usize> },
    Event { t: u32, seq: u32, event: Event },
    End(EndState),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub ticks: Vec<TickLog>,
    pub end: Option<EndState>,
}

/// Hex FNV-1a hash of the config's canonical JSON form.
pub fn config_hash(config: &EpisodeConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    format!("{:016x}", fnv1a64(json.as_bytes()))
}

impl EpisodeLog {
    pub fn records(&self) -> impl Iterator<Item = LogRecord> + '_ {
        std::iter::once(LogRecord::Header(self.header.clone()))
            .chain(self.ticks.iter().flat_map(|tick| {
                std::iter::once(LogRecord::Actions { t: tick.t, actions: tick.actions.clone() }).chain(
                    tick.events.iter().enumerate().map(move |(seq, e)| LogRecord::Event {
                        t: tick.t,
                        seq: seq as u32,
                        event: e.clone(),
                    }),
                )
            }))
            .chain(self.end.iter().cloned().map(LogRecord::End))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for rec in self.records() {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, LogError> {
        let mut header = None;
        let mut ticks: Vec<TickLog> = Vec::new();
        let mut end = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: String| LogError::Parse { line: lineno, reason };
            let rec: LogRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            if end.is_some() {
                return Err(err("record after end".into()));
            }
            match rec {
                LogRecord::Header(h) => {
                    if header.is_some() {
                        return Err(err("second header".into()));
                    }
                    if h.schema != SCHEMA_VERSION {
                        return Err(LogError::Schema { found: h.schema });
                    }
                    header = Some(h);
                }
                _ if header.is_none() => return Err(LogError::MissingHeader),
                LogRecord::Actions { t, actions } => {
                    let expected = ticks.last().map_or(1, |x| x.t + 1);
                    if t != expected {
                        return Err(err(format!("expected tick {expected}, found {t}")));
                    }
                    ticks.push(TickLog { t, actions, events: Vec::new() });
                }
                LogRecord::Event { t, seq, event } => {
                    let tick = ticks.last_mut().filter(|x| x.t == t).ok_or_else(|| err(format!("event for tick {t} out of order")))?;
                    if seq as usize != tick.events.len() {
                        return Err(err(format!("expected seq {}, found {seq}", tick.events.len())));
                    }
                    tick.events.push(event);
                }
                LogRecord::End(e) => end = Some(e),
            }
        }
        Ok(Self { header: header.ok_or(LogError::MissingHeader)?, ticks, end })
    }

    pub fn load(path: &Path) -> Result<Self, LogError> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }

    /// All events with their tick, in log order.
    pub fn events(&self) -> impl Iterator<Item = (u32, &Event)> {
        self.ticks.iter().flat_map(|t| t.events.iter().map(move |e| (t.t, e)))
    }
}

/// Accumulates an [`EpisodeLog`] while an episode runs.
#[derive(Clone, Debug)]
pub struct EpisodeRecorder {
    log: EpisodeLog,
}

impl EpisodeRecorder {
    /// Starts recording at the current (freshly reset) state of `env`.
    pub fn new(env: &Env, episode: u64, agents: Vec<usize>) -> Self {
        let config = EpisodeConfig { seed: env.seed(), ..env.config().clone() };
        let header = LogHeader {
            schema: SCHEMA_VERSION,
            episode,
            seed: env.seed(),
            config_hash: config_hash(&config),
            config,
            roster: env.roster().to_vec(),
            agents,
        };
        Self { log: EpisodeLog { header, ticks: Vec::new(), end: None } }
    }

    pub fn record(&mut self, actions: &[usize], step: &StepResult) {
        let t = self.log.ticks.len() as u32 + 1;
        self.log.ticks.push(TickLog { t, actions: actions.to_vec(), events: step.events.clone() });
    }

    pub fn finish(mut self, env: &Env) -> EpisodeLog {
        self.log.end = Some(EndState::capture(env));
        self.log
    }
}
