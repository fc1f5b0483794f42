use std::fmt;

use serde::Serialize;

use crate::env::Env;

use super::log::{EndState, EpisodeLog};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum ReplayReport {
    Exact { ticks: u32 },
    Divergence { tick: u32, detail: String },
}

impl ReplayReport {
    pub fn is_exact(&self) -> bool {
        matches!(self, ReplayReport::Exact { .. })
    }
}

impl fmt::Display for ReplayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayReport::Exact { .. } => write!(f, "exact"),
            ReplayReport::Divergence { tick, detail } => write!(f, "divergence at tick {tick}: {detail}"),
        }
    }
}

/// Re-simulates the logged episode from its config, seed and actions and
/// compares every event and the final state.
pub fn replay(log: &EpisodeLog) -> ReplayReport {
    let mut env = match Env::new(log.header.config.clone()) {
        Ok(env) => env,
        Err(e) => return ReplayReport::Divergence { tick: 0, detail: format!("cannot rebuild environment: {e}") },
    };
    if env.roster() != log.header.roster.as_slice() {
        return ReplayReport::Divergence { tick: 0, detail: "roster differs".into() };
    }
    for tick in &log.ticks {
        let step = match env.step(&tick.actions) {
            Ok(s) => s,
            Err(e) => return ReplayReport::Divergence { tick: tick.t, detail: e.to_string() },
        };
        let n = step.events.len().max(tick.events.len());
        for seq in 0..n {
            let (got, want) = (step.events.get(seq), tick.events.get(seq));
            if got != want {
                let show = |e: Option<&super::Event>| {
                    e.map_or_else(|| "nothing".to_string(), |e| serde_json::to_string(e).unwrap_or_default())
                };
                return ReplayReport::Divergence {
                    tick: tick.t,
                    detail: format!("event {seq}: logged {}, simulated {}", show(want), show(got)),
                };
            }
        }
    }
    if let Some(end) = &log.end {
        let actual = EndState::capture(&env);
        if &actual != end {
            let detail = (0..actual.players.len().max(end.players.len()))
                .find(|&i| actual.players.get(i) != end.players.get(i))
                .map_or_else(|| "ground items differ".to_string(), |i| format!("final state of player {i} differs"));
            return ReplayReport::Divergence { tick: end.t, detail };
        }
    }
    ReplayReport::Exact { ticks: env.tick() }
}
