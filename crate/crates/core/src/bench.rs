//! Throughput measurement scenarios shared by the CLI and the benchmarks.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{ScriptedKind, ScriptedPolicy};
use crate::economy::RoleKind;
use crate::env::{Env, EnvError, EpisodeConfig};
use crate::exchange::{resolve_exchanges, Mechanism, Offer, TradeParticipant, STANDARD_OFFERS};
use crate::rng::{derive_seed, substream};
use crate::world::{MapConfig, Position};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Tiny map, random policies.
    Tiny,
    /// Uniform map, five inverse-offer traders per role.
    Default,
    /// Walled three-region map, random policies.
    Regions,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Tiny, Scenario::Default, Scenario::Regions];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Tiny => "tiny",
            Scenario::Default => "default",
            Scenario::Regions => "regions",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }

    pub fn config(self) -> EpisodeConfig {
        let template = match self {
            Scenario::Tiny => "tiny",
            Scenario::Default => "uniform",
            Scenario::Regions => "walls",
        };
        EpisodeConfig { map: MapConfig { template: template.into(), ..Default::default() }, ..Default::default() }
    }

    fn policy(self, config: &EpisodeConfig, role: RoleKind, seed: u64) -> ScriptedPolicy {
        let kind = match self {
            Scenario::Default => ScriptedKind::Trader {
                offer: match role {
                    RoleKind::AppleFarmer => Offer::new(-1, 1),
                    RoleKind::BananaFarmer => Offer::new(1, -1),
                },
            },
            _ => ScriptedKind::Random,
        };
        ScriptedPolicy::new(kind, config.role(role), config.mechanism, seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: String,
    pub trials: usize,
    pub ticks_per_trial: u64,
    pub players: usize,
    /// Medians over trials.
    pub env_steps_per_sec: f64,
    pub player_ticks_per_sec: f64,
    pub exchanges_per_sec: f64,
    pub matching_resolutions_per_sec: f64,
}

impl BenchReport {
    /// `None` when within `tolerance` (a fraction) of `baseline` or faster.
    pub fn regression(&self, baseline: &BenchReport, tolerance: f64) -> Option<String> {
        let floor = baseline.player_ticks_per_sec * (1.0 - tolerance);
        (self.player_ticks_per_sec < floor).then(|| {
            format!(
                "{}: {:.0} player-ticks/s is below {:.0} ({}% under the baseline {:.0})",
                self.scenario,
                self.player_ticks_per_sec,
                floor,
                tolerance * 100.0,
                baseline.player_ticks_per_sec
            )
        })
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Steps `ticks` ticks of the scenario (resetting between episodes) and
/// returns (seconds, exchanges, players).
pub fn run_ticks(scenario: Scenario, ticks: u64, seed: u64) -> Result<(f64, u64, usize), EnvError> {
    let mut env = Env::new(EpisodeConfig { seed, ..scenario.config() })?;
    let mut policies: Vec<ScriptedPolicy> = env
        .roster()
        .iter()
        .enumerate()
        .map(|(i, e)| scenario.policy(env.config(), e.role, derive_seed(seed, &format!("policy/{i}"))))
        .collect();
    let players = env.num_players();
    let mut obs = env.observations();
    let mut actions = vec![0; players];
    let mut exchanges = 0;
    let mut episode = 0;
    let start = Instant::now();
    for _ in 0..ticks {
        if env.done() {
            episode += 1;
            obs = env.reset(derive_seed(seed, &format!("episode/{episode}")))?;
        }
        for (a, (p, o)) in actions.iter_mut().zip(policies.iter_mut().zip(&obs)) {
            *a = p.act(o);
        }
        let step = env.step(&actions)?;
        exchanges += Env::exchanges(&step.events).count() as u64;
        obs = step.observations;
    }
    Ok((start.elapsed().as_secs_f64(), exchanges, players))
}

/// A random scene of `n` players with affordable standard offers in a 9x9
/// patch.
pub fn random_scene<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<TradeParticipant> {
    (0..n)
        .map(|id| {
            let offer = STANDARD_OFFERS[rng.gen_range(0..STANDARD_OFFERS.len())];
            let pos = Position { x: rng.gen_range(0..9), y: rng.gen_range(0..9) };
            let inventory = offer.0.map(|q| u32::from((-q).max(0) as u8) + rng.gen_range(0..3));
            TradeParticipant::player(id, pos, offer, inventory)
        })
        .collect()
}

/// Matching-engine resolutions per second on pre-generated 10-player scenes.
pub fn matching_rate(resolutions: usize, seed: u64) -> f64 {
    let mut rng = substream(seed, "bench/scenes");
    let scenes: Vec<Vec<TradeParticipant>> = (0..256).map(|_| random_scene(10, &mut rng)).collect();
    let mut work = scenes.clone();
    let mut total = 0usize;
    let start = Instant::now();
    for k in 0..resolutions {
        let i = k % scenes.len();
        work[i].clone_from(&scenes[i]);
        total += resolve_exchanges(&mut work[i], 4.0, Mechanism::Standard, 1, &mut rng).len();
    }
    let secs = start.elapsed().as_secs_f64();
    std::hint::black_box(total);
    resolutions as f64 / secs.max(1e-9)
}

pub fn bench(scenario: Scenario, trials: usize, ticks: u64, seed: u64) -> Result<BenchReport, EnvError> {
    let trials = trials.max(1);
    let mut steps = Vec::new();
    let mut player_ticks = Vec::new();
    let mut exchange_rates = Vec::new();
    let mut matching = Vec::new();
    let mut players = 0;
    for t in 0..trials {
        let (secs, exchanges, n) = run_ticks(scenario, ticks, derive_seed(seed, &format!("trial/{t}")))?;
        players = n;
        let secs = secs.max(1e-9);
        steps.push(ticks as f64 / secs);
        player_ticks.push((ticks * n as u64) as f64 / secs);
        exchange_rates.push(exchanges as f64 / secs);
        matching.push(matching_rate(20_000, derive_seed(seed, &format!("matching/{t}"))));
    }
    Ok(BenchReport {
        scenario: scenario.name().into(),
        trials,
        ticks_per_trial: ticks,
        players,
        env_steps_per_sec: median(steps),
        player_ticks_per_sec: median(player_ticks),
        exchanges_per_sec: median(exchange_rates),
        matching_resolutions_per_sec: median(matching),
    })
}
