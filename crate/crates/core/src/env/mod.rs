//! The multi-agent environment: reset, step and observations.

mod action;
mod config;
mod render;

pub use action::{action_count, action_table, decode_action, encode_action, manifest, Action, ManifestEntry, ManifestMode};
pub use config::{EpisodeConfig, RewardMultipliers, RolesConfig, RosterEntry};
pub use render::{render_vision, view_to_world, world_to_view, Palette, Rgb, CHANNELS, VIEW_SIZE, VISION_LEN};

use rand::seq::SliceRandom;
use serde::Serialize;
use thiserror::Error;

use crate::economy::{apply_move, consume, harvest_tick, hunger_tick, water_tick, PlayerState};
use crate::exchange::{
    accept_best, apply_dynamic, drop_or_give, resolve_exchanges, DropGiveOutcome, ExchangeRecord, Mechanism, Offer,
    RngChooser, TradeParticipant,
};
use crate::metrics::Event;
use crate::rng::EpisodeRngs;
use crate::world::{generate_from_template, within_radius, MapState, MapTemplate, WorldError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("invalid episode config: {0}")]
    Config(String),
    #[error("roster has {players} players but the map has room for {capacity}")]
    RosterTooLarge { players: usize, capacity: usize },
    #[error("roster region `{0}` is not a region of the map")]
    UnknownRegion(String),
    #[error("no free spawn point left in region `{0}`")]
    RegionFull(String),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("action index {index} out of range for a table of {count}")]
    ActionOutOfRange { index: usize, count: usize },
    #[error("episode is over; call reset")]
    EpisodeOver,
}

/// What one player sees after a tick.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Observation {
    /// 15x15x3, row-major, channels last.
    pub vision: Vec<f32>,
    pub inventory: [u32; 2],
    pub satiation: u8,
    pub own_offer: Offer,
    /// One row per roster slot; the own row and players beyond the
    /// visibility radius are null.
    pub offers: Vec<Offer>,
    /// Index into the action table, or the table length for "none".
    pub previous_action: usize,
    pub reward: f64,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    /// Events of this tick in the order they happened.
    pub events: Vec<Event>,
}

#[derive(Clone, Debug)]
pub struct Env {
    config: EpisodeConfig,
    template: MapTemplate,
    roster: Vec<RosterEntry>,
    actions: Vec<Action>,
    palette: &'static Palette,
    seed: u64,
    rngs: EpisodeRngs,
    world: MapState,
    players: Vec<PlayerState>,
    tick: u32,
    previous_actions: Vec<usize>,
    last_rewards: Vec<f64>,
    order: Vec<usize>,
}

impl Env {
    /// Builds the environment and resets it with `config.seed`.
    pub fn new(config: EpisodeConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let template = MapTemplate::for_config(&config.map)?;
        let roster = config.resolved_roster(&template);
        if roster.len() > template.spawn_point_count() {
            return Err(EnvError::RosterTooLarge { players: roster.len(), capacity: template.spawn_point_count() });
        }
        let actions = action_table(config.mechanism);
        let seed = config.seed;
        let mut env = Self {
            template,
            actions,
            palette: Palette::standard(),
            seed,
            rngs: EpisodeRngs::new(seed),
            world: MapState::default(),
            players: Vec::new(),
            tick: 0,
            previous_actions: Vec::new(),
            last_rewards: Vec::new(),
            order: (0..roster.len()).collect(),
            roster,
            config,
        };
        env.reset(seed)?;
        Ok(env)
    }

    /// Starts a new episode: fresh map, players at their spawn points,
    /// tick 0. Returns the initial observations.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<Observation>, EnvError> {
        self.seed = seed;
        self.rngs = EpisodeRngs::new(seed);
        self.world = generate_from_template(&self.template, &self.config.map, &mut self.rngs.map)?;
        self.players = spawn_players(&self.config, &self.roster, &self.world)?;
        self.tick = 0;
        self.previous_actions = vec![self.actions.len(); self.players.len()];
        self.last_rewards = vec![0.0; self.players.len()];
        Ok(self.observations())
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn roster(&self) -> &[RosterEntry] {
        &self.roster
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn world(&self) -> &MapState {
        &self.world
    }

    pub fn players(&self) -> &[PlayerState] {
        &self.players
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    pub fn tick(&self) -> u32 {
        self.tick
    }

    pub fn done(&self) -> bool {
        self.tick >= self.config.episode_length
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// Advances one tick.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        if self.done() {
            return Err(EnvError::EpisodeOver);
        }
        let n = self.players.len();
        if actions.len() != n {
            return Err(EnvError::ActionCount { expected: n, got: actions.len() });
        }
        let decoded = actions
            .iter()
            .map(|&i| {
                self.actions.get(i).copied().ok_or(EnvError::ActionOutOfRange { index: i, count: self.actions.len() })
            })
            .collect::<Result<Vec<_>, _>>()?;

        self.tick += 1;
        let tick = self.tick;
        let before: Vec<f64> = self.players.iter().map(|p| p.ledger.total()).collect();
        let mut events = Vec::new();
        let constants = self.config.constants;
        let mechanism = self.config.mechanism;
        let pickups = mechanism == Mechanism::DropGive;

        self.order.clear();
        self.order.extend(0..n);
        self.order.shuffle(&mut self.rngs.conflicts);

        for k in 0..n {
            let i = self.order[k];
            if let Action::Move(m) = decoded[i] {
                let from = self.players[i].position;
                let out = apply_move(&mut self.world, &mut self.players, i, m, &constants, pickups);
                if out.moved {
                    let to = self.players[i].position;
                    events.push(Event::Move { player: i, from, to, penalty: constants.movement_penalty });
                    if let Some(good) = out.picked_up {
                        events.push(Event::Pickup { player: i, good, at: to });
                    }
                }
            }
        }

        for i in 0..n {
            let penalty = water_tick(&self.world, &mut self.players[i], &constants);
            if penalty != 0.0 {
                events.push(Event::Water { player: i, penalty });
            }
        }

        for i in 0..n {
            let at = self.players[i].position;
            if let Some((good, quantity)) =
                harvest_tick(&mut self.world, &mut self.players[i], tick, &constants, &mut self.rngs.harvest)
            {
                events.push(Event::Harvest { player: i, good, quantity, at });
            }
        }

        for k in 0..n {
            let i = self.order[k];
            self.act(i, decoded[i], tick, &mut events);
        }

        if mechanism.match_rule().is_some() {
            let mut scene = self.trade_scene();
            let records =
                resolve_exchanges(&mut scene, self.config.trade_radius, mechanism, tick, &mut self.rngs.matching);
            if !records.is_empty() {
                self.write_back(&scene);
                events.extend(records.into_iter().map(Event::Exchange));
            }
        }

        for i in 0..n {
            let penalty = hunger_tick(&mut self.players[i], &constants);
            if penalty != 0.0 {
                events.push(Event::Hunger { player: i, penalty });
            }
        }

        let rewards: Vec<f64> = self.players.iter().zip(&before).map(|(p, b)| p.ledger.total() - b).collect();
        self.previous_actions.copy_from_slice(actions);
        self.last_rewards.clone_from(&rewards);
        Ok(StepResult { observations: self.observations(), rewards, done: self.done(), events })
    }

    fn act(&mut self, i: usize, action: Action, tick: u32, events: &mut Vec<Event>) {
        let constants = self.config.constants;
        match action {
            Action::Move(_) => {}
            Action::Eat(good) => {
                let prev = self.players[i].offer;
                if let Some(reward) = consume(&mut self.players[i], good, &constants) {
                    events.push(Event::Consume { player: i, good, reward });
                    self.offer_event(i, prev, events);
                }
            }
            Action::SetOffer(o) => {
                let prev = self.players[i].offer;
                self.players[i].set_offer(o);
                self.offer_event(i, prev, events);
            }
            Action::Dynamic(d) => {
                let prev = self.players[i].offer;
                let p = &mut self.players[i];
                p.offer = apply_dynamic(p.offer, d, p.inventory);
                self.offer_event(i, prev, events);
            }
            Action::Buy(good) => {
                let mut scene = self.trade_scene();
                let record = accept_best(
                    &mut scene,
                    i,
                    good,
                    self.config.trade_radius,
                    tick,
                    &mut RngChooser(&mut self.rngs.matching),
                );
                if let Some(r) = record {
                    self.write_back(&scene);
                    events.push(Event::Exchange(r));
                }
            }
            Action::DropGive(a) => {
                let prev = self.players[i].offer;
                let out = drop_or_give(
                    &mut self.world,
                    &mut self.players,
                    i,
                    a,
                    self.config.trade_radius,
                    &mut RngChooser(&mut self.rngs.matching),
                );
                match out {
                    Some(DropGiveOutcome::Dropped { good, at }) => events.push(Event::Drop { player: i, good, at }),
                    Some(DropGiveOutcome::Given { good, to }) => events.push(Event::Give { player: i, good, to }),
                    None => {}
                }
                self.offer_event(i, prev, events);
            }
        }
    }

    fn offer_event(&self, i: usize, prev: Offer, events: &mut Vec<Event>) {
        let offer = self.players[i].offer;
        if offer != prev {
            events.push(Event::Offer { player: i, offer });
        }
    }

    /// Players occupy scene slots `0..n` in roster order; marketplace offers
    /// follow.
    fn trade_scene(&self) -> Vec<TradeParticipant> {
        let mut scene: Vec<TradeParticipant> = self
            .players
            .iter()
            .enumerate()
            .map(|(i, p)| TradeParticipant::player(i, p.position, p.offer, p.inventory))
            .collect();
        for (m, market) in self.world.marketplaces.iter().enumerate() {
            for (k, offer) in market.offers.iter().enumerate() {
                scene.push(TradeParticipant::marketplace(m, k, market.position, *offer));
            }
        }
        scene
    }

    fn write_back(&mut self, scene: &[TradeParticipant]) {
        for (p, s) in self.players.iter_mut().zip(scene) {
            p.offer = s.offer;
            if let Some(inv) = s.inventory {
                p.inventory = inv;
            }
        }
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.players.len()).map(|i| self.observe(i)).collect()
    }

    pub fn observe(&self, i: usize) -> Observation {
        let mut vision = vec![0.0; VISION_LEN];
        render_vision(&self.world, &self.players, i, self.tick, self.palette, &mut vision);
        let me = &self.players[i];
        let offers = self
            .players
            .iter()
            .enumerate()
            .map(|(j, p)| {
                if j != i && within_radius(me.position, p.position, self.config.visibility_radius) {
                    p.offer
                } else {
                    Offer::NULL
                }
            })
            .collect();
        Observation {
            vision,
            inventory: me.inventory,
            satiation: me.satiation,
            own_offer: me.offer,
            offers,
            previous_action: self.previous_actions[i],
            reward: self.last_rewards[i],
        }
    }

    /// Stock held by players and lying on the ground, per good.
    pub fn goods_in_world(&self) -> [u64; 2] {
        let mut total = self.world.ground_items();
        for p in &self.players {
            total[0] += u64::from(p.inventory[0]);
            total[1] += u64::from(p.inventory[1]);
        }
        total
    }

    /// Exchanges in `events`.
    pub fn exchanges(events: &[Event]) -> impl Iterator<Item = &ExchangeRecord> {
        events.iter().filter_map(|e| match e {
            Event::Exchange(r) => Some(r),
            _ => None,
        })
    }
}

fn spawn_players(
    config: &EpisodeConfig,
    roster: &[RosterEntry],
    world: &MapState,
) -> Result<Vec<PlayerState>, EnvError> {
    let mut used = vec![false; world.spawn_points.len()];
    let mut players = Vec::with_capacity(roster.len());
    for (id, entry) in roster.iter().enumerate() {
        let wanted = match &entry.region {
            Some(r) => Some(world.region_index(r).ok_or_else(|| EnvError::UnknownRegion(r.clone()))?),
            None => None,
        };
        let slot = (0..world.spawn_points.len())
            .find(|&s| !used[s] && (wanted.is_none() || world.spawn_regions[s] == wanted))
            .ok_or_else(|| match &entry.region {
                Some(r) => EnvError::RegionFull(r.clone()),
                None => EnvError::RosterTooLarge { players: roster.len(), capacity: world.spawn_points.len() },
            })?;
        used[slot] = true;
        let role = config.role(entry.role);
        players.push(PlayerState::new(id, role, world.spawn_points[slot], config.constants.max_satiation));
    }
    Ok(players)
}
