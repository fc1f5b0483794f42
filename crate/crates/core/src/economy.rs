//! Players and the non-trade mechanics: roles, movement, harvesting,
//! eating, hunger and reward accounting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exchange::Offer;
use crate::world::{Good, MapState, Position, TileKind};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleKind {
    #[default]
    AppleFarmer,
    BananaFarmer,
}

impl RoleKind {
    pub const ALL: [RoleKind; 2] = [RoleKind::AppleFarmer, RoleKind::BananaFarmer];

    /// The good this role harvests reliably.
    pub fn specialty(self) -> Good {
        match self {
            RoleKind::AppleFarmer => Good::Apple,
            RoleKind::BananaFarmer => Good::Banana,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            RoleKind::AppleFarmer => "AF",
            RoleKind::BananaFarmer => "BF",
        }
    }
}

/// Production and consumption constants of one role.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleParams {
    pub harvest_prob: [f64; 2],
    pub harvest_quantity: [u32; 2],
    pub consume_reward: [f64; 2],
}

impl RoleParams {
    pub fn default_for(kind: RoleKind) -> Self {
        match kind {
            RoleKind::AppleFarmer => Self {
                harvest_prob: [1.0, 0.05],
                harvest_quantity: [2, 2],
                consume_reward: [1.0, 8.0],
            },
            RoleKind::BananaFarmer => Self {
                harvest_prob: [0.05, 1.0],
                harvest_quantity: [2, 2],
                consume_reward: [8.0, 1.0],
            },
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Role {
    pub kind: RoleKind,
    pub harvest_prob: [f64; 2],
    pub harvest_quantity: [u32; 2],
    pub consume_reward: [f64; 2],
}

impl Role {
    pub fn new(kind: RoleKind, params: RoleParams) -> Self {
        Self {
            kind,
            harvest_prob: params.harvest_prob,
            harvest_quantity: params.harvest_quantity,
            consume_reward: params.consume_reward,
        }
    }

    pub fn default_for(kind: RoleKind) -> Self {
        Self::new(kind, RoleParams::default_for(kind))
    }
}

/// Shared scalar constants.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Constants {
    pub ripening_time: u32,
    /// Reward per tile moved (negative).
    pub movement_penalty: f64,
    /// Reward per tick on water (negative).
    pub water_penalty: f64,
    pub max_satiation: u8,
    /// Reward per tick at zero satiation (negative).
    pub hunger_penalty: f64,
    pub hunger_enabled: bool,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            ripening_time: 50,
            movement_penalty: -0.25,
            water_penalty: -1.0,
            max_satiation: 30,
            hunger_penalty: -1.0,
            hunger_enabled: true,
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    #[default]
    North,
    East,
    South,
    West,
}

impl Orientation {
    pub fn delta(self) -> (i32, i32) {
        match self {
            Orientation::North => (0, -1),
            Orientation::East => (1, 0),
            Orientation::South => (0, 1),
            Orientation::West => (-1, 0),
        }
    }

    pub fn turn_right(self) -> Self {
        match self {
            Orientation::North => Orientation::East,
            Orientation::East => Orientation::South,
            Orientation::South => Orientation::West,
            Orientation::West => Orientation::North,
        }
    }

    pub fn turn_left(self) -> Self {
        self.turn_right().turn_right().turn_right()
    }
}

/// Per-source accumulated reward.
#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardLedger {
    pub apple_consumption: f64,
    pub banana_consumption: f64,
    pub hunger: f64,
    pub movement: f64,
    pub water: f64,
}

impl RewardLedger {
    /// Episodic return, always summed in this order.
    pub fn total(&self) -> f64 {
        self.apple_consumption + self.banana_consumption + self.hunger + self.movement + self.water
    }

    pub fn consumption_mut(&mut self, g: Good) -> &mut f64 {
        match g {
            Good::Apple => &mut self.apple_consumption,
            Good::Banana => &mut self.banana_consumption,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerState {
    pub id: usize,
    pub role: Role,
    pub position: Position,
    pub orientation: Orientation,
    pub inventory: [u32; 2],
    pub satiation: u8,
    pub offer: Offer,
    pub ledger: RewardLedger,
}

impl PlayerState {
    pub fn new(id: usize, role: Role, position: Position, satiation: u8) -> Self {
        Self {
            id,
            role,
            position,
            orientation: Orientation::North,
            inventory: [0, 0],
            satiation,
            offer: Offer::NULL,
            ledger: RewardLedger::default(),
        }
    }

    pub fn facing_tile(&self) -> Position {
        let (dx, dy) = self.orientation.delta();
        Position::new(self.position.x + dx, self.position.y + dy)
    }

    /// Sets the offer, or resets it to null when the inventory cannot cover
    /// it. Returns the resulting offer.
    pub fn set_offer(&mut self, requested: Offer) -> Offer {
        self.offer = if requested.affordable(self.inventory) { requested } else { Offer::NULL };
        self.offer
    }

    /// Resets an offer the inventory can no longer cover. Returns whether the
    /// offer changed.
    pub fn revalidate_offer(&mut self) -> bool {
        if !self.offer.affordable(self.inventory) {
            self.offer = Offer::NULL;
            true
        } else {
            false
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveAction {
    Stand,
    Left,
    Right,
    Forward,
    Backward,
    TurnLeft,
    TurnRight,
}

impl MoveAction {
    pub const ALL: [MoveAction; 7] = [
        MoveAction::Stand,
        MoveAction::Left,
        MoveAction::Right,
        MoveAction::Forward,
        MoveAction::Backward,
        MoveAction::TurnLeft,
        MoveAction::TurnRight,
    ];
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct MoveOutcome {
    pub moved: bool,
    pub picked_up: Option<Good>,
}

/// Applies one movement action. Steps into walls, off the map or onto
/// another player are silent no-ops. A successful step costs the movement
/// penalty; turning is free. With `pickups`, entering a tile holding a
/// ground item moves it into the inventory.
pub fn apply_move(
    world: &mut MapState,
    players: &mut [PlayerState],
    actor: usize,
    action: MoveAction,
    constants: &Constants,
    pickups: bool,
) -> MoveOutcome {
    let p = &mut players[actor];
    let facing = p.orientation;
    let dir = match action {
        MoveAction::Stand => return MoveOutcome::default(),
        MoveAction::TurnLeft => {
            p.orientation = facing.turn_left();
            return MoveOutcome::default();
        }
        MoveAction::TurnRight => {
            p.orientation = facing.turn_right();
            return MoveOutcome::default();
        }
        MoveAction::Forward => facing,
        MoveAction::Backward => facing.turn_right().turn_right(),
        MoveAction::Left => facing.turn_left(),
        MoveAction::Right => facing.turn_right(),
    };
    let (dx, dy) = dir.delta();
    let from = players[actor].position;
    let target = Position::new(from.x + dx, from.y + dy);
    if !world.tile(target).is_some_and(|t| t.is_passable()) || players.iter().any(|o| o.position == target) {
        return MoveOutcome::default();
    }
    let p = &mut players[actor];
    p.position = target;
    p.ledger.movement += constants.movement_penalty;
    let mut picked_up = None;
    if pickups {
        if let Some(tile) = world.tile_mut(target) {
            if let Some(g) = tile.ground_item.take() {
                p.inventory[g.index()] += 1;
                picked_up = Some(g);
            }
        }
    }
    MoveOutcome { moved: true, picked_up }
}

/// Water penalty for the current tick, debited to the ledger.
pub fn water_tick(world: &MapState, player: &mut PlayerState, constants: &Constants) -> f64 {
    if matches!(world.tile(player.position).map(|t| t.kind), Some(TileKind::Water)) {
        player.ledger.water += constants.water_penalty;
        constants.water_penalty
    } else {
        0.0
    }
}

/// Passive harvest of the tree under the player, if ripe.
pub fn harvest_tick<R: Rng + ?Sized>(
    world: &mut MapState,
    player: &mut PlayerState,
    tick: u32,
    constants: &Constants,
    rng: &mut R,
) -> Option<(Good, u32)> {
    let tile = world.tile(player.position)?;
    let TileKind::Tree { good, .. } = tile.kind else {
        return None;
    };
    if !tile.is_ripe(tick) {
        return None;
    }
    let prob = player.role.harvest_prob[good.index()];
    let success = if prob >= 1.0 {
        true
    } else if prob <= 0.0 {
        false
    } else {
        rng.gen::<f64>() < prob
    };
    if !success {
        return None;
    }
    let qty = player.role.harvest_quantity[good.index()];
    player.inventory[good.index()] += qty;
    world.harvest_tree(player.position, tick, constants.ripening_time);
    Some((good, qty))
}

/// Eats one unit of `good`; a no-op with zero reward when none is held.
pub fn consume(player: &mut PlayerState, good: Good, constants: &Constants) -> Option<f64> {
    if player.inventory[good.index()] == 0 {
        return None;
    }
    player.inventory[good.index()] -= 1;
    let reward = player.role.consume_reward[good.index()];
    *player.ledger.consumption_mut(good) += reward;
    player.satiation = constants.max_satiation;
    player.revalidate_offer();
    Some(reward)
}

/// Penalizes an empty stomach, then decrements satiation. The penalty is
/// assessed on the value before decrementing.
pub fn hunger_tick(player: &mut PlayerState, constants: &Constants) -> f64 {
    let penalty = if player.satiation == 0 && constants.hunger_enabled { constants.hunger_penalty } else { 0.0 };
    player.ledger.hunger += penalty;
    player.satiation = player.satiation.saturating_sub(1);
    penalty
}
