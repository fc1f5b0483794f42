use serde::{Deserialize, Serialize};

use crate::exchange::{ExchangeRecord, Offer};
use crate::world::{Good, Position};

/// Something that happened to the economy during a tick.
///
/// Orientation changes and failed actions are not events; the per-tick action
/// record in an episode log carries enough to re-simulate them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum Event {
    Move { player: usize, from: Position, to: Position, penalty: f64 },
    Pickup { player: usize, good: Good, at: Position },
    Water { player: usize, penalty: f64 },
    Harvest { player: usize, good: Good, quantity: u32, at: Position },
    Consume { player: usize, good: Good, reward: f64 },
    /// A player's offer changed by its own action or because its inventory
    /// no longer covers it. Resets caused by a trade are implied by the
    /// exchange event.
    Offer { player: usize, offer: Offer },
    Exchange(ExchangeRecord),
    Drop { player: usize, good: Good, at: Position },
    Give { player: usize, good: Good, to: usize },
    Hunger { player: usize, penalty: f64 },
}

impl Event {
    pub fn player(&self) -> Option<usize> {
        match self {
            Event::Move { player, .. }
            | Event::Pickup { player, .. }
            | Event::Water { player, .. }
            | Event::Harvest { player, .. }
            | Event::Consume { player, .. }
            | Event::Offer { player, .. }
            | Event::Drop { player, .. }
            | Event::Give { player, .. }
            | Event::Hunger { player, .. } => Some(*player),
            Event::Exchange(_) => None,
        }
    }
}
