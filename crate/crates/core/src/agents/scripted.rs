//! Hand-written policies used as test fixtures and benchmark drivers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::economy::{MoveAction, Role};
use crate::env::{encode_action, Action, Observation, Palette, VIEW_SIZE};
use crate::exchange::{Mechanism, Offer};
use crate::world::Good;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptedKind {
    /// Uniform over the whole action table.
    Random,
    /// Walks to the nearest visible ripe tree of its specialty and eats when
    /// satiation drops below 5.
    Harvester,
    /// A harvester that keeps `offer` posted whenever it can afford it.
    Trader { offer: Offer },
}

const EAT_BELOW: u8 = 5;

#[derive(Clone, Debug)]
pub struct ScriptedPolicy {
    pub kind: ScriptedKind,
    role: Role,
    mechanism: Mechanism,
    action_count: usize,
    rng: ChaCha8Rng,
}

impl ScriptedPolicy {
    pub fn new(kind: ScriptedKind, role: Role, mechanism: Mechanism, seed: u64) -> Self {
        let action_count = crate::env::action_count(mechanism);
        Self { kind, role, mechanism, action_count, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn index(&self, a: Action) -> usize {
        encode_action(a, self.mechanism).expect("action exists in every table")
    }

    pub fn act(&mut self, obs: &Observation) -> usize {
        match self.kind {
            ScriptedKind::Random => self.rng.gen_range(0..self.action_count),
            ScriptedKind::Harvester => self.harvest(obs),
            ScriptedKind::Trader { offer } => {
                if let Some(a) = self.eat(obs) {
                    return a;
                }
                if obs.own_offer != offer && offer.affordable(obs.inventory) {
                    if let Some(i) = encode_action(Action::SetOffer(offer), self.mechanism) {
                        return i;
                    }
                }
                self.harvest(obs)
            }
        }
    }

    /// Eats the held good worth more to this role.
    fn eat(&self, obs: &Observation) -> Option<usize> {
        if obs.satiation >= EAT_BELOW {
            return None;
        }
        let mut goods = Good::ALL;
        goods.sort_by(|a, b| self.role.consume_reward[b.index()].total_cmp(&self.role.consume_reward[a.index()]));
        goods.into_iter().find(|g| obs.inventory[g.index()] > 0).map(|g| self.index(Action::Eat(g)))
    }

    fn harvest(&mut self, obs: &Observation) -> usize {
        if let Some(a) = self.eat(obs) {
            return a;
        }
        let ripe = Palette::standard().tree(self.role.kind.specialty(), true);
        let mut best: Option<(i32, i32, i32)> = None;
        for row in 0..VIEW_SIZE {
            for col in 0..VIEW_SIZE {
                if row == VIEW_SIZE - 1 && col == VIEW_SIZE / 2 {
                    continue;
                }
                let i = (row * VIEW_SIZE + col) * 3;
                if obs.vision[i..i + 3] != ripe {
                    continue;
                }
                let ahead = (VIEW_SIZE - 1 - row) as i32;
                let right = col as i32 - (VIEW_SIZE / 2) as i32;
                let d = ahead + right.abs();
                if best.is_none_or(|b| d < b.0) {
                    best = Some((d, ahead, right));
                }
            }
        }
        let mv = match best {
            Some((_, ahead, _)) if ahead > 0 => MoveAction::Forward,
            Some((_, _, right)) if right > 0 => MoveAction::Right,
            Some(_) => MoveAction::Left,
            None => match self.rng.gen_range(0..10) {
                0..=5 => MoveAction::Forward,
                6 | 7 => MoveAction::TurnLeft,
                _ => MoveAction::TurnRight,
            },
        };
        self.index(Action::Move(mv))
    }
}
