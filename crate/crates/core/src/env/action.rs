//! Discrete action tables.
//!
//! Every mechanism starts with the seven movement actions and the two eat
//! actions (indices 0..=8); the remaining indices depend on the mechanism:
//!
//! | mechanism                       | 9..                                            | count |
//! |---------------------------------|------------------------------------------------|-------|
//! | standard, inverse-only          | cancel, 18 offers in table order               | 28    |
//! | standard+accept, accept-only    | cancel, 18 offers, buy apple, buy banana       | 30    |
//! | dynamic                         | cancel, +apple, -apple, +banana, -banana       | 14    |
//! | drop-give                       | drop apple, drop banana, give apple, give banana | 13  |
//!
//! The index equal to the action count is reserved for "no previous action".

use serde::Serialize;

use crate::economy::MoveAction;
use crate::exchange::{DropGiveAction, DynamicAction, Mechanism, Offer, STANDARD_OFFERS};
use crate::world::Good;

use super::EnvError;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Action {
    Move(MoveAction),
    Eat(Good),
    /// Set the offer vector; the null offer is "cancel".
    SetOffer(Offer),
    Buy(Good),
    Dynamic(DynamicAction),
    DropGive(DropGiveAction),
}

impl Action {
    pub fn name(&self) -> String {
        match self {
            Action::Move(m) => match m {
                MoveAction::Stand => "stand".into(),
                MoveAction::Left => "left".into(),
                MoveAction::Right => "right".into(),
                MoveAction::Forward => "forward".into(),
                MoveAction::Backward => "backward".into(),
                MoveAction::TurnLeft => "turn_left".into(),
                MoveAction::TurnRight => "turn_right".into(),
            },
            Action::Eat(g) => format!("eat_{}", good_name(*g)),
            Action::SetOffer(o) if o.is_null() => "cancel".into(),
            Action::SetOffer(o) => format!("offer_{}", o.label()),
            Action::Buy(g) => format!("buy_{}", good_name(*g)),
            Action::Dynamic(DynamicAction::Cancel) => "cancel".into(),
            Action::Dynamic(DynamicAction::Increase(g)) => format!("plus_{}", good_name(*g)),
            Action::Dynamic(DynamicAction::Decrease(g)) => format!("minus_{}", good_name(*g)),
            Action::DropGive(DropGiveAction::Drop(g)) => format!("drop_{}", good_name(*g)),
            Action::DropGive(DropGiveAction::Give(g)) => format!("give_{}", good_name(*g)),
        }
    }
}

fn good_name(g: Good) -> &'static str {
    match g {
        Good::Apple => "apple",
        Good::Banana => "banana",
    }
}

/// The ordered action table of a mechanism.
pub fn action_table(mechanism: Mechanism) -> Vec<Action> {
    let mut t: Vec<Action> = MoveAction::ALL.iter().map(|m| Action::Move(*m)).collect();
    t.push(Action::Eat(Good::Apple));
    t.push(Action::Eat(Good::Banana));
    match mechanism {
        Mechanism::Standard | Mechanism::InverseOnly | Mechanism::StandardAccept | Mechanism::AcceptOnly => {
            t.push(Action::SetOffer(Offer::NULL));
            t.extend(STANDARD_OFFERS.iter().map(|o| Action::SetOffer(*o)));
            if matches!(mechanism, Mechanism::StandardAccept | Mechanism::AcceptOnly) {
                t.push(Action::Buy(Good::Apple));
                t.push(Action::Buy(Good::Banana));
            }
        }
        Mechanism::Dynamic => {
            t.push(Action::Dynamic(DynamicAction::Cancel));
            t.push(Action::Dynamic(DynamicAction::Increase(Good::Apple)));
            t.push(Action::Dynamic(DynamicAction::Decrease(Good::Apple)));
            t.push(Action::Dynamic(DynamicAction::Increase(Good::Banana)));
            t.push(Action::Dynamic(DynamicAction::Decrease(Good::Banana)));
        }
        Mechanism::DropGive => {
            t.push(Action::DropGive(DropGiveAction::Drop(Good::Apple)));
            t.push(Action::DropGive(DropGiveAction::Drop(Good::Banana)));
            t.push(Action::DropGive(DropGiveAction::Give(Good::Apple)));
            t.push(Action::DropGive(DropGiveAction::Give(Good::Banana)));
        }
    }
    t
}

pub fn action_count(mechanism: Mechanism) -> usize {
    action_table(mechanism).len()
}

pub fn decode_action(index: usize, mechanism: Mechanism) -> Result<Action, EnvError> {
    let table = action_table(mechanism);
    table.get(index).copied().ok_or(EnvError::ActionOutOfRange { index, count: table.len() })
}

/// Index of `action` in the mechanism's table.
pub fn encode_action(action: Action, mechanism: Mechanism) -> Option<usize> {
    action_table(mechanism).iter().position(|a| *a == action)
}

#[derive(Serialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub name: String,
}

#[derive(Serialize)]
pub struct ManifestMode {
    pub mechanism: &'static str,
    pub count: usize,
    pub no_previous_action: usize,
    pub actions: Vec<ManifestEntry>,
}

/// Machine-readable listing of every mechanism's action table.
pub fn manifest() -> Vec<ManifestMode> {
    Mechanism::ALL
        .iter()
        .map(|m| {
            let table = action_table(*m);
            ManifestMode {
                mechanism: m.name(),
                count: table.len(),
                no_previous_action: table.len(),
                actions: table.iter().enumerate().map(|(index, a)| ManifestEntry { index, name: a.name() }).collect(),
            }
        })
        .collect()
}
