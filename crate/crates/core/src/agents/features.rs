//! Observation encoding for the network.
//!
//! Layout: the 15x15x3 vision patch, then inventory (2), has-item flags (2), satiation (1), own
//! offer (2), the offers matrix (2 per player), a one-hot previous action
//! (action count + 1) and the last reward (1).

use crate::env::{Observation, VISION_LEN};
use crate::exchange::MAX_OFFER_QUANTITY;

use super::net::NetShape;

pub fn nonvisual_len(players: usize, actions: usize) -> usize {
    2 + 2 + 1 + 2 + 2 * players + (actions + 1) + 1
}

pub fn net_shape(players: usize, actions: usize) -> NetShape {
    NetShape { cells: 225, channels: 3, nonvisual: nonvisual_len(players, actions), actions }
}

pub fn encode(obs: &Observation, max_satiation: u8, actions: usize) -> Vec<f32> {
    let q = f32::from(MAX_OFFER_QUANTITY);
    let mut out = Vec::with_capacity(VISION_LEN + nonvisual_len(obs.offers.len(), actions));
    out.extend_from_slice(&obs.vision);
    out.extend(obs.inventory.iter().map(|&n| (n as f32 / 10.0).min(5.0)));
    out.extend(obs.inventory.iter().map(|&n| if n > 0 { 1.0 } else { 0.0 }));
    out.push(f32::from(obs.satiation) / f32::from(max_satiation.max(1)));
    out.extend(obs.own_offer.0.iter().map(|&x| f32::from(x) / q));
    for o in &obs.offers {
        out.extend(o.0.iter().map(|&x| f32::from(x) / q));
    }
    let start = out.len();
    out.extend(std::iter::repeat_n(0.0, actions + 1));
    out[start + obs.previous_action.min(actions)] = 1.0;
    out.push((obs.reward.clamp(-10.0, 10.0) / 10.0) as f32);
    out
}
