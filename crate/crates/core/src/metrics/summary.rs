use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::economy::{RewardLedger, RoleKind};
use crate::exchange::{ExchangeRecord, ParticipantKind};

use super::log::EpisodeLog;
use super::{average_price, net_traded, volume_weighted_price, Event};

/// Per-good tallies of one player, all exact integers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlayerSummary {
    pub slot: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent: Option<usize>,
    pub role: RoleKind,
    pub produced: [u64; 2],
    pub consumed: [u64; 2],
    pub bought: [u64; 2],
    pub sold: [u64; 2],
    pub picked_up: [u64; 2],
    pub dropped: [u64; 2],
    pub given: [u64; 2],
    pub received: [u64; 2],
    pub exchanges: u64,
    pub offers_set: u64,
    pub final_inventory: [u32; 2],
    pub ledger: RewardLedger,
    #[serde(rename = "return")]
    pub total_return: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleSummary {
    pub players: usize,
    pub produced: [u64; 2],
    pub consumed: [u64; 2],
    pub bought: [u64; 2],
    pub sold: [u64; 2],
    pub mean_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub seed: u64,
    pub config_hash: String,
    pub ticks: u32,
    pub players: Vec<PlayerSummary>,
    pub roles: BTreeMap<RoleKind, RoleSummary>,
    pub exchanges: u64,
    /// Mean over exchanges of bananas per apple; absent without exchanges.
    pub average_price: Option<f64>,
    pub volume_weighted_price: Option<f64>,
    pub volume: [u64; 2],
    pub net_traded: [u64; 2],
    /// Goods flowing into marketplaces from players, and out to players.
    pub market_in: [u64; 2],
    pub market_out: [u64; 2],
    pub ground_final: [u64; 2],
    /// Exchange counts keyed by "<apples>a:<bananas>b".
    pub exchange_ratios: BTreeMap<String, u64>,
    /// How often each offer was set, keyed by offer label.
    pub offer_counts: BTreeMap<String, u64>,
}

fn add(a: &mut [u64; 2], g: usize, n: u64) {
    a[g] += n;
}

impl EpisodeSummary {
    /// Derives the summary from a complete log.
    pub fn from_log(log: &EpisodeLog) -> Self {
        let roster = &log.header.roster;
        let mut players: Vec<PlayerSummary> = roster
            .iter()
            .enumerate()
            .map(|(slot, r)| PlayerSummary {
                slot,
                agent: log.header.agents.get(slot).copied(),
                role: r.role,
                ..Default::default()
            })
            .collect();
        let mut market_in = [0; 2];
        let mut market_out = [0; 2];
        let mut exchange_ratios = BTreeMap::new();
        let mut offer_counts = BTreeMap::new();
        let mut records: Vec<ExchangeRecord> = Vec::new();
        for (_, e) in log.events() {
            match e {
                Event::Harvest { player, good, quantity, .. } => add(&mut players[*player].produced, good.index(), u64::from(*quantity)),
                Event::Consume { player, good, .. } => add(&mut players[*player].consumed, good.index(), 1),
                Event::Pickup { player, good, .. } => add(&mut players[*player].picked_up, good.index(), 1),
                Event::Drop { player, good, .. } => add(&mut players[*player].dropped, good.index(), 1),
                Event::Give { player, good, to } => {
                    add(&mut players[*player].given, good.index(), 1);
                    add(&mut players[*to].received, good.index(), 1);
                }
                Event::Offer { player, offer } => {
                    if !offer.is_null() {
                        players[*player].offers_set += 1;
                        *offer_counts.entry(offer.label()).or_insert(0) += 1;
                    }
                }
                Event::Exchange(r) => {
                    let (a, b) = (u64::from(r.apples), u64::from(r.bananas));
                    // the apple buyer receives apples and pays bananas
                    match r.apple_buyer.who {
                        ParticipantKind::Player { id } => {
                            add(&mut players[id].bought, 0, a);
                            add(&mut players[id].sold, 1, b);
                            players[id].exchanges += 1;
                        }
                        ParticipantKind::Marketplace { .. } => {
                            market_in[0] += a;
                            market_out[1] += b;
                        }
                    }
                    match r.apple_seller.who {
                        ParticipantKind::Player { id } => {
                            add(&mut players[id].sold, 0, a);
                            add(&mut players[id].bought, 1, b);
                            players[id].exchanges += 1;
                        }
                        ParticipantKind::Marketplace { .. } => {
                            market_out[0] += a;
                            market_in[1] += b;
                        }
                    }
                    *exchange_ratios.entry(format!("{}a:{}b", r.apples, r.bananas)).or_insert(0) += 1;
                    records.push(*r);
                }
                Event::Move { .. } | Event::Water { .. } | Event::Hunger { .. } => {}
            }
        }
        let (ticks, ground_final) = match &log.end {
            Some(end) => {
                for (p, f) in players.iter_mut().zip(&end.players) {
                    p.final_inventory = f.inventory;
                    p.ledger = f.ledger;
                    p.total_return = f.ledger.total();
                }
                (end.t, end.ground)
            }
            None => (log.ticks.last().map_or(0, |t| t.t), [0, 0]),
        };

        let mut roles: BTreeMap<RoleKind, RoleSummary> = BTreeMap::new();
        for p in &players {
            let r = roles.entry(p.role).or_default();
            r.players += 1;
            for g in 0..2 {
                r.produced[g] += p.produced[g];
                r.consumed[g] += p.consumed[g];
                r.bought[g] += p.bought[g];
                r.sold[g] += p.sold[g];
            }
            r.mean_return += p.total_return;
        }
        for r in roles.values_mut() {
            r.mean_return /= r.players as f64;
        }
        let volume = records.iter().fold([0, 0], |acc, r| [acc[0] + u64::from(r.apples), acc[1] + u64::from(r.bananas)]);
        let net = |g: usize| net_traded(players.iter().map(|p| (p.bought[g], p.sold[g])));
        Self {
            episode: log.header.episode,
            seed: log.header.seed,
            config_hash: log.header.config_hash.clone(),
            ticks,
            net_traded: [net(0), net(1)],
            players,
            roles,
            exchanges: records.len() as u64,
            average_price: average_price(&records),
            volume_weighted_price: volume_weighted_price(&records),
            volume,
            market_in,
            market_out,
            ground_final,
            exchange_ratios,
            offer_counts,
        }
    }

    pub fn total(&self, f: impl Fn(&PlayerSummary) -> [u64; 2]) -> [u64; 2] {
        self.players.iter().fold([0, 0], |acc, p| {
            let v = f(p);
            [acc[0] + v[0], acc[1] + v[1]]
        })
    }

    pub fn mean_return(&self) -> f64 {
        if self.players.is_empty() {
            return 0.0;
        }
        self.players.iter().map(|p| p.total_return).sum::<f64>() / self.players.len() as f64
    }

    /// Checks the global identity per good:
    /// produced + marketplace-out = consumed + final inventories + ground + marketplace-in,
    /// and the per-player bound consumed <= produced + bought + picked up + received.
    pub fn check_conservation(&self) -> Result<(), String> {
        let produced = self.total(|p| p.produced);
        let consumed = self.total(|p| p.consumed);
        let held = self.total(|p| p.final_inventory.map(u64::from));
        for g in 0..2 {
            let lhs = produced[g] + self.market_out[g];
            let rhs = consumed[g] + held[g] + self.ground_final[g] + self.market_in[g];
            if lhs != rhs {
                return Err(format!(
                    "good {g}: produced {} + market out {} != consumed {} + held {} + ground {} + market in {}",
                    produced[g], self.market_out[g], consumed[g], held[g], self.ground_final[g], self.market_in[g]
                ));
            }
        }
        for p in &self.players {
            for g in 0..2 {
                if p.consumed[g] > p.produced[g] + p.bought[g] + p.picked_up[g] + p.received[g] {
                    return Err(format!("player {} consumed more of good {g} than it obtained", p.slot));
                }
            }
        }
        Ok(())
    }
}

/// One flat row of `summary.csv`. Column order is the field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub episode: u64,
    pub seed: u64,
    pub agent_steps: f64,
    pub ticks: u32,
    pub players: usize,
    pub mean_return: f64,
    pub af_return: Option<f64>,
    pub bf_return: Option<f64>,
    pub exchanges: u64,
    pub average_price: Option<f64>,
    pub volume_weighted_price: Option<f64>,
    pub volume_apples: u64,
    pub volume_bananas: u64,
    pub produced_apples: u64,
    pub produced_bananas: u64,
    pub consumed_apples: u64,
    pub consumed_bananas: u64,
    pub net_traded_apples: u64,
    pub net_traded_bananas: u64,
    pub af_produced_apples: u64,
    pub af_produced_bananas: u64,
    pub af_consumed_apples: u64,
    pub af_consumed_bananas: u64,
    pub af_bought_apples: u64,
    pub af_bought_bananas: u64,
    pub af_sold_apples: u64,
    pub af_sold_bananas: u64,
    pub bf_produced_apples: u64,
    pub bf_produced_bananas: u64,
    pub bf_consumed_apples: u64,
    pub bf_consumed_bananas: u64,
    pub bf_bought_apples: u64,
    pub bf_bought_bananas: u64,
    pub bf_sold_apples: u64,
    pub bf_sold_bananas: u64,
    pub market_in_apples: u64,
    pub market_in_bananas: u64,
    pub market_out_apples: u64,
    pub market_out_bananas: u64,
    pub hunger: f64,
    pub movement: f64,
    pub water: f64,
}

impl SummaryRow {
    pub fn new(s: &EpisodeSummary, agent_steps: f64) -> Self {
        let role = |k: RoleKind| s.roles.get(&k).cloned().unwrap_or_default();
        let (af, bf) = (role(RoleKind::AppleFarmer), role(RoleKind::BananaFarmer));
        let ret = |r: &RoleSummary| (r.players > 0).then_some(r.mean_return);
        let produced = s.total(|p| p.produced);
        let consumed = s.total(|p| p.consumed);
        let mean = |f: fn(&RewardLedger) -> f64| {
            if s.players.is_empty() {
                0.0
            } else {
                s.players.iter().map(|p| f(&p.ledger)).sum::<f64>() / s.players.len() as f64
            }
        };
        Self {
            episode: s.episode,
            seed: s.seed,
            agent_steps,
            ticks: s.ticks,
            players: s.players.len(),
            mean_return: s.mean_return(),
            af_return: ret(&af),
            bf_return: ret(&bf),
            exchanges: s.exchanges,
            average_price: s.average_price,
            volume_weighted_price: s.volume_weighted_price,
            volume_apples: s.volume[0],
            volume_bananas: s.volume[1],
            produced_apples: produced[0],
            produced_bananas: produced[1],
            consumed_apples: consumed[0],
            consumed_bananas: consumed[1],
            net_traded_apples: s.net_traded[0],
            net_traded_bananas: s.net_traded[1],
            af_produced_apples: af.produced[0],
            af_produced_bananas: af.produced[1],
            af_consumed_apples: af.consumed[0],
            af_consumed_bananas: af.consumed[1],
            af_bought_apples: af.bought[0],
            af_bought_bananas: af.bought[1],
            af_sold_apples: af.sold[0],
            af_sold_bananas: af.sold[1],
            bf_produced_apples: bf.produced[0],
            bf_produced_bananas: bf.produced[1],
            bf_consumed_apples: bf.consumed[0],
            bf_consumed_bananas: bf.consumed[1],
            bf_bought_apples: bf.bought[0],
            bf_bought_bananas: bf.bought[1],
            bf_sold_apples: bf.sold[0],
            bf_sold_bananas: bf.sold[1],
            market_in_apples: s.market_in[0],
            market_in_bananas: s.market_in[1],
            market_out_apples: s.market_out[0],
            market_out_bananas: s.market_out[1],
            hunger: mean(|l| l.hunger),
            movement: mean(|l| l.movement),
            water: mean(|l| l.water),
        }
    }
}
