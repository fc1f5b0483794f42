//! Barter matching engine.
//!
//! Offers are signed per-good vectors: negative entries are given, positive
//! entries requested. At the end of each tick [`resolve_exchanges`] visits
//! every offering player in random order, picks the most generous mutually
//! acceptable partner within the trade radius and swaps the minimal
//! satisfying quantities.

use std::cmp::Ordering;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::economy::PlayerState;
use crate::world::{within_radius, Good, MapState, Position};

pub const MAX_OFFER_QUANTITY: i8 = 3;

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Offer(pub [i8; 2]);

impl Offer {
    pub const NULL: Offer = Offer([0, 0]);

    pub const fn new(apples: i8, bananas: i8) -> Self {
        Offer([apples, bananas])
    }

    #[inline]
    pub fn get(self, g: Good) -> i8 {
        self.0[g.index()]
    }

    #[inline]
    pub fn is_null(self) -> bool {
        self.0 == [0, 0]
    }

    /// Gives at least one good and requests at least one good.
    #[inline]
    pub fn is_complete(self) -> bool {
        self.0.iter().any(|q| *q < 0) && self.0.iter().any(|q| *q > 0)
    }

    #[inline]
    pub fn inverse(self) -> Offer {
        Offer([-self.0[0], -self.0[1]])
    }

    /// Whether `inventory` covers every give component.
    #[inline]
    pub fn affordable(self, inventory: [u32; 2]) -> bool {
        self.0
            .iter()
            .zip(inventory)
            .all(|(q, have)| *q >= 0 || u32::from(q.unsigned_abs()) <= have)
    }

    /// Short name, e.g. `1a:2b` for "give 1 apple for 2 bananas".
    pub fn label(self) -> String {
        let [a, b] = self.0;
        match (a.signum(), b.signum()) {
            (0, 0) => "null".into(),
            (-1, 1) => format!("{}a:{}b", -a, b),
            (1, -1) => format!("{}b:{}a", -b, a),
            _ => format!("[{a}, {b}]"),
        }
    }
}

impl fmt::Display for Offer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.0[0], self.0[1])
    }
}

/// The eighteen complete offers of the standard action set, in action-table
/// order.
pub const STANDARD_OFFERS: [Offer; 18] = [
    Offer::new(-1, 1),
    Offer::new(-1, 2),
    Offer::new(-2, 1),
    Offer::new(-2, 2),
    Offer::new(-1, 3),
    Offer::new(-2, 3),
    Offer::new(-3, 1),
    Offer::new(-3, 2),
    Offer::new(-3, 3),
    Offer::new(1, -1),
    Offer::new(2, -1),
    Offer::new(1, -2),
    Offer::new(2, -2),
    Offer::new(3, -1),
    Offer::new(3, -2),
    Offer::new(1, -3),
    Offer::new(2, -3),
    Offer::new(3, -3),
];

/// How trades come about.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    /// Compatible offers resolved by the environment.
    #[default]
    #[serde(rename = "standard")]
    Standard,
    /// Only exact inverse offers are matched.
    #[serde(rename = "inverse-only")]
    InverseOnly,
    /// Standard resolution plus Buy actions.
    #[serde(rename = "standard+accept")]
    StandardAccept,
    /// Offers are only traded through Buy actions.
    #[serde(rename = "accept-only")]
    AcceptOnly,
    /// Offers built by increment/decrement actions, resolved as standard.
    #[serde(rename = "dynamic")]
    Dynamic,
    /// No offers; goods change hands by dropping or giving.
    #[serde(rename = "drop-give")]
    DropGive,
}

impl Mechanism {
    pub const ALL: [Mechanism; 6] = [
        Mechanism::Standard,
        Mechanism::InverseOnly,
        Mechanism::StandardAccept,
        Mechanism::AcceptOnly,
        Mechanism::Dynamic,
        Mechanism::DropGive,
    ];

    /// The pairing rule applied at the end of each tick, if any.
    pub fn match_rule(self) -> Option<MatchRule> {
        match self {
            Mechanism::Standard | Mechanism::StandardAccept | Mechanism::Dynamic => Some(MatchRule::Compatible),
            Mechanism::InverseOnly => Some(MatchRule::Inverse),
            Mechanism::AcceptOnly | Mechanism::DropGive => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Standard => "standard",
            Mechanism::InverseOnly => "inverse-only",
            Mechanism::StandardAccept => "standard+accept",
            Mechanism::AcceptOnly => "accept-only",
            Mechanism::Dynamic => "dynamic",
            Mechanism::DropGive => "drop-give",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum MatchRule {
    Compatible,
    Inverse,
}

impl MatchRule {
    #[inline]
    pub fn matches(self, a: Offer, b: Offer) -> bool {
        match self {
            MatchRule::Compatible => is_compatible(a, b),
            MatchRule::Inverse => a.is_complete() && a == b.inverse(),
        }
    }
}

/// Each offer gives at least as much of every good as the other requests.
/// Incomplete offers are compatible with nothing.
pub fn is_compatible(a: Offer, b: Offer) -> bool {
    if !a.is_complete() || !b.is_complete() {
        return false;
    }
    (0..2).all(|g| {
        let covers = |giver: i8, asker: i8| asker <= 0 || -giver >= asker;
        covers(a.0[g], b.0[g]) && covers(b.0[g], a.0[g])
    })
}

/// Minimal satisfying transfer, from `a`'s perspective: each side receives
/// exactly what it requested.
///
/// # Panics
/// If the offers are not compatible.
pub fn exchange_quantities(a: Offer, b: Offer) -> [i32; 2] {
    assert!(is_compatible(a, b), "exchange_quantities on incompatible offers {a} and {b}");
    let mut t = [0i32; 2];
    for (g, slot) in t.iter_mut().enumerate() {
        if a.0[g] > 0 {
            *slot = i32::from(a.0[g]);
        } else if b.0[g] > 0 {
            *slot = -i32::from(b.0[g]);
        }
    }
    t
}

/// Whether `x` is a strictly more generous counter-offer than `y` for the
/// holder of `relative_to`: it gives at least as much of everything
/// `relative_to` requests and requests no more of everything `relative_to`
/// gives, strictly better in at least one of them.
pub fn dominates(x: Offer, y: Offer, relative_to: Offer) -> bool {
    let mut strict = false;
    for g in 0..2 {
        if relative_to.0[g] == 0 {
            continue;
        }
        // Giving more or requesting less both lower the signed component.
        match x.0[g].cmp(&y.0[g]) {
            Ordering::Greater => return false,
            Ordering::Less => strict = true,
            Ordering::Equal => {}
        }
    }
    strict
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ParticipantKind {
    Player { id: usize },
    Marketplace { id: usize, offer: usize },
}

impl ParticipantKind {
    pub fn player(self) -> Option<usize> {
        match self {
            ParticipantKind::Player { id } => Some(id),
            ParticipantKind::Marketplace { .. } => None,
        }
    }

    pub fn is_marketplace(self) -> bool {
        matches!(self, ParticipantKind::Marketplace { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TradeParticipant {
    pub kind: ParticipantKind,
    pub position: Position,
    pub offer: Offer,
    /// `None` for marketplaces, whose stock is unbounded.
    pub inventory: Option<[u32; 2]>,
}

impl TradeParticipant {
    pub fn player(id: usize, position: Position, offer: Offer, inventory: [u32; 2]) -> Self {
        Self { kind: ParticipantKind::Player { id }, position, offer, inventory: Some(inventory) }
    }

    pub fn marketplace(id: usize, offer_index: usize, position: Position, offer: Offer) -> Self {
        Self { kind: ParticipantKind::Marketplace { id, offer: offer_index }, position, offer, inventory: None }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Party {
    pub who: ParticipantKind,
    pub position: Position,
}

/// One executed swap. Both quantities are strictly positive.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub tick: u32,
    pub apple_buyer: Party,
    pub apple_seller: Party,
    pub apples: u32,
    pub bananas: u32,
}

impl ExchangeRecord {
    /// Bananas per apple as an exact integer pair `(bananas, apples)`.
    pub fn price_ratio(&self) -> (u32, u32) {
        (self.bananas, self.apples)
    }

    pub fn price(&self) -> f64 {
        f64::from(self.bananas) / f64::from(self.apples)
    }

    /// Signed inventory change of `who` in this exchange.
    pub fn delta_for(&self, who: ParticipantKind) -> [i64; 2] {
        let (a, b) = (i64::from(self.apples), i64::from(self.bananas));
        if self.apple_buyer.who == who {
            [a, -b]
        } else if self.apple_seller.who == who {
            [-a, b]
        } else {
            [0, 0]
        }
    }
}

/// Source of the engine's two random decisions: the visiting order and the
/// final tie-break. Abstracted so that tests can enumerate every branch.
pub trait Chooser {
    fn order(&mut self, items: &mut [usize]);
    /// A choice in `0..n`, `n >= 2`.
    fn pick(&mut self, n: usize) -> usize;
}

pub struct RngChooser<'a, R: Rng + ?Sized>(pub &'a mut R);

impl<R: Rng + ?Sized> Chooser for RngChooser<'_, R> {
    fn order(&mut self, items: &mut [usize]) {
        items.shuffle(self.0);
    }

    fn pick(&mut self, n: usize) -> usize {
        self.0.gen_range(0..n)
    }
}

fn pick_among<C: Chooser + ?Sized>(chooser: &mut C, n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        chooser.pick(n)
    }
}

fn can_pair(a: &TradeParticipant, b: &TradeParticipant) -> bool {
    !(a.kind.is_marketplace() && b.kind.is_marketplace())
}

/// Participants within `radius` of `i` whose live offers match `i`'s.
fn candidates(scene: &[TradeParticipant], i: usize, radius: f64, rule: MatchRule) -> Vec<usize> {
    let me = &scene[i];
    (0..scene.len())
        .filter(|&j| {
            let other = &scene[j];
            j != i
                && can_pair(me, other)
                && within_radius(me.position, other.position, radius)
                && rule.matches(me.offer, other.offer)
        })
        .collect()
}

fn undominated(scene: &[TradeParticipant], i: usize, cands: &[usize]) -> Vec<usize> {
    let mine = scene[i].offer;
    cands
        .iter()
        .copied()
        .filter(|&c| !cands.iter().any(|&d| dominates(scene[d].offer, scene[c].offer, mine)))
        .collect()
}

/// Partner chosen for `i`, if any: undominated from `i`'s side, `i`
/// undominated from the partner's side, nearest, then random.
fn select_partner<C: Chooser + ?Sized>(
    scene: &[TradeParticipant],
    i: usize,
    radius: f64,
    rule: MatchRule,
    chooser: &mut C,
) -> Option<usize> {
    let best = undominated(scene, i, &candidates(scene, i, radius, rule));
    let mutual: Vec<usize> = best
        .into_iter()
        .filter(|&c| undominated(scene, c, &candidates(scene, c, radius, rule)).contains(&i))
        .collect();
    let nearest = mutual.iter().map(|&c| scene[i].position.distance_sq(scene[c].position)).min()?;
    let tied: Vec<usize> =
        mutual.into_iter().filter(|&c| scene[i].position.distance_sq(scene[c].position) == nearest).collect();
    Some(tied[pick_among(chooser, tied.len())])
}

fn apply_delta(inv: &mut Option<[u32; 2]>, delta: [i32; 2], who: ParticipantKind) {
    if let Some(inv) = inv {
        for g in 0..2 {
            let next = i64::from(inv[g]) + i64::from(delta[g]);
            assert!(next >= 0, "exchange would drive {who:?} inventory negative");
            inv[g] = next as u32;
        }
    }
}

/// Swaps goods between `scene[a]` and `scene[b]` using `transfer` from `a`'s
/// perspective, resets player offers and returns the record.
fn execute(scene: &mut [TradeParticipant], a: usize, b: usize, transfer: [i32; 2], tick: u32) -> ExchangeRecord {
    let inverse = [-transfer[0], -transfer[1]];
    let (ka, kb) = (scene[a].kind, scene[b].kind);
    apply_delta(&mut scene[a].inventory, transfer, ka);
    apply_delta(&mut scene[b].inventory, inverse, kb);
    for idx in [a, b] {
        if !scene[idx].kind.is_marketplace() {
            scene[idx].offer = Offer::NULL;
        }
    }
    let party = |i: usize| Party { who: scene[i].kind, position: scene[i].position };
    let (buyer, seller) = if transfer[0] > 0 { (a, b) } else { (b, a) };
    debug_assert!(transfer[0] != 0 && transfer[1] != 0 && transfer[0].signum() != transfer[1].signum());
    ExchangeRecord {
        tick,
        apple_buyer: party(buyer),
        apple_seller: party(seller),
        apples: transfer[0].unsigned_abs(),
        bananas: transfer[1].unsigned_abs(),
    }
}

/// Resolves all exchanges for one tick with an explicit source of
/// randomness. Marketplaces never initiate, and never trade with each other.
pub fn resolve_with<C: Chooser + ?Sized>(
    scene: &mut [TradeParticipant],
    trade_radius: f64,
    rule: MatchRule,
    tick: u32,
    chooser: &mut C,
) -> Vec<ExchangeRecord> {
    let mut order: Vec<usize> =
        (0..scene.len()).filter(|&i| !scene[i].kind.is_marketplace() && !scene[i].offer.is_null()).collect();
    chooser.order(&mut order);
    let mut records = Vec::new();
    for i in order {
        if !scene[i].offer.is_complete() {
            continue;
        }
        if let Some(partner) = select_partner(scene, i, trade_radius, rule, chooser) {
            let transfer = exchange_quantities(scene[i].offer, scene[partner].offer);
            records.push(execute(scene, i, partner, transfer, tick));
        }
    }
    records
}

/// End-of-tick resolution for `mechanism`; a no-op for mechanisms without
/// environment-side matching.
pub fn resolve_exchanges<R: Rng + ?Sized>(
    scene: &mut [TradeParticipant],
    trade_radius: f64,
    mechanism: Mechanism,
    tick: u32,
    rng: &mut R,
) -> Vec<ExchangeRecord> {
    match mechanism.match_rule() {
        Some(rule) => resolve_with(scene, trade_radius, rule, tick, &mut RngChooser(rng)),
        None => Vec::new(),
    }
}

/// Buy action: trades immediately with the visible offer giving the most of
/// `desired` per unit of the other good, among those `actor` can pay for.
pub fn accept_best<C: Chooser + ?Sized>(
    scene: &mut [TradeParticipant],
    actor: usize,
    desired: Good,
    trade_radius: f64,
    tick: u32,
    chooser: &mut C,
) -> Option<ExchangeRecord> {
    let other = desired.other();
    let me = &scene[actor];
    let have = me.inventory.map_or(u32::MAX, |inv| inv[other.index()]);
    let eligible: Vec<usize> = (0..scene.len())
        .filter(|&j| {
            let o = &scene[j];
            j != actor
                && can_pair(me, o)
                && o.offer.is_complete()
                && o.offer.get(desired) < 0
                && o.offer.get(other) > 0
                && u32::from(o.offer.get(other).unsigned_abs()) <= have
                && within_radius(me.position, o.position, trade_radius)
        })
        .collect();
    // ratio = given / requested; compare by cross-multiplication.
    let ratio_cmp = |x: Offer, y: Offer| {
        let lhs = i32::from(-x.get(desired)) * i32::from(y.get(other));
        let rhs = i32::from(-y.get(desired)) * i32::from(x.get(other));
        lhs.cmp(&rhs)
    };
    let best = eligible.iter().copied().max_by(|&a, &b| ratio_cmp(scene[a].offer, scene[b].offer))?;
    let top: Vec<usize> =
        eligible.into_iter().filter(|&j| ratio_cmp(scene[j].offer, scene[best].offer) == Ordering::Equal).collect();
    let origin = scene[actor].position;
    let nearest = top.iter().map(|&j| origin.distance_sq(scene[j].position)).min()?;
    let tied: Vec<usize> = top.into_iter().filter(|&j| origin.distance_sq(scene[j].position) == nearest).collect();
    let partner = tied[pick_among(chooser, tied.len())];
    let inverse = scene[partner].offer.inverse();
    scene[actor].offer = inverse;
    let transfer = exchange_quantities(inverse, scene[partner].offer);
    Some(execute(scene, actor, partner, transfer, tick))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DynamicAction {
    Increase(Good),
    Decrease(Good),
    Cancel,
}

/// Increment/decrement one offer component, clamped to the offer range; the
/// result degrades to null when it would give more than `inventory` holds.
pub fn apply_dynamic(offer: Offer, action: DynamicAction, inventory: [u32; 2]) -> Offer {
    let mut next = offer;
    match action {
        DynamicAction::Cancel => return Offer::NULL,
        DynamicAction::Increase(g) => {
            next.0[g.index()] = (next.0[g.index()] + 1).min(MAX_OFFER_QUANTITY);
        }
        DynamicAction::Decrease(g) => {
            next.0[g.index()] = (next.0[g.index()] - 1).max(-MAX_OFFER_QUANTITY);
        }
    }
    if next.affordable(inventory) {
        next
    } else {
        Offer::NULL
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropGiveAction {
    Drop(Good),
    Give(Good),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropGiveOutcome {
    Dropped { good: Good, at: Position },
    Given { good: Good, to: usize },
}

/// Drop one unit on the faced tile (passable, unoccupied, no item there) or
/// give one unit to the nearest other player within `give_radius`.
pub fn drop_or_give<C: Chooser + ?Sized>(
    world: &mut MapState,
    players: &mut [PlayerState],
    actor: usize,
    action: DropGiveAction,
    give_radius: f64,
    chooser: &mut C,
) -> Option<DropGiveOutcome> {
    let good = match action {
        DropGiveAction::Drop(g) | DropGiveAction::Give(g) => g,
    };
    if players[actor].inventory[good.index()] == 0 {
        return None;
    }
    let outcome = match action {
        DropGiveAction::Drop(_) => {
            let at = players[actor].facing_tile();
            let occupied = players.iter().any(|p| p.position == at);
            let tile = world.tile_mut(at)?;
            if !tile.is_passable() || tile.ground_item.is_some() || occupied {
                return None;
            }
            tile.ground_item = Some(good);
            DropGiveOutcome::Dropped { good, at }
        }
        DropGiveAction::Give(_) => {
            let origin = players[actor].position;
            let in_range: Vec<usize> = (0..players.len())
                .filter(|&j| j != actor && within_radius(origin, players[j].position, give_radius))
                .collect();
            let nearest = in_range.iter().map(|&j| origin.distance_sq(players[j].position)).min()?;
            let tied: Vec<usize> =
                in_range.into_iter().filter(|&j| origin.distance_sq(players[j].position) == nearest).collect();
            let to = tied[pick_among(chooser, tied.len())];
            players[to].inventory[good.index()] += 1;
            DropGiveOutcome::Given { good, to }
        }
    };
    players[actor].inventory[good.index()] -= 1;
    players[actor].revalidate_offer();
    Some(outcome)
}
