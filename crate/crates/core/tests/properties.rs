use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fruitmarket::agents::loss::{n_step_return, psi_weights};
use fruitmarket::economy::RoleKind;
use fruitmarket::env::{Env, EpisodeConfig, RosterEntry};
use fruitmarket::exchange::{
    accept_best, dominates, exchange_quantities, is_compatible, resolve_with, ExchangeRecord, MatchRule, Mechanism,
    Offer, ParticipantKind, RngChooser, TradeParticipant, STANDARD_OFFERS,
};
use fruitmarket::metrics::{EpisodeLog, EpisodeRecorder, EpisodeSummary};
use fruitmarket::world::{generate_map, within_radius, Good, MapConfig, Position};

fn any_offer() -> impl Strategy<Value = Offer> {
    (-3i8..=3, -3i8..=3).prop_map(|(a, b)| Offer::new(a, b))
}

fn menu_offer() -> impl Strategy<Value = Offer> {
    (0..=STANDARD_OFFERS.len()).prop_map(|i| STANDARD_OFFERS.get(i).copied().unwrap_or(Offer::NULL))
}

fn compatible_pair() -> impl Strategy<Value = (Offer, Offer)> {
    let all: Vec<Offer> = (-3i8..=3).flat_map(|a| (-3i8..=3).map(move |b| Offer::new(a, b))).collect();
    let pairs: Vec<(Offer, Offer)> =
        all.iter().flat_map(|&a| all.iter().map(move |&b| (a, b))).filter(|&(a, b)| is_compatible(a, b)).collect();
    prop::sample::select(pairs)
}

#[derive(Clone, Debug)]
struct Scene {
    parts: Vec<TradeParticipant>,
    radius: f64,
    rule: MatchRule,
    seed: u64,
}

fn scene() -> impl Strategy<Value = Scene> {
    let player = (0i32..6, 0i32..6, menu_offer(), 0u32..5, 0u32..5);
    (
        prop::collection::vec(player, 1..8),
        prop::collection::vec(menu_offer(), 0..3),
        1.0f64..5.0,
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(players, market, radius, inverse, seed)| {
            let mut parts: Vec<TradeParticipant> = players
                .into_iter()
                .enumerate()
                .map(|(id, (x, y, offer, a, b))| {
                    let inv = [a, b];
                    let offer = if offer.affordable(inv) { offer } else { Offer::NULL };
                    TradeParticipant::player(id, Position::new(x, y), offer, inv)
                })
                .collect();
            let site = Position::new(2, 2);
            parts.extend(market.into_iter().enumerate().map(|(k, o)| TradeParticipant::marketplace(0, k, site, o)));
            let rule = if inverse { MatchRule::Inverse } else { MatchRule::Compatible };
            Scene { parts, radius, rule, seed }
        })
}

fn totals(parts: &[TradeParticipant]) -> [i64; 2] {
    let mut t = [0i64; 2];
    for p in parts {
        if let Some(inv) = p.inventory {
            t[0] += i64::from(inv[0]);
            t[1] += i64::from(inv[1]);
        }
    }
    t
}

fn market_flow(records: &[ExchangeRecord]) -> [i64; 2] {
    let mut f = [0i64; 2];
    for r in records {
        for party in [r.apple_buyer, r.apple_seller] {
            if party.who.is_marketplace() {
                let d = r.delta_for(party.who);
                f[0] += d[0];
                f[1] += d[1];
            }
        }
    }
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn compatibility_is_symmetric(a in any_offer(), b in any_offer()) {
        prop_assert_eq!(is_compatible(a, b), is_compatible(b, a));
    }

    #[test]
    fn exact_inverses_are_compatible(a in any_offer()) {
        if a.is_complete() {
            prop_assert!(is_compatible(a, a.inverse()));
            prop_assert!(MatchRule::Inverse.matches(a, a.inverse()));
        }
    }

    #[test]
    fn each_side_gets_exactly_its_request((a, b) in compatible_pair()) {
        let t = exchange_quantities(a, b);
        for g in 0..2 {
            let (ag, bg) = (i32::from(a.0[g]), i32::from(b.0[g]));
            if ag > 0 {
                prop_assert_eq!(t[g], ag);
                prop_assert!(-bg >= ag);
            }
            if bg > 0 {
                prop_assert_eq!(-t[g], bg);
                prop_assert!(-ag >= bg);
            }
            if ag == 0 && bg == 0 {
                prop_assert_eq!(t[g], 0);
            }
        }
        prop_assert_eq!(exchange_quantities(b, a), [-t[0], -t[1]]);
    }

    #[test]
    fn domination_is_a_strict_order(x in any_offer(), y in any_offer(), z in any_offer(), r in any_offer()) {
        prop_assert!(!dominates(x, x, r));
        prop_assert!(!(dominates(x, y, r) && dominates(y, x, r)));
        if dominates(x, y, r) && dominates(y, z, r) {
            prop_assert!(dominates(x, z, r));
        }
    }

    #[test]
    fn resolution_conserves_and_nulls_traders(s in scene()) {
        let mut parts = s.parts.clone();
        let before = totals(&parts);
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let records = resolve_with(&mut parts, s.radius, s.rule, 0, &mut RngChooser(&mut rng));
        let after = totals(&parts);
        let flow = market_flow(&records);
        prop_assert_eq!([after[0] - before[0], after[1] - before[1]], [-flow[0], -flow[1]]);

        let mut seen = Vec::new();
        for r in &records {
            prop_assert!(r.apples > 0 && r.bananas > 0);
            let buyer = s.parts.iter().position(|p| p.kind == r.apple_buyer.who).unwrap();
            let seller = s.parts.iter().position(|p| p.kind == r.apple_seller.who).unwrap();
            let (bo, so) = (s.parts[buyer].offer, s.parts[seller].offer);
            prop_assert!(s.rule.matches(bo, so));
            prop_assert!(within_radius(s.parts[buyer].position, s.parts[seller].position, s.radius));
            prop_assert_eq!(exchange_quantities(bo, so), [r.apples as i32, -(r.bananas as i32)]);
            for who in [r.apple_buyer.who, r.apple_seller.who] {
                if let ParticipantKind::Player { id } = who {
                    prop_assert!(!seen.contains(&id), "player {} traded twice", id);
                    seen.push(id);
                    prop_assert!(parts[id].offer.is_null());
                }
            }
        }
        for (old, new) in s.parts.iter().zip(&parts) {
            if old.kind.is_marketplace() {
                prop_assert_eq!(old, new);
            } else if let ParticipantKind::Player { id } = old.kind {
                if !seen.contains(&id) {
                    prop_assert_eq!(old, new);
                }
            }
        }
    }

    #[test]
    fn accepting_equals_holding_the_inverse(s in scene(), actor_pick in any::<prop::sample::Index>(), banana in any::<bool>()) {
        let players: Vec<usize> = (0..s.parts.len()).filter(|&i| !s.parts[i].kind.is_marketplace()).collect();
        let actor = players[actor_pick.index(players.len())];
        let desired = if banana { Good::Banana } else { Good::Apple };
        let mut parts = s.parts.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let Some(rec) = accept_best(&mut parts, actor, desired, s.radius, 0, &mut RngChooser(&mut rng)) else {
            return Ok(());
        };
        let me = s.parts[actor].kind;
        let other = if rec.apple_buyer.who == me { rec.apple_seller.who } else { rec.apple_buyer.who };
        let partner = s.parts.iter().position(|p| p.kind == other).unwrap();

        let mut pair = vec![s.parts[actor].clone(), s.parts[partner].clone()];
        pair[0].offer = s.parts[partner].offer.inverse();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let direct = resolve_with(&mut pair, s.radius, MatchRule::Inverse, 0, &mut RngChooser(&mut rng));
        prop_assert_eq!(direct.len(), 1);
        prop_assert_eq!(direct[0].delta_for(me), rec.delta_for(me));
        prop_assert_eq!(&pair[0].inventory, &parts[actor].inventory);
        prop_assert_eq!(&pair[1].inventory, &parts[partner].inventory);
        prop_assert!(rec.delta_for(me)[desired.index()] > 0);
    }

    #[test]
    fn psi_is_a_shift_invariant_distribution(
        adv in prop::collection::vec(-50.0f64..50.0, 1..40),
        shift in -100.0f64..100.0,
        eta in 0.05f64..5.0,
        rot in any::<prop::sample::Index>(),
    ) {
        let psi = psi_weights(&adv, eta);
        prop_assert!((psi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(psi.iter().all(|&w| (0.0..=1.0).contains(&w)));

        let shifted: Vec<f64> = adv.iter().map(|a| a + shift).collect();
        for (p, q) in psi.iter().zip(psi_weights(&shifted, eta)) {
            prop_assert!((p - q).abs() < 1e-9);
        }

        let k = rot.index(adv.len());
        let mut rotated = adv.clone();
        rotated.rotate_left(k);
        let mut expect = psi.clone();
        expect.rotate_left(k);
        for (p, q) in expect.iter().zip(psi_weights(&rotated, eta)) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn n_step_return_matches_direct_sum(
        rewards in prop::collection::vec(-5.0f64..5.0, 1..30),
        extra in prop::collection::vec(-5.0f64..5.0, 31),
        terminal in any::<bool>(),
        t_pick in any::<prop::sample::Index>(),
        n in 1usize..25,
        gamma in 0.0f64..1.0,
    ) {
        let len = rewards.len();
        let values = &extra[..=len];
        let t = t_pick.index(len);
        let mut g = 0.0;
        let mut k = t;
        while k < len && k < t + n {
            g += gamma.powi((k - t) as i32) * rewards[k];
            k += 1;
        }
        if !(terminal && k == len) {
            g += gamma.powi((k - t) as i32) * values[k];
        }
        prop_assert!((n_step_return(&rewards, values, terminal, t, n, gamma) - g).abs() < 1e-9);
    }

    #[test]
    fn map_generation_is_seed_deterministic(seed in any::<u64>(), template in prop::sample::select(vec!["tiny", "uniform", "walls"])) {
        let cfg = MapConfig { template: template.to_string(), ..MapConfig::default() };
        let a = generate_map(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = generate_map(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.dump(), b.dump());
        prop_assert_eq!(a.tiles(), b.tiles());
    }
}

fn random_episode(cfg: EpisodeConfig, seed: u64) -> (Env, EpisodeLog) {
    let mut env = Env::new(cfg).unwrap();
    env.reset(seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut rec = EpisodeRecorder::new(&env, 0, (0..env.num_players()).collect());
    let radius = env.config().visibility_radius;
    while !env.done() {
        let before: Vec<f64> = env.players().iter().map(|p| p.ledger.total()).collect();
        let actions: Vec<usize> = (0..env.num_players()).map(|_| rng.gen_range(0..env.action_count())).collect();
        let step = env.step(&actions).unwrap();
        let players = env.players();
        for (i, p) in players.iter().enumerate() {
            assert!(p.satiation <= 30);
            assert_eq!(step.observations[i].satiation, p.satiation);
            assert_eq!(step.rewards[i], p.ledger.total() - before[i], "reward of player {i}");
            if !env.config().constants.hunger_enabled {
                assert_eq!(p.ledger.hunger, 0.0);
            }
            for (j, o) in step.observations[i].offers.iter().enumerate() {
                if !o.is_null() {
                    assert_ne!(i, j);
                    assert!(within_radius(p.position, players[j].position, radius));
                    assert_eq!(*o, players[j].offer);
                }
            }
        }
        rec.record(&actions, &step);
    }
    let log = rec.finish(&env);
    (env, log)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_episodes_keep_env_invariants(
        seed in any::<u64>(),
        mech in prop::sample::select(Mechanism::ALL.to_vec()),
        hunger in any::<bool>(),
    ) {
        let mut cfg = EpisodeConfig {
            mechanism: mech,
            episode_length: 150,
            map: MapConfig { template: "tiny".into(), ..MapConfig::default() },
            roster: [RoleKind::AppleFarmer, RoleKind::BananaFarmer].repeat(2).into_iter().map(RosterEntry::new).collect(),
            ..EpisodeConfig::default()
        };
        cfg.constants.hunger_enabled = hunger;
        let (env, log) = random_episode(cfg, seed);

        let text = log.to_jsonl();
        let back = EpisodeLog::read_jsonl(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &log);
        prop_assert_eq!(back.to_jsonl(), text);

        let s1 = EpisodeSummary::from_log(&log);
        let s2 = EpisodeSummary::from_log(&back);
        prop_assert_eq!(&s1, &s2);
        prop_assert!(s1.check_conservation().is_ok());
        for (p, s) in env.players().iter().zip(&s1.players) {
            prop_assert_eq!(p.ledger.total(), s.ledger.total());
            prop_assert_eq!(p.inventory, s.final_inventory);
        }
    }
}
