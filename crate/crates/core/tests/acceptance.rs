//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fruitmarket::agents::features::{encode, net_shape};
use fruitmarket::agents::loss::{a2c_policy_loss, policy_loss, psi_weights, value_loss};
use fruitmarket::agents::{Algorithm, LearnerConfig, Net, NetConfig, NetShape, ScriptedKind, ScriptedPolicy};
use fruitmarket::bench::{run_ticks, Scenario};
use fruitmarket::economy::{MoveAction, RoleKind};
use fruitmarket::env::{encode_action, Action, Env, EpisodeConfig, RosterEntry};
use fruitmarket::exchange::{
    exchange_quantities, is_compatible, resolve_exchanges, resolve_with, Chooser, ExchangeRecord, MatchRule,
    Mechanism, Offer, Party, ParticipantKind, TradeParticipant, STANDARD_OFFERS,
};
use fruitmarket::experiment::{self, ExperimentConfig, Existing};
use fruitmarket::metrics::{average_price, net_traded, replay, EpisodeLog, EpisodeRecorder, EpisodeSummary, Event};
use fruitmarket::trainer::{TrainConfig, Trainer};
use fruitmarket::world::{generate_map, MapConfig, Position};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    check(elapsed < limit, || format!("{what} took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
}

/// The nineteen representable standard offers: null first.
fn all_offers() -> Vec<Offer> {
    std::iter::once(Offer::NULL).chain(STANDARD_OFFERS).collect()
}

/// Reference semantics written directly from the exchange rules, without the
/// engine's helpers.
mod oracle {
    use super::*;

    fn gives(o: Offer, g: usize) -> i32 {
        i32::from((-o.0[g]).max(0))
    }

    fn wants(o: Offer, g: usize) -> i32 {
        i32::from(o.0[g].max(0))
    }

    fn complete(o: Offer) -> bool {
        (0..2).any(|g| gives(o, g) > 0) && (0..2).any(|g| wants(o, g) > 0)
    }

    /// Whether `a` accepts receiving `t` (negative = paying): it must get at
    /// least what it asks for, pay no more than it offers, and pay only in
    /// goods it offers.
    fn accepts(a: Offer, t: [i32; 2]) -> bool {
        (0..2).all(|g| {
            if wants(a, g) > 0 {
                t[g] >= wants(a, g)
            } else if gives(a, g) > 0 {
                t[g] <= 0 && -t[g] <= gives(a, g)
            } else {
                t[g] == 0
            }
        })
    }

    /// Every transfer (from `a`'s side) both parties accept.
    fn agreeable(a: Offer, b: Offer) -> Vec<[i32; 2]> {
        let mut out = Vec::new();
        if !complete(a) || !complete(b) {
            return out;
        }
        for x in -3..=3 {
            for y in -3..=3 {
                if accepts(a, [x, y]) && accepts(b, [-x, -y]) {
                    out.push([x, y]);
                }
            }
        }
        out
    }

    pub fn compatible(a: Offer, b: Offer) -> bool {
        !agreeable(a, b).is_empty()
    }

    /// The agreeable transfer moving the fewest goods.
    pub fn quantities(a: Offer, b: Offer) -> Option<[i32; 2]> {
        agreeable(a, b).into_iter().min_by_key(|t| t[0].abs() + t[1].abs())
    }

    /// `x` treats the holder of `r` at least as well as `y` in every good
    /// `r` trades and strictly better in one: gives more of what `r` wants
    /// or asks less of what `r` gives.
    pub fn dominates(x: Offer, y: Offer, r: Offer) -> bool {
        let mut better = false;
        for g in 0..2 {
            let (dx, dy) = if wants(r, g) > 0 {
                (gives(x, g), gives(y, g))
            } else if gives(r, g) > 0 {
                (-wants(x, g), -wants(y, g))
            } else {
                continue;
            };
            if dx < dy {
                return false;
            }
            better |= dx > dy;
        }
        better
    }

    #[derive(Clone, Debug)]
    pub struct Part {
        pub market: bool,
        pub pos: (i32, i32),
        pub offer: Offer,
    }

    /// Exchange as (apple buyer, apple seller, apples, bananas), indices into
    /// the scene.
    pub type Trade = (usize, usize, u32, u32);

    fn near(a: &Part, b: &Part, r2: i32) -> bool {
        let (dx, dy) = (a.pos.0 - b.pos.0, a.pos.1 - b.pos.1);
        dx * dx + dy * dy <= r2
    }

    fn dist(a: &Part, b: &Part) -> i32 {
        let (dx, dy) = (a.pos.0 - b.pos.0, a.pos.1 - b.pos.1);
        dx * dx + dy * dy
    }

    fn candidates(s: &[Part], i: usize, r2: i32, inverse: bool) -> Vec<usize> {
        (0..s.len())
            .filter(|&j| {
                j != i
                    && !(s[i].market && s[j].market)
                    && near(&s[i], &s[j], r2)
                    && if inverse {
                        complete(s[i].offer) && s[i].offer.0 == [-s[j].offer.0[0], -s[j].offer.0[1]]
                    } else {
                        compatible(s[i].offer, s[j].offer)
                    }
            })
            .collect()
    }

    fn most_generous(s: &[Part], i: usize, c: &[usize]) -> Vec<usize> {
        c.iter().copied().filter(|&x| !c.iter().any(|&y| dominates(s[y].offer, s[x].offer, s[i].offer))).collect()
    }

    fn step(s: &mut Vec<Part>, rest: &[usize], r2: i32, inverse: bool, done: &mut Vec<Trade>, out: &mut BTreeSet<Vec<Trade>>) {
        let Some((&i, rest)) = rest.split_first() else {
            out.insert(done.clone());
            return;
        };
        if !complete(s[i].offer) {
            return step(s, rest, r2, inverse, done, out);
        }
        let mine = most_generous(s, i, &candidates(s, i, r2, inverse));
        let mutual: Vec<usize> = mine
            .into_iter()
            .filter(|&c| most_generous(s, c, &candidates(s, c, r2, inverse)).contains(&i))
            .collect();
        let Some(best) = mutual.iter().map(|&c| dist(&s[i], &s[c])).min() else {
            return step(s, rest, r2, inverse, done, out);
        };
        let tied: Vec<usize> = mutual.into_iter().filter(|&c| dist(&s[i], &s[c]) == best).collect();
        for c in tied {
            let t = quantities(s[i].offer, s[c].offer).expect("candidates are compatible");
            let trade = if t[0] > 0 {
                (i, c, t[0] as u32, (-t[1]) as u32)
            } else {
                (c, i, (-t[0]) as u32, t[1] as u32)
            };
            let saved = (s[i].offer, s[c].offer);
            s[i].offer = Offer::NULL;
            if !s[c].market {
                s[c].offer = Offer::NULL;
            }
            done.push(trade);
            step(s, rest, r2, inverse, done, out);
            done.pop();
            s[i].offer = saved.0;
            s[c].offer = saved.1;
        }
    }

    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for k in 0..items.len() {
            let mut rest = items.to_vec();
            let first = rest.remove(k);
            for mut p in permutations(&rest) {
                p.insert(0, first);
                out.push(p);
            }
        }
        out
    }

    /// Every exchange sequence reachable under some loop order and tie-break.
    pub fn outcomes(scene: &[Part], radius: i32, inverse: bool) -> BTreeSet<Vec<Trade>> {
        let makers: Vec<usize> = (0..scene.len()).filter(|&i| !scene[i].market && scene[i].offer != Offer::NULL).collect();
        let mut out = BTreeSet::new();
        for order in permutations(&makers) {
            step(&mut scene.to_vec(), &order, radius * radius, inverse, &mut Vec::new(), &mut out);
        }
        out
    }
}

/// Replays a fixed prefix of decisions and extends it with zeros, so that
/// repeated runs walk every branch of the engine's random choices.
struct Script {
    choices: Vec<usize>,
    arities: Vec<usize>,
    at: usize,
}

impl Script {
    fn next(&mut self, n: usize) -> usize {
        if self.at == self.choices.len() {
            self.choices.push(0);
            self.arities.push(n);
        }
        assert_eq!(self.arities[self.at], n, "engine made a different decision on replay");
        self.at += 1;
        self.choices[self.at - 1]
    }

    /// Advances to the next untried branch; false when exhausted.
    fn advance(&mut self) -> bool {
        self.at = 0;
        while let Some(c) = self.choices.pop() {
            let n = self.arities.pop().unwrap();
            if c + 1 < n {
                self.choices.push(c + 1);
                self.arities.push(n);
                return true;
            }
        }
        false
    }
}

impl Chooser for Script {
    fn order(&mut self, items: &mut [usize]) {
        let mut pool = items.to_vec();
        for slot in items.iter_mut() {
            let k = if pool.len() > 1 { self.next(pool.len()) } else { 0 };
            *slot = pool.remove(k);
        }
    }

    fn pick(&mut self, n: usize) -> usize {
        self.next(n)
    }
}

fn scene_index(p: &Party, scene: &[TradeParticipant]) -> usize {
    scene.iter().position(|x| x.kind == p.who).expect("party is in the scene")
}

fn engine_outcomes(scene: &[TradeParticipant], radius: f64, rule: MatchRule) -> BTreeSet<Vec<oracle::Trade>> {
    let mut script = Script { choices: Vec::new(), arities: Vec::new(), at: 0 };
    let mut out = BTreeSet::new();
    loop {
        let mut work = scene.to_vec();
        let records = resolve_with(&mut work, radius, rule, 0, &mut script);
        out.insert(
            records
                .iter()
                .map(|r| (scene_index(&r.apple_buyer, scene), scene_index(&r.apple_seller, scene), r.apples, r.bananas))
                .collect(),
        );
        if !script.advance() {
            return out;
        }
    }
}

fn compatibility_oracle() -> Outcome {
    let start = Instant::now();
    let offers = all_offers();
    let mut compatible = 0;
    for &a in &offers {
        for &b in &offers {
            let want = oracle::compatible(a, b);
            check(is_compatible(a, b) == want, || format!("{a} vs {b}: engine {} oracle {want}", !want))?;
            compatible += usize::from(want);
        }
    }
    let named = [
        (Offer::new(-1, 1), Offer::new(1, -1), true),
        (Offer::new(-2, 1), Offer::new(1, -1), true),
        (Offer::new(-2, 1), Offer::new(1, -2), true),
        (Offer::new(-1, 2), Offer::new(1, -1), false),
    ];
    for (a, b, want) in named {
        check(is_compatible(a, b) == want, || format!("{a} vs {b} should be {want}"))?;
    }
    within(start.elapsed(), Duration::from_secs(1), "361 pairs")?;
    Ok(format!("361 pairs agree, {compatible} compatible, {:.1} ms", start.elapsed().as_secs_f64() * 1e3))
}

fn quantity_rule() -> Outcome {
    for b in [Offer::new(1, -1), Offer::new(1, -2)] {
        let a = Offer::new(-2, 1);
        let t = exchange_quantities(a, b);
        check(t == [-1, 1], || format!("{a} with {b}: transfer {t:?}"))?;
        check(oracle::quantities(a, b) == Some([-1, 1]), || "oracle disagrees".into())?;
    }
    let offers = all_offers();
    for &a in &offers {
        for &b in &offers {
            if is_compatible(a, b) {
                let t = exchange_quantities(a, b);
                check(Some([t[0], t[1]]) == oracle::quantities(a, b), || format!("{a} with {b}: {t:?}"))?;
            }
        }
    }
    Ok("[-2,1] with [1,-1] and [1,-2] both move 1 apple for 1 banana; all compatible pairs minimal".into())
}

fn domination_scene() -> Outcome {
    let scene = vec![
        TradeParticipant::player(0, Position::new(5, 5), Offer::new(-1, 1), [1, 0]),
        TradeParticipant::player(1, Position::new(6, 5), Offer::new(1, -1), [0, 1]),
        TradeParticipant::player(2, Position::new(5, 7), Offer::new(1, -2), [0, 2]),
    ];
    for seed in 0..100u64 {
        let mut work = scene.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = resolve_exchanges(&mut work, 4.0, Mechanism::Standard, 0, &mut rng);
        let ok = records.len() == 1
            && records[0].apple_seller.who == ParticipantKind::Player { id: 0 }
            && records[0].apple_buyer.who == ParticipantKind::Player { id: 2 }
            && (records[0].apples, records[0].bananas) == (1, 1);
        check(ok, || format!("seed {seed}: {records:?}"))?;
    }
    Ok("A trades with C, 1 apple for 1 banana, in 100/100 seeds".into())
}

fn random_part(rng: &mut ChaCha8Rng, offers: &[Offer], market: bool) -> (oracle::Part, [u32; 2]) {
    let offer = if market {
        STANDARD_OFFERS[rng.gen_range(0..STANDARD_OFFERS.len())]
    } else {
        offers[rng.gen_range(0..offers.len())]
    };
    let pos = (rng.gen_range(0..7), rng.gen_range(0..7));
    let inventory = offer.0.map(|q| (-q).max(0) as u32 + rng.gen_range(0..2));
    (oracle::Part { market, pos, offer }, inventory)
}

fn matching_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let offers = all_offers();
    let scenes = 12_000;
    let (mut with_trades, mut branching, mut market_scenes) = (0, 0, 0);
    for k in 0..scenes {
        let n = rng.gen_range(1..=5);
        let markets = if n >= 2 && rng.gen_bool(0.25) { rng.gen_range(1..=2.min(n - 1)) } else { 0 };
        let mut parts = Vec::new();
        let mut scene = Vec::new();
        let market_pos = (rng.gen_range(0..7), rng.gen_range(0..7));
        for i in 0..n {
            let market = i < markets;
            let (mut p, inv) = random_part(&mut rng, &offers, market);
            if market {
                p.pos = market_pos;
            }
            let pos = Position::new(p.pos.0, p.pos.1);
            scene.push(if market {
                TradeParticipant::marketplace(0, i, pos, p.offer)
            } else {
                TradeParticipant::player(i, pos, p.offer, inv)
            });
            parts.push(p);
        }
        let inverse = k % 5 == 4;
        let rule = if inverse { MatchRule::Inverse } else { MatchRule::Compatible };
        let radius = rng.gen_range(2..=5);
        let want = oracle::outcomes(&parts, radius, inverse);
        let got = engine_outcomes(&scene, f64::from(radius), rule);
        check(got == want, || format!("scene {k} (radius {radius}, inverse {inverse}): engine {got:?} oracle {want:?}\n{scene:?}"))?;
        with_trades += usize::from(want.iter().any(|o| !o.is_empty()));
        branching += usize::from(want.len() > 1);
        market_scenes += usize::from(markets > 0);
    }
    within(start.elapsed(), Duration::from_secs(300), "matching equivalence")?;
    Ok(format!(
        "{scenes} scenes identical ({with_trades} with exchanges, {branching} order-dependent, {market_scenes} with a marketplace), {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn idle_return() -> Outcome {
    let config = EpisodeConfig { episode_length: 1000, ..Default::default() };
    let mut env = Env::new(config).map_err(|e| e.to_string())?;
    let stand = encode_action(Action::Move(MoveAction::Stand), Mechanism::Standard).expect("stand exists");
    let mut returns = vec![0.0; env.num_players()];
    check(env.players().iter().all(|p| p.inventory == [0, 0]), || "players start with fruit".into())?;
    while !env.done() {
        let step = env.step(&vec![stand; env.num_players()]).map_err(|e| e.to_string())?;
        for (r, x) in returns.iter_mut().zip(&step.rewards) {
            *r += x;
        }
    }
    // 30 ticks of starting satiation, then -1 per tick
    let expected = -(1000.0 - 30.0);
    check(returns.iter().all(|&r| r == expected), || format!("returns {returns:?}"))?;
    Ok(format!("{} idle players each returned exactly {expected}", returns.len()))
}

fn random_episode(config: EpisodeConfig, seed: u64) -> Result<(Env, EpisodeLog, Vec<[i64; 2]>), String> {
    let mut env = Env::new(EpisodeConfig { seed, ..config }).map_err(|e| e.to_string())?;
    let mut policies: Vec<ScriptedPolicy> = env
        .roster()
        .iter()
        .enumerate()
        .map(|(i, e)| ScriptedPolicy::new(ScriptedKind::Random, env.config().role(e.role), env.config().mechanism, seed ^ ((i as u64 + 1) * 0x9e37)))
        .collect();
    let mut recorder = EpisodeRecorder::new(&env, 0, (0..env.num_players()).collect());
    let mut obs = env.observations();
    let mut drift = Vec::new();
    while !env.done() {
        let before = env.goods_in_world();
        let actions: Vec<usize> = policies.iter_mut().zip(&obs).map(|(p, o)| p.act(o)).collect();
        let step = env.step(&actions).map_err(|e| e.to_string())?;
        let mut flow = [0i64; 2];
        for e in &step.events {
            match e {
                Event::Harvest { good, quantity, .. } => flow[good.index()] += i64::from(*quantity),
                Event::Consume { good, .. } => flow[good.index()] -= 1,
                _ => {}
            }
        }
        let after = env.goods_in_world();
        drift.push([0, 1].map(|g| after[g] as i64 - before[g] as i64 - flow[g]));
        recorder.record(&actions, &step);
        obs = step.observations;
    }
    let log = recorder.finish(&env);
    Ok((env, log, drift))
}

fn conservation_fuzz() -> Outcome {
    let mut exchanges = 0;
    let mut moved = [0u64; 2];
    for k in 0..200u64 {
        let mechanism = Mechanism::ALL[(k % 6) as usize];
        let config = EpisodeConfig {
            mechanism,
            episode_length: 300,
            map: MapConfig { template: if k % 2 == 0 { "tiny" } else { "uniform" }.into(), ..Default::default() },
            ..Default::default()
        };
        let (_, log, drift) = random_episode(config, 1000 + k)?;
        if let Some((t, d)) = drift.iter().enumerate().find(|(_, d)| **d != [0, 0]) {
            return Err(format!("episode {k} ({}): stock drifted by {d:?} at tick {}", mechanism.name(), t + 1));
        }
        let summary = EpisodeSummary::from_log(&log);
        summary.check_conservation().map_err(|e| format!("episode {k} ({}): {e}", mechanism.name()))?;
        exchanges += summary.exchanges;
        for g in 0..2 {
            moved[g] += summary.total(|p| p.given)[g] + summary.total(|p| p.dropped)[g];
        }
    }
    Ok(format!("200 episodes over 6 mechanisms conserve every good ({exchanges} exchanges, {moved:?} given or dropped)"))
}

fn neutral_region() -> Outcome {
    let start = Instant::now();
    let mut cfg = MapConfig { template: "walls".into(), ..Default::default() };
    cfg.region_penalties.insert("neutral".into(), 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let maps = 10_000;
    let mut trees = 0usize;
    let mut tiles = 0;
    for _ in 0..maps {
        let map = generate_map(&cfg, &mut rng).map_err(|e| e.to_string())?;
        let r = map.region_index("neutral").ok_or("walls map has no neutral region")?;
        tiles = map.regions[r].spawnable_tiles;
        trees += map.tree_count(Some(r), None);
    }
    let mean = trees as f64 / maps as f64;
    let expected = 96.0 * 0.3 * 0.1;
    check(tiles == 96, || format!("neutral region has {tiles} spawnable tiles"))?;
    check((mean - expected).abs() <= 0.06, || format!("mean {mean:.4}, expected {expected}"))?;
    within(start.elapsed(), Duration::from_secs(30), "10,000 maps")?;
    Ok(format!("mean {mean:.4} trees over {maps} maps (expected {expected:.2}), {:.1}s", start.elapsed().as_secs_f64()))
}

fn price_metric() -> Outcome {
    let party = |id: usize| Party { who: ParticipantKind::Player { id }, position: Position::new(id as i32, 0) };
    let records: Vec<ExchangeRecord> = (0..7)
        .map(|t| ExchangeRecord { tick: t, apple_buyer: party(1), apple_seller: party(0), apples: 3, bananas: 2 })
        .collect();
    let price = average_price(&records).ok_or("no price")?;
    check((price - 2.0 / 3.0).abs() <= 1e-9, || format!("price {price}"))?;
    check(average_price(&[]).is_none(), || "empty input has a price".into())?;

    // (bought, sold) per player
    let cases: [(&[(u64, u64)], u64); 4] = [
        (&[(2, 5), (4, 1)], 3),
        (&[], 0),
        (&[(0, 0), (0, 0)], 0),
        (&[(0, 10)], 10),
    ];
    for (players, _) in cases {
        let direct: u64 = players.iter().map(|&(b, s)| s.saturating_sub(b)).sum();
        let got = net_traded(players.iter().copied());
        check(got == direct, || format!("{players:?}: {got} vs {direct}"))?;
    }
    for (players, want) in cases {
        let got = net_traded(players.iter().copied());
        check(got == want, || format!("{players:?}: {got}, expected {want}"))?;
    }
    Ok(format!("3a:2b price {price:.10}; net traded agrees on {} summaries", cases.len()))
}

const SMALL_RUN: &str = r#"
name = "det"

[episode]
episode_length = 150

[episode.map]
template = "tiny"

[learner]
n_step = 10
batch_segments = 4

[learner.net]
conv_channels = 2
dense = 8
lstm = 8
policy_head = [8]
value_head = [8]

[train]
apple_farmers = 6
banana_farmers = 6
max_episodes = 4
workers = 2
round_size = 2
log_every = 1
seed = 11
"#;

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig::from_toml_str(SMALL_RUN).map_err(|e| e.to_string())?;
    let a = experiment::run(&cfg, &dir.path().join("a"), Existing::Refuse).map_err(|e| e.to_string())?;
    let b = experiment::run(&cfg, &dir.path().join("b"), Existing::Refuse).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for i in 0..4 {
        let name = format!("logs/episode_{i:06}.jsonl");
        let (la, lb) = (fs::read(a.run_dir.join(&name)), fs::read(b.run_dir.join(&name)));
        let (la, lb) = (la.map_err(|e| format!("{name}: {e}"))?, lb.map_err(|e| format!("{name}: {e}"))?);
        check(la == lb, || format!("{name} differs between identical runs"))?;
        let log = EpisodeLog::read_jsonl(la.as_slice()).map_err(|e| e.to_string())?;
        let report = replay(&log);
        check(report.to_string() == "exact", || format!("{name}: {report}"))?;
        compared += 1;
    }
    for f in ["episodes.jsonl", "summary.csv"] {
        check(fs::read(a.run_dir.join(f)).ok() == fs::read(b.run_dir.join(f)).ok(), || format!("{f} differs"))?;
    }
    Ok(format!("{compared} episode logs byte-identical across runs, replay exact"))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn gradient_checks() -> Outcome {
    let shape = NetShape { cells: 4, channels: 2, nonvisual: 3, actions: 3 };
    let config = NetConfig { conv_channels: 2, dense: 4, lstm: 4, policy_head: vec![4], value_head: vec![4] };
    let mut net = Net::new(config, shape, 9);
    let params = net.num_params();
    check(params <= 500, || format!("{params} parameters"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for p in net.params.iter_mut() {
        *p += rng.gen_range(-0.3..0.3);
    }
    let steps = 4;
    let inputs: Vec<Vec<f32>> = (0..steps).map(|_| (0..shape.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let actions: Vec<usize> = (0..steps).map(|_| rng.gen_range(0..3)).collect();
    let targets: Vec<f64> = (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let advantages: Vec<f64> = (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let psi = psi_weights(&advantages, 0.5);
    let state = net.initial_state();

    let mut worst = 0.0f64;
    for which in ["value", "vmpo policy", "a2c policy"] {
        let eval = |net: &Net| -> (f64, Vec<f64>) {
            let refs: Vec<&[f32]> = inputs.iter().map(|x| x.as_slice()).collect();
            let caches = net.forward_sequence(&refs, &state);
            let logits: Vec<Vec<f64>> = caches.iter().map(|c| c.logits.clone()).collect();
            let values: Vec<f64> = caches.iter().map(|c| c.value).collect();
            let (loss, dlogits, dvalue) = match which {
                "value" => {
                    let (l, dv) = value_loss(&values, &targets);
                    (l, vec![vec![0.0; 3]; steps], dv)
                }
                "vmpo policy" => {
                    let (l, dl) = policy_loss(&logits, &actions, &psi);
                    (l, dl, vec![0.0; steps])
                }
                _ => {
                    let (l, dl) = a2c_policy_loss(&logits, &actions, &advantages, 0.05);
                    (l, dl, vec![0.0; steps])
                }
            };
            let mut grad = vec![0.0; net.num_params()];
            net.backward_sequence(&caches, &dlogits, &dvalue, &mut grad);
            (loss, grad)
        };
        let (_, analytic) = eval(&net);
        let eps = 1e-5;
        for i in 0..params {
            let orig = net.params[i];
            net.params[i] = orig + eps;
            let up = eval(&net).0;
            net.params[i] = orig - eps;
            let down = eval(&net).0;
            net.params[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let e = rel_err(analytic[i], numeric);
            check(e <= 1e-4, || format!("{which} loss, parameter {i}: analytic {} numeric {numeric} (rel {e:.2e})", analytic[i]))?;
            worst = worst.max(e);
        }
    }
    Ok(format!("value, weighted-policy and a2c losses over {params} parameters, worst relative error {worst:.1e}"))
}

struct TradeRun {
    exchanges: Vec<u64>,
    returns: [f64; 2],
}

fn scripted_pair(traders: bool, seeds: std::ops::Range<u64>) -> Result<TradeRun, String> {
    let config = EpisodeConfig {
        map: MapConfig { template: "tiny".into(), ..Default::default() },
        roster: vec![RosterEntry::new(RoleKind::AppleFarmer), RosterEntry::new(RoleKind::BananaFarmer)],
        ..Default::default()
    };
    let mut run = TradeRun { exchanges: Vec::new(), returns: [0.0; 2] };
    let episodes = (seeds.end - seeds.start) as f64;
    for seed in seeds {
        let mut env = Env::new(EpisodeConfig { seed, ..config.clone() }).map_err(|e| e.to_string())?;
        let mut policies: Vec<ScriptedPolicy> = env
            .roster()
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let kind = match (traders, e.role) {
                    (false, _) => ScriptedKind::Harvester,
                    (true, RoleKind::AppleFarmer) => ScriptedKind::Trader { offer: Offer::new(-1, 1) },
                    (true, RoleKind::BananaFarmer) => ScriptedKind::Trader { offer: Offer::new(1, -1) },
                };
                ScriptedPolicy::new(kind, env.config().role(e.role), env.config().mechanism, seed * 31 + i as u64)
            })
            .collect();
        let mut obs = env.observations();
        let mut count = 0;
        while !env.done() {
            let actions: Vec<usize> = policies.iter_mut().zip(&obs).map(|(p, o)| p.act(o)).collect();
            let step = env.step(&actions).map_err(|e| e.to_string())?;
            count += Env::exchanges(&step.events).count() as u64;
            for (i, r) in step.rewards.iter().enumerate() {
                run.returns[i] += r / episodes;
            }
            obs = step.observations;
        }
        run.exchanges.push(count);
    }
    Ok(run)
}

fn scripted_trade() -> Outcome {
    let start = Instant::now();
    let seeds = 0..5;
    let trade = scripted_pair(true, seeds.clone())?;
    let autarky = scripted_pair(false, seeds)?;
    let fewest = *trade.exchanges.iter().min().unwrap();
    check(fewest >= 10, || format!("exchanges per episode {:?}", trade.exchanges))?;
    for (i, role) in ["apple farmer", "banana farmer"].iter().enumerate() {
        check(trade.returns[i] > autarky.returns[i], || {
            format!("{role}: trading {:.1} vs autarky {:.1}", trade.returns[i], autarky.returns[i])
        })?;
    }
    within(start.elapsed(), Duration::from_secs(10), "scripted trade")?;
    Ok(format!(
        "exchanges per episode {:?}; mean return trading {:.1}/{:.1} vs autarky {:.1}/{:.1}",
        trade.exchanges, trade.returns[0], trade.returns[1], autarky.returns[0], autarky.returns[1]
    ))
}

/// Single apple farmer on the tiny map with banana trees switched off.
fn learning_episode() -> EpisodeConfig {
    EpisodeConfig {
        map: MapConfig { template: "tiny".into(), apple_multiplier: 3.0, banana_multiplier: 0.0, ..Default::default() },
        roster: vec![RosterEntry::new(RoleKind::AppleFarmer)],
        episode_length: 1000,
        ..Default::default()
    }
}

fn learning_learner(algorithm: Algorithm) -> LearnerConfig {
    LearnerConfig {
        algorithm,
        learning_rate: 1e-3,
        normalize_advantages: true,
        batch_segments: 4,
        net: NetConfig { conv_channels: 4, dense: 32, lstm: 32, policy_head: vec![32], value_head: vec![32] },
        ..Default::default()
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn learning_sanity() -> Outcome {
    let start = Instant::now();
    let episode = learning_episode();
    let mut random = Vec::new();
    for seed in 0..100 {
        let (_, log, _) = random_episode(episode.clone(), 50_000 + seed)?;
        random.push(EpisodeSummary::from_log(&log).mean_return());
    }
    let (mean, sd) = mean_sd(&random);
    let target = mean + 5.0 * sd;

    let train = TrainConfig {
        apple_farmers: 1,
        banana_farmers: 0,
        target_agent_steps: 200_000,
        workers: 1,
        round_size: 1,
        seed: 1,
        ..Default::default()
    };
    let mut trainer = Trainer::new(train, episode, learning_learner(Algorithm::A2c), None).map_err(|e| e.to_string())?;
    let mut returns = Vec::new();
    while !trainer.finished() {
        let round = trainer.run_round().map_err(|e| e.to_string())?;
        returns.extend(round.summaries.iter().map(EpisodeSummary::mean_return));
    }
    let tail = &returns[returns.len().saturating_sub(100)..];
    let trailing = tail.iter().sum::<f64>() / tail.len() as f64;
    let steps = trainer.agent_steps();
    check(steps <= 200_000.0, || format!("used {steps} steps"))?;
    check(trailing >= target, || {
        format!("a2c trailing-100 mean {trailing:.1} after {steps} steps; random {mean:.1} +- {sd:.1}, needs {target:.1}")
    })?;

    let compared = algorithm_comparison()?;
    Ok(format!(
        "a2c trailing-100 mean {trailing:.1} vs random {mean:.1} +- {sd:.1} (needs {target:.1}) in {steps} steps; {compared}; {:.0}s",
        start.elapsed().as_secs_f64()
    ))
}

/// Both algorithms trained side by side through the sweep harness.
fn algorithm_comparison() -> Result<String, String> {
    let text = format!(
        "{}\n[[sweep]]\nparameter = \"learner.algorithm\"\nvalues = [\"a2c\", \"vmpo-like\"]\n",
        SMALL_RUN.replace("name = \"det\"", "name = \"algorithms\"")
    );
    let cfg = ExperimentConfig::from_toml_str(&text).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = experiment::sweep(&cfg, dir.path(), Existing::Refuse).map_err(|e| e.to_string())?;
    check(out.runs.len() == 2 && out.points.len() == 2, || format!("{} runs", out.runs.len()))?;
    let mut parts = Vec::new();
    for run in &out.runs {
        let rows = experiment::read_summary(&run.join("summary.csv")).map_err(|e| e.to_string())?;
        check(rows.len() == 4, || format!("{}: {} episodes", run.display(), rows.len()))?;
        let learner = fs::read_to_string(run.join("learner.csv")).map_err(|e| e.to_string())?;
        check(learner.lines().count() > 1, || format!("{}: no learner statistics", run.display()))?;
        parts.push(run.file_name().unwrap().to_string_lossy().into_owned());
    }
    Ok(format!("comparison harness ran {}", parts.join(" and ")))
}

fn throughput() -> Outcome {
    let mut best = 0.0f64;
    for trial in 0..3 {
        let (secs, _, players) = run_ticks(Scenario::Tiny, 20_000, trial).map_err(|e| e.to_string())?;
        best = best.max(20_000.0 * players as f64 / secs);
    }
    check(best >= 50_000.0, || format!("{best:.0} player-ticks/s"))?;
    Ok(format!("{best:.0} player-ticks/s on the tiny map (best of 3)"))
}

/// Keeps the encoder and shape helpers honest about each other.
fn feature_shape_sanity() -> Result<(), String> {
    let env = Env::new(learning_episode()).map_err(|e| e.to_string())?;
    let shape = net_shape(env.num_players(), env.action_count());
    let x = encode(&env.observe(0), env.config().constants.max_satiation, env.action_count());
    check(x.len() == shape.input_len(), || format!("encoded {} inputs, shape wants {}", x.len(), shape.input_len()))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("compatibility oracle", compatibility_oracle),
        ("quantity rule", quantity_rule),
        ("domination scene", domination_scene),
        ("matching-engine equivalence", matching_equivalence),
        ("idle-agent return", idle_return),
        ("conservation fuzz", conservation_fuzz),
        ("neutral-region expectation", neutral_region),
        ("price metric", price_metric),
        ("determinism", determinism),
        ("gradient checks", gradient_checks),
        ("scripted-trade smoke test", scripted_trade),
        ("learning sanity", learning_sanity),
        ("throughput", throughput),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if let Err(e) = feature_shape_sanity() {
        println!("FAIL  feature encoding: {e}");
        std::process::exit(1);
    }
    let mut failed = 0;
    let mut ran = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        ran += 1;
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("\n{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
