//! Tile map: templates, procedural tree placement, regions and marketplaces.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exchange::Offer;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("unknown map template `{0}`")]
    UnknownTemplate(String),
    #[error("map multiplier `{name}` must be non-negative, got {value}")]
    NegativeMultiplier { name: String, value: f64 },
    #[error("invalid map template `{name}`: {reason}")]
    Template { name: String, reason: String },
    #[error("template `{template}` has no marketplace location {location}")]
    MarketLocation { template: String, location: usize },
    #[error("invalid marketplace price `{0}` (expected e.g. \"3a:2b\")")]
    MarketPrice(String),
    #[error("reading template {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// The two goods of the economy. The discriminant doubles as the index into
/// every per-good array.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Good {
    Apple = 0,
    Banana = 1,
}

impl Good {
    pub const ALL: [Good; 2] = [Good::Apple, Good::Banana];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn other(self) -> Good {
        match self {
            Good::Apple => Good::Banana,
            Good::Banana => Good::Apple,
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub x: i32,
    pub y: i32,
}

impl Position {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    /// Squared Euclidean distance; exact in integers.
    #[inline]
    pub fn distance_sq(self, other: Position) -> i64 {
        let dx = i64::from(self.x - other.x);
        let dy = i64::from(self.y - other.y);
        dx * dx + dy * dy
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

pub fn euclidean_distance(a: Position, b: Position) -> f64 {
    (a.distance_sq(b) as f64).sqrt()
}

/// `distance(a, b) <= radius`, evaluated without rounding error for integer
/// coordinates.
#[inline]
pub fn within_radius(a: Position, b: Position, radius: f64) -> bool {
    radius >= 0.0 && (a.distance_sq(b) as f64) <= radius * radius
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TileKind {
    Empty,
    Wall,
    Water,
    Tree { good: Good, ripe_at: u32 },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub kind: TileKind,
    pub ground_item: Option<Good>,
}

impl Tile {
    const fn new(kind: TileKind) -> Self {
        Self { kind, ground_item: None }
    }

    #[inline]
    pub fn is_passable(&self) -> bool {
        !matches!(self.kind, TileKind::Wall)
    }

    #[inline]
    pub fn is_ripe(&self, tick: u32) -> bool {
        matches!(self.kind, TileKind::Tree { ripe_at, .. } if tick >= ripe_at)
    }
}

/// Inclusive rectangle of tiles.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl Rect {
    pub fn contains(&self, p: Position) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    fn intersects(&self, o: &Rect) -> bool {
        self.x0 <= o.x1 && o.x0 <= self.x1 && self.y0 <= o.y1 && o.y0 <= self.y1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub bounds: Rect,
    /// Per-good spawn probability after multipliers, penalty, clamping and
    /// renormalization.
    pub spawn_probs: [f64; 2],
    pub penalty: f64,
    /// Number of tiles in the region where trees may grow.
    pub spawnable_tiles: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marketplace {
    pub position: Position,
    pub offers: Vec<Offer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketplaceConfig {
    /// Index of the template's numbered marketplace location.
    #[serde(default)]
    pub location: usize,
    /// Offers from the marketplace's point of view.
    #[serde(default)]
    pub offers: Vec<Offer>,
    /// Shorthand: `"3a:2b"` makes the marketplace both give 3 apples for 2
    /// bananas and give 2 bananas for 3 apples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<String>,
}

impl MarketplaceConfig {
    pub fn resolved_offers(&self) -> Result<Vec<Offer>, WorldError> {
        let mut offers = self.offers.clone();
        if let Some(price) = &self.price {
            let (a, b) = parse_price(price).ok_or_else(|| WorldError::MarketPrice(price.clone()))?;
            offers.push(Offer::new(-a, b));
            offers.push(Offer::new(a, -b));
        }
        Ok(offers)
    }
}

fn parse_price(s: &str) -> Option<(i8, i8)> {
    let (a, b) = s.trim().split_once(':')?;
    let a: i8 = a.trim().strip_suffix('a')?.parse().ok()?;
    let b: i8 = b.trim().strip_suffix('b')?.parse().ok()?;
    ((1..=3).contains(&a) && (1..=3).contains(&b)).then_some((a, b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    /// `uniform`, `tiny`, `walls`, `thick-walls`, `no-walls` or `custom`.
    pub template: String,
    /// Template file, required when `template = "custom"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_file: Option<PathBuf>,
    pub apple_multiplier: f64,
    pub banana_multiplier: f64,
    /// Spawn-probability multiplier per region id, default 1.
    pub region_penalties: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marketplace: Option<MarketplaceConfig>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            template: "uniform".into(),
            template_file: None,
            apple_multiplier: 1.0,
            banana_multiplier: 1.0,
            region_penalties: BTreeMap::new(),
            marketplace: None,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Cell {
    Wall,
    Water,
    Spawnable,
    Barren,
    Spawn,
    Market(u8),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    name: String,
    #[serde(default)]
    approximate: bool,
    grid: String,
    #[serde(default)]
    regions: Vec<TemplateRegion>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateRegion {
    id: String,
    rect: [i32; 4],
    spawn: [f64; 2],
}

/// A parsed map template: static layout plus per-region base spawn rates.
#[derive(Clone, Debug)]
pub struct MapTemplate {
    pub name: String,
    pub approximate: bool,
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
    regions: Vec<(String, Rect, [f64; 2])>,
    /// Region index of each cell, if any.
    cell_region: Vec<Option<u8>>,
}

const BUILTIN: &[(&str, &str)] = &[
    ("uniform", include_str!("../data/maps/uniform.toml")),
    ("tiny", include_str!("../data/maps/tiny.toml")),
    ("walls", include_str!("../data/maps/walls.toml")),
    ("thick-walls", include_str!("../data/maps/thick-walls.toml")),
    ("no-walls", include_str!("../data/maps/no-walls.toml")),
];

impl MapTemplate {
    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Result<Self, WorldError> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| WorldError::UnknownTemplate(name.to_string()))?;
        Self::parse(text)
    }

    pub fn from_file(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path).map_err(|source| WorldError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Resolves the template named by a map config.
    pub fn for_config(cfg: &MapConfig) -> Result<Self, WorldError> {
        if cfg.template == "custom" {
            let path = cfg.template_file.as_deref().ok_or_else(|| WorldError::Template {
                name: "custom".into(),
                reason: "`template_file` is required for custom templates".into(),
            })?;
            Self::from_file(path)
        } else {
            Self::builtin(&cfg.template)
        }
    }

    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let file: TemplateFile = toml::from_str(text).map_err(|e| WorldError::Template {
            name: "<unparsed>".into(),
            reason: e.to_string(),
        })?;
        let bad = |reason: String| WorldError::Template { name: file.name.clone(), reason };
        let rows: Vec<&str> = file.grid.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.is_empty() {
            return Err(bad("empty grid".into()));
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut cells = Vec::with_capacity(width * height);
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(bad(format!("row {y} has a different width")));
            }
            for ch in row.chars() {
                cells.push(match ch {
                    '#' => Cell::Wall,
                    '~' => Cell::Water,
                    '.' => Cell::Spawnable,
                    ',' => Cell::Barren,
                    'P' => Cell::Spawn,
                    d @ '0'..='9' => Cell::Market(d as u8 - b'0'),
                    other => return Err(bad(format!("unknown tile character `{other}`"))),
                });
            }
        }
        let mut regions = Vec::new();
        for r in &file.regions {
            let [x0, y0, x1, y1] = r.rect;
            let rect = Rect { x0, y0, x1, y1 };
            if x0 > x1 || y0 > y1 || x0 < 0 || y0 < 0 || x1 >= width as i32 || y1 >= height as i32 {
                return Err(bad(format!("region `{}` is out of bounds", r.id)));
            }
            if r.spawn.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(bad(format!("region `{}` has a spawn rate outside [0, 1]", r.id)));
            }
            if regions.iter().any(|(_, o, _): &(String, Rect, [f64; 2])| o.intersects(&rect)) {
                return Err(bad(format!("region `{}` overlaps another region", r.id)));
            }
            regions.push((r.id.clone(), rect, r.spawn));
        }
        if regions.len() > u8::MAX as usize {
            return Err(bad("too many regions".into()));
        }
        let mut cell_region = vec![None; width * height];
        for (i, slot) in cell_region.iter_mut().enumerate() {
            let p = Position::new((i % width) as i32, (i / width) as i32);
            *slot = regions.iter().position(|(_, r, _)| r.contains(p)).map(|r| r as u8);
        }
        Ok(Self {
            name: file.name,
            approximate: file.approximate,
            width,
            height,
            cells,
            regions,
            cell_region,
        })
    }

    pub fn region_ids(&self) -> impl Iterator<Item = &str> {
        self.regions.iter().map(|(id, _, _)| id.as_str())
    }

    pub fn spawn_point_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == Cell::Spawn).count()
    }
}

/// Generates a map from its config, loading the named template.
pub fn generate_map<R: Rng + ?Sized>(cfg: &MapConfig, rng: &mut R) -> Result<MapState, WorldError> {
    let template = MapTemplate::for_config(cfg)?;
    generate_from_template(&template, cfg, rng)
}

/// Per-good spawn probabilities for one tile: multiplied, clamped to [0, 1]
/// and proportionally renormalized when they sum past 1.
pub fn spawn_probabilities(base: [f64; 2], multipliers: [f64; 2], penalty: f64) -> [f64; 2] {
    let mut p = [0.0; 2];
    for g in 0..2 {
        p[g] = (base[g] * multipliers[g] * penalty).clamp(0.0, 1.0);
    }
    let sum = p[0] + p[1];
    if sum > 1.0 {
        p[0] /= sum;
        p[1] /= sum;
    }
    p
}

pub fn generate_from_template<R: Rng + ?Sized>(
    template: &MapTemplate,
    cfg: &MapConfig,
    rng: &mut R,
) -> Result<MapState, WorldError> {
    for (name, value) in [("apple_multiplier", cfg.apple_multiplier), ("banana_multiplier", cfg.banana_multiplier)]
        .into_iter()
        .chain(cfg.region_penalties.iter().map(|(k, v)| (k.as_str(), *v)))
    {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(WorldError::NegativeMultiplier { name: name.to_string(), value });
        }
    }
    for id in cfg.region_penalties.keys() {
        if !template.region_ids().any(|r| r == id) {
            return Err(WorldError::Template {
                name: template.name.clone(),
                reason: format!("no region named `{id}` to penalize"),
            });
        }
    }
    let multipliers = [cfg.apple_multiplier, cfg.banana_multiplier];
    let mut regions: Vec<Region> = template
        .regions
        .iter()
        .map(|(id, rect, base)| {
            let penalty = cfg.region_penalties.get(id).copied().unwrap_or(1.0);
            Region {
                id: id.clone(),
                bounds: *rect,
                spawn_probs: spawn_probabilities(*base, multipliers, penalty),
                penalty,
                spawnable_tiles: 0,
            }
        })
        .collect();

    let (w, h) = (template.width, template.height);
    let mut tiles = Vec::with_capacity(w * h);
    let mut spawn_points = Vec::new();
    let mut market_slots = BTreeMap::new();
    for (i, cell) in template.cells.iter().enumerate() {
        let pos = Position::new((i % w) as i32, (i / w) as i32);
        let tile = match cell {
            Cell::Wall => Tile::new(TileKind::Wall),
            Cell::Water => Tile::new(TileKind::Water),
            Cell::Barren => Tile::new(TileKind::Empty),
            Cell::Spawn => {
                spawn_points.push(pos);
                Tile::new(TileKind::Empty)
            }
            Cell::Market(k) => {
                market_slots.insert(*k as usize, pos);
                Tile::new(TileKind::Empty)
            }
            Cell::Spawnable => match template.cell_region[i] {
                Some(r) => {
                    let region = &mut regions[r as usize];
                    region.spawnable_tiles += 1;
                    let [pa, pb] = region.spawn_probs;
                    let u: f64 = rng.gen();
                    let kind = if u < pa {
                        TileKind::Tree { good: Good::Apple, ripe_at: 0 }
                    } else if u < pa + pb {
                        TileKind::Tree { good: Good::Banana, ripe_at: 0 }
                    } else {
                        TileKind::Empty
                    };
                    Tile::new(kind)
                }
                None => Tile::new(TileKind::Empty),
            },
        };
        tiles.push(tile);
    }

    let mut marketplaces = Vec::new();
    if let Some(mc) = &cfg.marketplace {
        let position = *market_slots.get(&mc.location).ok_or_else(|| WorldError::MarketLocation {
            template: template.name.clone(),
            location: mc.location,
        })?;
        marketplaces.push(Marketplace { position, offers: mc.resolved_offers()? });
    }

    let spawn_regions = spawn_points
        .iter()
        .map(|p| template.cell_region[p.y as usize * w + p.x as usize].map(usize::from))
        .collect();
    Ok(MapState {
        width: w,
        height: h,
        tiles,
        regions,
        marketplaces,
        spawn_points,
        spawn_regions,
        market_slots: market_slots.into_iter().collect(),
        cell_region: template.cell_region.clone(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapState {
    pub width: usize,
    pub height: usize,
    tiles: Vec<Tile>,
    pub regions: Vec<Region>,
    pub marketplaces: Vec<Marketplace>,
    pub spawn_points: Vec<Position>,
    /// Region index of each spawn point.
    pub spawn_regions: Vec<Option<usize>>,
    /// All numbered marketplace locations of the template.
    pub market_slots: Vec<(usize, Position)>,
    cell_region: Vec<Option<u8>>,
}

impl MapState {
    #[inline]
    pub fn in_bounds(&self, p: Position) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    #[inline]
    pub fn index(&self, p: Position) -> usize {
        p.y as usize * self.width + p.x as usize
    }

    #[inline]
    pub fn tile(&self, p: Position) -> Option<&Tile> {
        self.in_bounds(p).then(|| &self.tiles[self.index(p)])
    }

    #[inline]
    pub fn tile_mut(&mut self, p: Position) -> Option<&mut Tile> {
        if self.in_bounds(p) {
            let i = self.index(p);
            Some(&mut self.tiles[i])
        } else {
            None
        }
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn region_at(&self, p: Position) -> Option<usize> {
        self.in_bounds(p).then(|| self.cell_region[self.index(p)]).flatten().map(usize::from)
    }

    pub fn region_index(&self, id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.id == id)
    }

    pub fn is_marketplace(&self, p: Position) -> bool {
        self.marketplaces.iter().any(|m| m.position == p)
    }

    /// Trees in region `r`, or on the whole map when `None`.
    pub fn tree_count(&self, region: Option<usize>, good: Option<Good>) -> usize {
        self.tiles
            .iter()
            .enumerate()
            .filter(|(i, t)| {
                let g_ok = match t.kind {
                    TileKind::Tree { good: g, .. } => good.is_none_or(|want| want == g),
                    _ => false,
                };
                g_ok && region.is_none_or(|r| self.cell_region[*i] == Some(r as u8))
            })
            .count()
    }

    pub fn ground_items(&self) -> [u64; 2] {
        let mut n = [0; 2];
        for t in &self.tiles {
            if let Some(g) = t.ground_item {
                n[g.index()] += 1;
            }
        }
        n
    }

    /// Trees whose fruit becomes harvestable again exactly at `tick`.
    /// Ripeness itself is a pure function of `ripe_at` and the tick.
    pub fn regrow_tick(&self, tick: u32) -> usize {
        self.tiles
            .iter()
            .filter(|t| matches!(t.kind, TileKind::Tree { ripe_at, .. } if ripe_at == tick && tick > 0))
            .count()
    }

    /// Marks the tree at `p` harvested at `tick`.
    pub fn harvest_tree(&mut self, p: Position, tick: u32, ripening: u32) {
        if let Some(Tile { kind: TileKind::Tree { ripe_at, .. }, .. }) = self.tile_mut(p) {
            *ripe_at = tick + ripening;
        }
    }

    /// Character matrix: `#` wall, `~` water, `a`/`b` tree, `M` marketplace,
    /// `P` spawn point, `.` empty; items on the ground are `A`/`B`.
    pub fn dump(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                let p = Position::new(x, y);
                let t = &self.tiles[self.index(p)];
                let ch = if self.is_marketplace(p) {
                    'M'
                } else if let Some(g) = t.ground_item {
                    if g == Good::Apple { 'A' } else { 'B' }
                } else {
                    match t.kind {
                        TileKind::Wall => '#',
                        TileKind::Water => '~',
                        TileKind::Tree { good: Good::Apple, .. } => 'a',
                        TileKind::Tree { good: Good::Banana, .. } => 'b',
                        TileKind::Empty if self.spawn_points.contains(&p) => 'P',
                        TileKind::Empty => '.',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    /// Tiles reachable from `start` by single steps through passable tiles.
    pub fn flood_fill(&self, start: Position) -> Vec<bool> {
        let mut seen = vec![false; self.tiles.len()];
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            if !self.tile(p).is_some_and(Tile::is_passable) {
                continue;
            }
            let i = self.index(p);
            if seen[i] {
                continue;
            }
            seen[i] = true;
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                stack.push(Position::new(p.x + dx, p.y + dy));
            }
        }
        seen
    }
}
