//! Egocentric vision: a 15x15 RGB patch with the observer at the center of
//! the bottom row, rotated so that "up" is the direction it faces.

use std::sync::OnceLock;

use serde::Deserialize;

use crate::economy::PlayerState;
use crate::world::{Good, MapState, Position, TileKind};

pub const VIEW_SIZE: usize = 15;
pub const VIEW_AHEAD: i32 = 14;
pub const VIEW_SIDE: i32 = 7;
pub const CHANNELS: usize = 3;
pub const VISION_LEN: usize = VIEW_SIZE * VIEW_SIZE * CHANNELS;

pub type Rgb = [f32; 3];

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Palette {
    pub version: u32,
    pub empty: Rgb,
    pub wall: Rgb,
    pub water: Rgb,
    pub marketplace: Rgb,
    pub ripe_apple_tree: Rgb,
    pub unripe_apple_tree: Rgb,
    pub ripe_banana_tree: Rgb,
    pub unripe_banana_tree: Rgb,
    pub ground_apple: Rgb,
    pub ground_banana: Rgb,
    pub avatars: Vec<Rgb>,
}

impl Palette {
    pub fn standard() -> &'static Palette {
        static PALETTE: OnceLock<Palette> = OnceLock::new();
        PALETTE.get_or_init(|| {
            toml::from_str(include_str!("../../data/palette.toml")).expect("bundled palette is valid")
        })
    }

    pub fn tree(&self, good: Good, ripe: bool) -> Rgb {
        match (good, ripe) {
            (Good::Apple, true) => self.ripe_apple_tree,
            (Good::Apple, false) => self.unripe_apple_tree,
            (Good::Banana, true) => self.ripe_banana_tree,
            (Good::Banana, false) => self.unripe_banana_tree,
        }
    }

    pub fn avatar(&self, slot: usize) -> Rgb {
        self.avatars[slot % self.avatars.len()]
    }
}

/// World position shown at view cell (`row`, `col`).
#[inline]
pub fn view_to_world(observer: &PlayerState, row: usize, col: usize) -> Position {
    let (fx, fy) = observer.orientation.delta();
    let (rx, ry) = observer.orientation.turn_right().delta();
    let ahead = VIEW_AHEAD - row as i32;
    let right = col as i32 - VIEW_SIDE;
    Position::new(observer.position.x + fx * ahead + rx * right, observer.position.y + fy * ahead + ry * right)
}

/// View cell showing world position `p`, if it is in view.
#[inline]
pub fn world_to_view(observer: &PlayerState, p: Position) -> Option<(usize, usize)> {
    let (fx, fy) = observer.orientation.delta();
    let (rx, ry) = observer.orientation.turn_right().delta();
    let (dx, dy) = (p.x - observer.position.x, p.y - observer.position.y);
    let ahead = dx * fx + dy * fy;
    let right = dx * rx + dy * ry;
    if (0..=VIEW_AHEAD).contains(&ahead) && (-VIEW_SIDE..=VIEW_SIDE).contains(&right) {
        Some(((VIEW_AHEAD - ahead) as usize, (right + VIEW_SIDE) as usize))
    } else {
        None
    }
}

#[inline]
fn paint(out: &mut [f32], row: usize, col: usize, c: Rgb) {
    let i = (row * VIEW_SIZE + col) * CHANNELS;
    out[i..i + CHANNELS].copy_from_slice(&c);
}

/// Renders `players[observer]`'s view into `out` (length [`VISION_LEN`],
/// row-major, channels last). Out-of-map cells use the wall color; nothing
/// occludes.
pub fn render_vision(
    world: &MapState,
    players: &[PlayerState],
    observer: usize,
    tick: u32,
    palette: &Palette,
    out: &mut [f32],
) {
    debug_assert_eq!(out.len(), VISION_LEN);
    let me = &players[observer];
    for row in 0..VIEW_SIZE {
        for col in 0..VIEW_SIZE {
            let p = view_to_world(me, row, col);
            let color = match world.tile(p) {
                None => palette.wall,
                Some(t) => match (t.ground_item, t.kind) {
                    (Some(Good::Apple), _) => palette.ground_apple,
                    (Some(Good::Banana), _) => palette.ground_banana,
                    (None, TileKind::Empty) => palette.empty,
                    (None, TileKind::Wall) => palette.wall,
                    (None, TileKind::Water) => palette.water,
                    (None, TileKind::Tree { good, ripe_at }) => palette.tree(good, tick >= ripe_at),
                },
            };
            paint(out, row, col, color);
        }
    }
    for m in &world.marketplaces {
        if let Some((r, c)) = world_to_view(me, m.position) {
            paint(out, r, c, palette.marketplace);
        }
    }
    for (slot, p) in players.iter().enumerate() {
        if let Some((r, c)) = world_to_view(me, p.position) {
            paint(out, r, c, palette.avatar(slot));
        }
    }
}
