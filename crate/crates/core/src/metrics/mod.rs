//! Episode logs, summaries and market statistics.

mod event;
mod log;
mod replay;
mod summary;

pub use event::Event;
pub use log::{
    config_hash, EndState, EpisodeLog, EpisodeRecorder, FinalPlayer, LogError, LogHeader, LogRecord, TickLog,
    SCHEMA_VERSION,
};
pub use replay::{replay, ReplayReport};
pub use summary::{EpisodeSummary, PlayerSummary, RoleSummary, SummaryRow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exchange::ExchangeRecord;

/// Unweighted mean over exchanges of bananas per apple.
pub fn average_price(records: &[ExchangeRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    Some(records.iter().map(ExchangeRecord::price).sum::<f64>() / records.len() as f64)
}

/// Total bananas over total apples.
pub fn volume_weighted_price(records: &[ExchangeRecord]) -> Option<f64> {
    let apples: u64 = records.iter().map(|r| u64::from(r.apples)).sum();
    let bananas: u64 = records.iter().map(|r| u64::from(r.bananas)).sum();
    (apples > 0).then(|| bananas as f64 / apples as f64)
}

/// Sum over players of `max(0, sold - bought)`, from `(bought, sold)` pairs.
pub fn net_traded(players: impl IntoIterator<Item = (u64, u64)>) -> u64 {
    players.into_iter().map(|(bought, sold)| sold.saturating_sub(bought)).sum()
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// The party receiving apples.
    Buyer,
    Seller,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub mean_price: f64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// Row-major; `None` where no exchange happened.
    pub cells: Vec<Option<HeatCell>>,
}

impl Heatmap {
    pub fn get(&self, x: usize, y: usize) -> Option<HeatCell> {
        self.cells[y * self.width + x]
    }

    pub fn total_count(&self) -> u64 {
        self.cells.iter().flatten().map(|c| c.count).sum()
    }

    /// CSV with columns `x,y,mean_price,count`, one row per cell with data.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,mean_price,count\n");
        for y in 0..self.height {
            for x in 0..self.width {
                if let Some(c) = self.get(x, y) {
                    out.push_str(&format!("{x},{y},{},{}\n", c.mean_price, c.count));
                }
            }
        }
        out
    }
}

/// Mean price and exchange count per map cell, keyed by the position of
/// the chosen side at the time of the exchange.
pub fn price_heatmap<'a>(
    records: impl IntoIterator<Item = &'a ExchangeRecord>,
    width: usize,
    height: usize,
    side: Side,
) -> Heatmap {
    let mut sums = vec![(0.0, 0u64); width * height];
    for r in records {
        let p = match side {
            Side::Buyer => r.apple_buyer.position,
            Side::Seller => r.apple_seller.position,
        };
        if p.x < 0 || p.y < 0 || p.x as usize >= width || p.y as usize >= height {
            continue;
        }
        let cell = &mut sums[p.y as usize * width + p.x as usize];
        cell.0 += r.price();
        cell.1 += 1;
    }
    let cells =
        sums.into_iter().map(|(s, n)| (n > 0).then(|| HeatCell { mean_price: s / n as f64, count: n })).collect();
    Heatmap { width, height, cells }
}

pub const DEFAULT_BINS: usize = 100;

/// `bins + 1` equal-width edges from `lo` to `hi`; edge k is
/// `lo + (hi - lo) * k / bins`.
pub fn bin_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect()
}

/// Bin index of `x`: the last bin is closed on the right.
pub fn bin_index(x: f64, edges: &[f64]) -> Option<usize> {
    let bins = edges.len().checked_sub(1)?;
    if bins == 0 || x < edges[0] || x > edges[bins] {
        return None;
    }
    let i = edges.partition_point(|e| *e <= x);
    Some(i.saturating_sub(1).min(bins - 1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean: Option<f64>,
}

/// Averages `(x, y)` points into equal-width bins over the x range.
pub fn bin_series(points: &[(f64, f64)], bins: usize) -> Vec<Bin> {
    if points.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let edges = bin_edges(lo, hi, bins);
    let mut acc = vec![(0.0, 0usize); bins];
    for &(x, y) in points {
        let i = if hi == lo { 0 } else { bin_index(x, &edges).expect("x within range") };
        acc[i].0 += y;
        acc[i].1 += 1;
    }
    acc.into_iter()
        .enumerate()
        .map(|(i, (s, n))| Bin { lo: edges[i], hi: edges[i + 1], count: n, mean: (n > 0).then(|| s / n as f64) })
        .collect()
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("window must be in (0, 1], got {0}")]
    Window(f64),
}

/// Per-episode rows of one run, tagged with the swept value.
#[derive(Clone, Debug)]
pub struct SweepRun {
    pub parameter: String,
    pub value: String,
    pub rows: Vec<SummaryRow>,
}

/// One point of a supply-demand table: means over the trailing window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: String,
    pub value: String,
    pub episodes: usize,
    pub mean_price: Option<f64>,
    pub produced_apples: f64,
    pub produced_bananas: f64,
    pub consumed_apples: f64,
    pub consumed_bananas: f64,
    pub net_traded_apples: f64,
    pub net_traded_bananas: f64,
    pub exchanges: f64,
    pub mean_return: f64,
}

/// Trailing-window means per run. The window is a fraction of each run's
/// final average-agent-steps count.
pub fn sweep_aggregate(runs: &[SweepRun], window: f64) -> Result<Vec<SweepPoint>, SweepError> {
    if !(window > 0.0 && window <= 1.0) {
        return Err(SweepError::Window(window));
    }
    Ok(runs
        .iter()
        .map(|run| {
            let max_steps = run.rows.iter().map(|r| r.agent_steps).fold(0.0, f64::max);
            let threshold = max_steps * (1.0 - window);
            let rows: Vec<&SummaryRow> =
                run.rows.iter().filter(|r| window >= 1.0 || r.agent_steps >= threshold).collect();
            let n = rows.len().max(1) as f64;
            let mean = |f: fn(&SummaryRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            let prices: Vec<f64> = rows.iter().filter_map(|r| r.average_price).collect();
            SweepPoint {
                parameter: run.parameter.clone(),
                value: run.value.clone(),
                episodes: rows.len(),
                mean_price: (!prices.is_empty()).then(|| prices.iter().sum::<f64>() / prices.len() as f64),
                produced_apples: mean(|r| r.produced_apples as f64),
                produced_bananas: mean(|r| r.produced_bananas as f64),
                consumed_apples: mean(|r| r.consumed_apples as f64),
                consumed_bananas: mean(|r| r.consumed_bananas as f64),
                net_traded_apples: mean(|r| r.net_traded_apples as f64),
                net_traded_bananas: mean(|r| r.net_traded_bananas as f64),
                exchanges: mean(|r| r.exchanges as f64),
                mean_return: mean(|r| r.mean_return),
            }
        })
        .collect())
}
