//! Three-axis experience metric: significance-weighted resolution, playback
//! smoothness and multi-user synchronization.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::hetnet::ResolutionLadder;
use crate::scene::{TileId, UserId};
use crate::schedule::{Schedule, UserProgress};
use crate::significance::SignificanceMaps;

/// Default quality retained by a tile that misses the deadline.
pub const DEFAULT_LATE_PENALTY: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QoeError {
    #[error("no delivered tiles to score")]
    EmptyTileSet,
    #[error("delivered tiles carry zero total significance")]
    ZeroWeight,
    #[error("late-tile penalty must lie in [0,1], got {0}")]
    InvalidPenalty(f64),
    #[error("no users to compare")]
    NoUsers,
}

/// One tile transmission from one station, weighted by its share of the
/// tile's global significance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TileDelivery {
    pub tile: TileId,
    pub weight: f64,
    pub scale: f64,
    pub late: bool,
}

/// Flattens a schedule into deliveries. An MBS-served tile carries its full
/// global weight. A tile multicast by several SBSs splits its global weight
/// in proportion to each station's own significance for it, so every tile
/// contributes exactly its global weight in total.
pub fn deliveries(schedule: &Schedule, sigs: &SignificanceMaps, ladder: &ResolutionLadder) -> Vec<TileDelivery> {
    let mut by_tile: BTreeMap<TileId, Vec<(f64, f64, bool)>> = BTreeMap::new();
    for c in schedule.clusters() {
        let local = sigs.for_bs(c.bs).map_or(0.0, |m| m.weight_or_zero(c.tile));
        by_tile.entry(c.tile).or_default().push((local, ladder.scale(c.level), c.late));
    }
    let mut out = Vec::new();
    for (tile, parts) in by_tile {
        let global = sigs.global.weight_or_zero(tile);
        let local_total: f64 = parts.iter().map(|p| p.0).sum();
        let n = parts.len() as f64;
        for (local, scale, late) in parts {
            let share = if local_total > 0.0 { local / local_total } else { 1.0 / n };
            out.push(TileDelivery { tile, weight: global * share, scale, late });
        }
    }
    out
}

/// `Σ w·scale·(γ if late else 1) / Σ w`; 1.0 means every tile arrived on time
/// at full resolution.
pub fn weighted_resolution(deliveries: &[TileDelivery], late_penalty: f64) -> Result<f64, QoeError> {
    if !(0.0..=1.0).contains(&late_penalty) {
        return Err(QoeError::InvalidPenalty(late_penalty));
    }
    if deliveries.is_empty() {
        return Err(QoeError::EmptyTileSet);
    }
    let total: f64 = deliveries.iter().map(|d| d.weight).sum();
    if total <= 0.0 {
        return Err(QoeError::ZeroWeight);
    }
    let got: f64 = deliveries.iter().map(|d| d.weight * d.scale * if d.late { late_penalty } else { 1.0 }).sum();
    Ok(got / total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Smoothness {
    pub per_user: BTreeMap<UserId, f64>,
    /// Worst user.
    pub aggregate_min: f64,
    pub mean: f64,
}

pub fn smoothness(progress: &BTreeMap<UserId, UserProgress>) -> Smoothness {
    let per_user: BTreeMap<UserId, f64> = progress.iter().map(|(u, p)| (*u, p.on_time_fraction)).collect();
    let aggregate_min = per_user.values().copied().fold(f64::INFINITY, f64::min);
    let mean = per_user.values().sum::<f64>() / per_user.len().max(1) as f64;
    Smoothness {
        aggregate_min: if per_user.is_empty() { 1.0 } else { aggregate_min },
        mean: if per_user.is_empty() { 1.0 } else { mean },
        per_user,
    }
}

/// Spread between the latest and earliest user completion, in seconds.
pub fn synchronization(progress: &BTreeMap<UserId, UserProgress>) -> Result<f64, QoeError> {
    let mut it = progress.values().map(|p| p.completion_s);
    let first = it.next().ok_or(QoeError::NoUsers)?;
    let (lo, hi) = it.fold((first, first), |(lo, hi), c| (lo.min(c), hi.max(c)));
    Ok(hi - lo)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QoeReport {
    pub weighted_resolution: f64,
    pub smoothness: Smoothness,
    pub synchronization_s: f64,
    /// The metric formulas are this crate's own reconstruction.
    pub formulation: &'static str,
}

impl QoeReport {
    pub fn compute(
        schedule: &Schedule,
        progress: &BTreeMap<UserId, UserProgress>,
        sigs: &SignificanceMaps,
        ladder: &ResolutionLadder,
        late_penalty: f64,
    ) -> Result<Self, QoeError> {
        Ok(Self {
            weighted_resolution: weighted_resolution(&deliveries(schedule, sigs, ladder), late_penalty)?,
            smoothness: smoothness(progress),
            synchronization_s: synchronization(progress)?,
            formulation: "reconstructed",
        })
    }
}
