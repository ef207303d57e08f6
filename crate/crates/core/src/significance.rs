//! Tile significance maps.
//!
//! A user's weight for a tile is the dot product of their per-feature
//! attention (UOA) values with the tile's feature distribution. The
//! multi-user map multiplies, tile by tile, the mean requester weight by the
//! number of users requesting the tile, so popular tiles gain weight.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::hetnet::BsId;
use crate::scene::{FeatureDistribution, FoVRequest, Scenario, TileId, UserId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignificanceError {
    #[error("UOA vector of user {user} has length {got}, features have K = {expected}")]
    DimensionMismatch { user: UserId, got: usize, expected: usize },
    #[error("no FoV requests to aggregate")]
    NoRequests,
    #[error("tile {0} has a user weight but no overlap count")]
    MissingOverlap(TileId),
    #[error("unknown base station {0}")]
    UnknownBs(BsId),
    #[error("user {0} has no UOA profile or FoV request")]
    UnknownUser(UserId),
}

/// Per-user attention value for each semantic feature class.
#[derive(Debug, Clone, PartialEq)]
pub struct UoaProfile {
    pub user: UserId,
    pub weights: Vec<f64>,
}

impl UoaProfile {
    pub fn scaled(&self, alpha: f64) -> Self {
        Self { user: self.user, weights: self.weights.iter().map(|w| w * alpha).collect() }
    }
}

/// Non-negative weight per tile. Tiles absent from the map have no weight.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SignificanceMap {
    weights: BTreeMap<TileId, f64>,
}

impl SignificanceMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tile: TileId, weight: f64) {
        debug_assert!(weight >= 0.0, "negative significance {weight} at {tile}");
        self.weights.insert(tile, weight);
    }

    pub fn get(&self, tile: TileId) -> Option<f64> {
        self.weights.get(&tile).copied()
    }

    pub fn weight_or_zero(&self, tile: TileId) -> f64 {
        self.get(tile).unwrap_or(0.0)
    }

    pub fn contains(&self, tile: TileId) -> bool {
        self.weights.contains_key(&tile)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn tiles(&self) -> impl Iterator<Item = TileId> + '_ {
        self.weights.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TileId, f64)> + '_ {
        self.weights.iter().map(|(t, w)| (*t, *w))
    }

    pub fn max(&self) -> f64 {
        self.weights.values().copied().fold(0.0, f64::max)
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { weights: self.weights.iter().map(|(t, w)| (*t, w * alpha)).collect() }
    }
}

impl FromIterator<(TileId, f64)> for SignificanceMap {
    fn from_iter<I: IntoIterator<Item = (TileId, f64)>>(iter: I) -> Self {
        Self { weights: iter.into_iter().collect() }
    }
}

/// Number of users requesting each tile in the union of FoV requests.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OverlapMap {
    counts: BTreeMap<TileId, u32>,
}

impl OverlapMap {
    pub fn get(&self, tile: TileId) -> Option<u32> {
        self.counts.get(&tile).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TileId, u32)> + '_ {
        self.counts.iter().map(|(t, c)| (*t, *c))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TileClassification {
    pub foreground: BTreeSet<TileId>,
    pub background: BTreeSet<TileId>,
}

pub fn per_user_significance(
    uoa: &UoaProfile,
    features: &FeatureDistribution,
    fov: &FoVRequest,
) -> Result<SignificanceMap, SignificanceError> {
    if uoa.weights.len() != features.k() {
        return Err(SignificanceError::DimensionMismatch {
            user: uoa.user,
            got: uoa.weights.len(),
            expected: features.k(),
        });
    }
    Ok(fov
        .tiles
        .iter()
        .map(|&t| {
            let w = uoa.weights.iter().zip(features.tile(t)).map(|(a, f)| a * f).sum::<f64>();
            (t, w)
        })
        .collect())
}

pub fn overlap_degree<'a, I>(requests: I) -> Result<OverlapMap, SignificanceError>
where
    I: IntoIterator<Item = &'a FoVRequest>,
{
    let mut counts = BTreeMap::new();
    let mut any = false;
    for req in requests {
        any = true;
        for &t in &req.tiles {
            *counts.entry(t).or_insert(0u32) += 1;
        }
    }
    if !any {
        return Err(SignificanceError::NoRequests);
    }
    Ok(OverlapMap { counts })
}

/// Mean of the per-user weights over the users whose map holds the tile,
/// multiplied by the tile's overlap count.
pub fn multi_user_significance(
    user_maps: &[SignificanceMap],
    overlap: &OverlapMap,
) -> Result<SignificanceMap, SignificanceError> {
    let mut acc: BTreeMap<TileId, (f64, u32)> = BTreeMap::new();
    for map in user_maps {
        for (t, w) in map.iter() {
            let e = acc.entry(t).or_insert((0.0, 0));
            e.0 += w;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(t, (sum, n))| {
            let count = overlap.get(t).ok_or(SignificanceError::MissingOverlap(t))?;
            Ok((t, sum / n as f64 * count as f64))
        })
        .collect()
}

fn significance_for_users(scenario: &Scenario, users: &BTreeSet<UserId>) -> Result<SignificanceMap, SignificanceError> {
    let requests: Vec<&FoVRequest> = scenario.fov_requests.iter().filter(|r| users.contains(&r.user)).collect();
    if requests.is_empty() {
        return Ok(SignificanceMap::new());
    }
    let maps = requests
        .iter()
        .map(|req| {
            let uoa = scenario.uoa(req.user).ok_or(SignificanceError::UnknownUser(req.user))?;
            per_user_significance(uoa, &scenario.features, req)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let overlap = overlap_degree(requests.iter().copied())?;
    multi_user_significance(&maps, &overlap)
}

/// Multi-user map over the users covered by `bs`, with overlap counts taken
/// among those users only. Empty if `bs` covers no requesting user.
pub fn per_bs_significance(scenario: &Scenario, bs: BsId) -> Result<SignificanceMap, SignificanceError> {
    let users = scenario.topology.covered_users(bs).map_err(|_| SignificanceError::UnknownBs(bs))?;
    significance_for_users(scenario, users)
}

pub fn global_significance(scenario: &Scenario) -> Result<SignificanceMap, SignificanceError> {
    let users: BTreeSet<UserId> = scenario.users().collect();
    significance_for_users(scenario, &users)
}

/// Foreground is strictly above `threshold`; everything else in the map is
/// background.
pub fn classify_tiles(map: &SignificanceMap, threshold: f64) -> TileClassification {
    let mut out = TileClassification::default();
    for (t, w) in map.iter() {
        if w > threshold {
            out.foreground.insert(t);
        } else {
            out.background.insert(t);
        }
    }
    out
}

/// Every map the delivery stages need, computed once per scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceMaps {
    pub global: SignificanceMap,
    pub per_bs: BTreeMap<BsId, SignificanceMap>,
    pub overlap: OverlapMap,
    pub classification: TileClassification,
}

impl SignificanceMaps {
    pub fn compute(scenario: &Scenario) -> Result<Self, SignificanceError> {
        let global = global_significance(scenario)?;
        let per_bs = scenario
            .topology
            .bs_ids()
            .into_iter()
            .map(|bs| Ok((bs, per_bs_significance(scenario, bs)?)))
            .collect::<Result<BTreeMap<_, _>, SignificanceError>>()?;
        let overlap = overlap_degree(&scenario.fov_requests)?;
        let classification = classify_tiles(&global, scenario.foreground_threshold);
        Ok(Self { global, per_bs, overlap, classification })
    }

    pub fn for_bs(&self, bs: BsId) -> Option<&SignificanceMap> {
        self.per_bs.get(&bs)
    }

    pub fn is_foreground(&self, tile: TileId) -> bool {
        self.classification.foreground.contains(&tile)
    }
}
