//! Multicast cluster decision.
//!
//! Every foreground tile is either multicast once by the MBS or separately by
//! each SBS whose covered users request it. Tiles requested by a user that
//! only the MBS reaches are pinned to the MBS. The remaining ("free") tiles
//! are split so that the per-station ratio of load to bandwidth is as even as
//! possible, measured by the coefficient of variation (CV) of those ratios.
//! Load is total significance in semantic mode and tile count in
//! conventional mode.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::hetnet::{bs_budget_bits, tile_cost, BsId};
use crate::scene::{Scenario, TileId};
use crate::significance::SignificanceMaps;
use crate::Mode;

/// Free-tile count up to which the solver enumerates every assignment.
pub const EXACT_LIMIT: usize = 16;

const LOCAL_SEARCH_ROUNDS: usize = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("{bs} cannot carry its forced tiles: {required_bits} bits needed at the lowest level, {available_bits} available")]
    Infeasible { bs: BsId, required_bits: u64, available_bits: u64 },
    #[error("no cluster assignment fits every station's budget at the lowest level")]
    NoFeasiblePlan,
    #[error("tile {0} is not in the plan")]
    UnknownTile(TileId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Serving {
    Mbs,
    Sbs(BTreeSet<BsId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TileDecision {
    pub serving: Serving,
    /// Requested by an MBS-only user, so the MBS must serve it.
    pub forced: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ClusterPlan {
    decisions: BTreeMap<TileId, TileDecision>,
}

impl ClusterPlan {
    pub fn from_decisions(decisions: BTreeMap<TileId, TileDecision>) -> Self {
        Self { decisions }
    }

    pub fn decisions(&self) -> &BTreeMap<TileId, TileDecision> {
        &self.decisions
    }

    pub fn decision(&self, tile: TileId) -> Option<&TileDecision> {
        self.decisions.get(&tile)
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    /// Stations that transmit `tile`.
    pub fn serving_stations(&self, tile: TileId) -> Vec<BsId> {
        match self.decisions.get(&tile).map(|d| &d.serving) {
            Some(Serving::Mbs) => vec![BsId::Mbs],
            Some(Serving::Sbs(set)) => set.iter().copied().collect(),
            None => Vec::new(),
        }
    }

    /// Tiles transmitted by `bs`, in tile order.
    pub fn tiles_for(&self, bs: BsId) -> Vec<TileId> {
        self.decisions
            .iter()
            .filter(|(_, d)| match (&d.serving, bs) {
                (Serving::Mbs, BsId::Mbs) => true,
                (Serving::Sbs(set), b) => set.contains(&b),
                _ => false,
            })
            .map(|(t, _)| *t)
            .collect()
    }

    /// Station delivering `tile` to a user attached to `user_sbs` (or to no SBS).
    pub fn station_for_user(&self, tile: TileId, user_sbs: Option<BsId>) -> Option<BsId> {
        match &self.decisions.get(&tile)?.serving {
            Serving::Mbs => Some(BsId::Mbs),
            Serving::Sbs(set) => user_sbs.filter(|b| set.contains(b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub mode: Mode,
    /// Significance sum (semantic) or tile count (conventional) per station.
    pub loads: BTreeMap<BsId, f64>,
    pub bandwidth_mbps: BTreeMap<BsId, f64>,
    /// `load / bandwidth_mbps` per station.
    pub ratios: BTreeMap<BsId, f64>,
    /// Coefficient of variation of the ratios.
    pub dispersion: f64,
}

/// Tiles requested by at least one user outside every SBS.
pub fn forced_mbs_tiles(scenario: &Scenario) -> BTreeSet<TileId> {
    scenario
        .fov_requests
        .iter()
        .filter(|r| scenario.topology.is_mbs_only(r.user))
        .flat_map(|r| r.tiles.iter().copied())
        .collect()
}

/// Population coefficient of variation; zero when the mean is zero.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Per-tile data the solver works with. Station index 0 is the MBS.
struct Instance {
    stations: Vec<BsId>,
    bandwidth_mbps: Vec<f64>,
    /// Maximum tiles per station at the lowest ladder level.
    capacity: Vec<u64>,
    tiles: Vec<PlannedTile>,
}

struct PlannedTile {
    id: TileId,
    forced: bool,
    mbs_value: f64,
    /// `(station index, value)` for each relevant SBS.
    sbs: Vec<(usize, f64)>,
}

impl Instance {
    fn build(scenario: &Scenario, sigs: &SignificanceMaps, mode: Mode) -> Self {
        let topo = &scenario.topology;
        let forced_set = forced_mbs_tiles(scenario);
        let mut relevant: BTreeMap<TileId, BTreeSet<BsId>> = BTreeMap::new();
        for &t in &sigs.classification.foreground {
            let set = relevant.entry(t).or_default();
            for u in scenario.requesters(t) {
                if let Some(b) = topo.serving_sbs(u) {
                    set.insert(b);
                }
            }
        }

        let mut active: BTreeSet<BsId> = BTreeSet::new();
        active.insert(BsId::Mbs);
        for (t, set) in &relevant {
            if !forced_set.contains(t) {
                active.extend(set.iter().copied());
            }
        }
        let stations: Vec<BsId> = active.into_iter().collect();
        let index_of = |b: BsId| stations.iter().position(|s| *s == b);

        let min_bits = tile_cost(scenario.ladder.scale(scenario.ladder.lowest()), &scenario.budget).max(1);
        let bandwidth_mbps = stations
            .iter()
            .map(|b| topo.station(*b).expect("active station exists").bandwidth_bps as f64 / 1e6)
            .collect();
        let capacity = stations
            .iter()
            .map(|b| bs_budget_bits(*b, topo, &scenario.budget).expect("station exists").total_bits / min_bits)
            .collect();

        let value = |bs: BsId, t: TileId| match mode {
            Mode::Conventional => 1.0,
            Mode::Semantic if bs == BsId::Mbs => sigs.global.weight_or_zero(t),
            Mode::Semantic => sigs.for_bs(bs).map_or(0.0, |m| m.weight_or_zero(t)),
        };

        let tiles = relevant
            .into_iter()
            .map(|(t, set)| {
                let forced = forced_set.contains(&t) || set.is_empty();
                let sbs = if forced {
                    Vec::new()
                } else {
                    set.iter().map(|b| (index_of(*b).expect("relevant SBS is active"), value(*b, t))).collect()
                };
                PlannedTile { id: t, forced, mbs_value: value(BsId::Mbs, t), sbs }
            })
            .collect();
        Self { stations, bandwidth_mbps, capacity, tiles }
    }

    fn free_indices(&self) -> Vec<usize> {
        (0..self.tiles.len()).filter(|&i| !self.tiles[i].forced).collect()
    }

    /// Loads and counts for a decision vector (`true` = MBS), summed in tile order.
    fn loads(&self, to_mbs: &[bool]) -> (Vec<f64>, Vec<u64>) {
        let mut loads = vec![0.0; self.stations.len()];
        let mut counts = vec![0u64; self.stations.len()];
        for (tile, &mbs) in self.tiles.iter().zip(to_mbs) {
            if mbs {
                loads[0] += tile.mbs_value;
                counts[0] += 1;
            } else {
                for &(s, v) in &tile.sbs {
                    loads[s] += v;
                    counts[s] += 1;
                }
            }
        }
        (loads, counts)
    }

    fn feasible(&self, counts: &[u64]) -> bool {
        counts.iter().zip(&self.capacity).all(|(c, cap)| c <= cap)
    }

    fn dispersion(&self, loads: &[f64]) -> f64 {
        let ratios: Vec<f64> = loads.iter().zip(&self.bandwidth_mbps).map(|(l, b)| l / b).collect();
        coefficient_of_variation(&ratios)
    }

    fn evaluate(&self, to_mbs: &[bool]) -> Option<f64> {
        let (loads, counts) = self.loads(to_mbs);
        self.feasible(&counts).then(|| self.dispersion(&loads))
    }

    fn initial_decisions(&self) -> Vec<bool> {
        self.tiles.iter().map(|t| t.forced).collect()
    }

    fn solve_exact(&self, free: &[usize]) -> Option<Vec<bool>> {
        let mut decisions = self.initial_decisions();
        let mut best: Option<(f64, u32)> = None;
        for mask in 0u32..(1u32 << free.len()) {
            for (bit, &i) in free.iter().enumerate() {
                decisions[i] = mask & (1 << bit) != 0;
            }
            if let Some(d) = self.evaluate(&decisions) {
                if best.is_none_or(|(b, _)| d < b) {
                    best = Some((d, mask));
                }
            }
        }
        let (_, mask) = best?;
        for (bit, &i) in free.iter().enumerate() {
            decisions[i] = mask & (1 << bit) != 0;
        }
        Some(decisions)
    }

    fn solve_heuristic(&self, free: &[usize]) -> Option<Vec<bool>> {
        let mut decisions = self.initial_decisions();
        let mut order = free.to_vec();
        // largest load first; stable sort keeps tile order on ties
        order.sort_by(|&a, &b| {
            let la = self.tiles[a].mbs_value;
            let lb = self.tiles[b].mbs_value;
            lb.total_cmp(&la)
        });
        // Tiles not yet placed contribute nothing: mask them out via a
        // separate "placed" flag.
        let mut placed: Vec<bool> = self.tiles.iter().map(|t| t.forced).collect();
        for &i in &order {
            placed[i] = true;
            let mut best: Option<(f64, bool)> = None;
            for option in [true, false] {
                decisions[i] = option;
                let (loads, counts) = self.partial_loads(&decisions, &placed);
                if self.feasible(&counts) {
                    let d = self.dispersion(&loads);
                    if best.is_none_or(|(b, _)| d < b) {
                        best = Some((d, option));
                    }
                }
            }
            decisions[i] = best?.1;
        }

        let mut current = self.evaluate(&decisions)?;
        for _ in 0..LOCAL_SEARCH_ROUNDS {
            let mut improved = false;
            for &i in free {
                decisions[i] = !decisions[i];
                match self.evaluate(&decisions) {
                    Some(d) if d < current => {
                        current = d;
                        improved = true;
                    }
                    _ => decisions[i] = !decisions[i],
                }
            }
            for &i in free {
                for &j in free {
                    if !(decisions[i] && !decisions[j]) {
                        continue;
                    }
                    decisions[i] = false;
                    decisions[j] = true;
                    match self.evaluate(&decisions) {
                        Some(d) if d < current => {
                            current = d;
                            improved = true;
                        }
                        _ => {
                            decisions[i] = true;
                            decisions[j] = false;
                        }
                    }
                }
            }
            if !improved {
                break;
            }
        }
        Some(decisions)
    }

    fn partial_loads(&self, decisions: &[bool], placed: &[bool]) -> (Vec<f64>, Vec<u64>) {
        let mut loads = vec![0.0; self.stations.len()];
        let mut counts = vec![0u64; self.stations.len()];
        for ((tile, &mbs), &on) in self.tiles.iter().zip(decisions).zip(placed) {
            if !on {
                continue;
            }
            if mbs {
                loads[0] += tile.mbs_value;
                counts[0] += 1;
            } else {
                for &(s, v) in &tile.sbs {
                    loads[s] += v;
                    counts[s] += 1;
                }
            }
        }
        (loads, counts)
    }

    fn to_plan(&self, decisions: &[bool]) -> ClusterPlan {
        let decisions = self
            .tiles
            .iter()
            .zip(decisions)
            .map(|(t, &mbs)| {
                let serving = if mbs {
                    Serving::Mbs
                } else {
                    Serving::Sbs(t.sbs.iter().map(|(s, _)| self.stations[*s]).collect())
                };
                (t.id, TileDecision { serving, forced: t.forced })
            })
            .collect();
        ClusterPlan { decisions }
    }
}

/// Assigns every foreground tile of `scenario` to the MBS or to its relevant
/// SBSs, minimising the CV of per-station load/bandwidth ratios.
///
/// Up to [`EXACT_LIMIT`] free tiles are solved by enumeration (ties go to the
/// first assignment in mask order, bit `i` set meaning the `i`-th free tile in
/// tile order is MBS-served). Larger instances use a greedy pass followed by
/// single-flip and pairwise-swap local search. No station may receive more
/// tiles than its deadline budget carries at the lowest ladder level.
pub fn decide_clusters(scenario: &Scenario, mode: Mode, sigs: &SignificanceMaps) -> Result<ClusterPlan, ClusterError> {
    let inst = Instance::build(scenario, sigs, mode);
    let min_bits = tile_cost(scenario.ladder.scale(scenario.ladder.lowest()), &scenario.budget);
    let forced = inst.tiles.iter().filter(|t| t.forced).count() as u64;
    if forced > inst.capacity[0] {
        return Err(ClusterError::Infeasible {
            bs: BsId::Mbs,
            required_bits: forced * min_bits,
            available_bits: bs_budget_bits(BsId::Mbs, &scenario.topology, &scenario.budget)
                .expect("MBS exists")
                .total_bits,
        });
    }
    let free = inst.free_indices();
    let decisions = if free.len() <= EXACT_LIMIT { inst.solve_exact(&free) } else { inst.solve_heuristic(&free) }
        .ok_or(ClusterError::NoFeasiblePlan)?;
    Ok(inst.to_plan(&decisions))
}

/// Loads, ratios and CV of `plan` measured under `mode`. Stations counted are
/// the MBS plus every SBS relevant to at least one free tile.
pub fn balance_report(
    plan: &ClusterPlan,
    scenario: &Scenario,
    sigs: &SignificanceMaps,
    mode: Mode,
) -> Result<BalanceReport, ClusterError> {
    let inst = Instance::build(scenario, sigs, mode);
    let mut decisions = Vec::with_capacity(inst.tiles.len());
    for t in &inst.tiles {
        let d = plan.decision(t.id).ok_or(ClusterError::UnknownTile(t.id))?;
        decisions.push(matches!(d.serving, Serving::Mbs));
    }
    let (loads, _) = inst.loads(&decisions);
    let dispersion = inst.dispersion(&loads);
    let mut report = BalanceReport {
        mode,
        loads: BTreeMap::new(),
        bandwidth_mbps: BTreeMap::new(),
        ratios: BTreeMap::new(),
        dispersion,
    };
    for (i, bs) in inst.stations.iter().enumerate() {
        report.loads.insert(*bs, loads[i]);
        report.bandwidth_mbps.insert(*bs, inst.bandwidth_mbps[i]);
        report.ratios.insert(*bs, loads[i] / inst.bandwidth_mbps[i]);
    }
    Ok(report)
}
