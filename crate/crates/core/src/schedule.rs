//! Slot scheduling of multicast clusters.
//!
//! Each station is scheduled independently. Clusters are ranked by
//! significance, then overlap count, then tile order. Within a slot the
//! scheduler repeatedly admits the fitting cluster whose most-behind
//! requesting user has the lowest delivered fraction so far, falling back to
//! rank order on ties. Clusters finishing after the deadline are kept and
//! marked late.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::cluster::ClusterPlan;
use crate::hetnet::{bs_budget_bits, tile_cost, BsId, DeliveryBudget, Level};
use crate::scene::{Scenario, TileId, UserId};
use crate::significance::SignificanceMaps;
use crate::transcode::LevelAssignment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("{bs} serves tile {tile} but has no level for it")]
    MissingLevel { bs: BsId, tile: TileId },
    #[error("cluster for tile {tile} at {bs} needs {bits} bits but a slot carries {capacity}")]
    ClusterTooLarge { bs: BsId, tile: TileId, bits: u64, capacity: u64 },
}

/// One cluster waiting to be scheduled at a station.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterJob {
    pub tile: TileId,
    pub level: Level,
    pub bits: u64,
    pub weight: f64,
    pub overlap: u32,
    /// Users this station delivers the tile to.
    pub users: Vec<UserId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduledCluster {
    pub bs: BsId,
    pub tile: TileId,
    pub level: Level,
    pub bits: u64,
    /// 1-based slot index.
    pub slot: u32,
    pub completion_s: f64,
    pub late: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BsSchedule {
    pub bs: BsId,
    pub slot_capacity_bits: u64,
    /// `slots[i]` holds the clusters sent in slot `i + 1`.
    pub slots: Vec<Vec<ScheduledCluster>>,
}

impl BsSchedule {
    pub fn slot_loads(&self) -> Vec<u64> {
        self.slots.iter().map(|s| s.iter().map(|c| c.bits).sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub deadline_s: f64,
    pub slot_s: f64,
    pub per_bs: BTreeMap<BsId, BsSchedule>,
}

impl Schedule {
    pub fn clusters(&self) -> impl Iterator<Item = &ScheduledCluster> {
        self.per_bs.values().flat_map(|b| b.slots.iter().flatten())
    }

    pub fn cluster(&self, bs: BsId, tile: TileId) -> Option<&ScheduledCluster> {
        self.per_bs.get(&bs)?.slots.iter().flatten().find(|c| c.tile == tile)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserProgress {
    pub user: UserId,
    /// Completion of the user's last on-time tile; the deadline when none is on time.
    pub completion_s: f64,
    pub on_time_fraction: f64,
    pub on_time_tiles: usize,
    pub requested_tiles: usize,
}

/// Greedy list schedule for one station.
pub fn schedule_station(
    bs: BsId,
    mut jobs: Vec<ClusterJob>,
    slot_capacity_bits: u64,
    budget: &DeliveryBudget,
) -> Result<BsSchedule, ScheduleError> {
    if let Some(j) = jobs.iter().find(|j| j.bits > slot_capacity_bits) {
        return Err(ScheduleError::ClusterTooLarge { bs, tile: j.tile, bits: j.bits, capacity: slot_capacity_bits });
    }
    jobs.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(b.overlap.cmp(&a.overlap)).then(a.tile.cmp(&b.tile)));

    let mut total: BTreeMap<UserId, usize> = BTreeMap::new();
    for j in &jobs {
        for u in &j.users {
            *total.entry(*u).or_default() += 1;
        }
    }
    let mut delivered: BTreeMap<UserId, usize> = total.keys().map(|u| (*u, 0)).collect();
    let progress = |delivered: &BTreeMap<UserId, usize>, j: &ClusterJob| -> f64 {
        j.users.iter().map(|u| delivered[u] as f64 / total[u] as f64).fold(f64::INFINITY, f64::min)
    };

    let mut pending: Vec<Option<ClusterJob>> = jobs.into_iter().map(Some).collect();
    let mut remaining = pending.len();
    let mut slots = Vec::new();
    while remaining > 0 {
        let slot = slots.len() as u32 + 1;
        let completion_us = slot as u64 * budget.slot_us();
        let mut free = slot_capacity_bits;
        let mut sent = Vec::new();
        loop {
            let mut pick: Option<(f64, usize)> = None;
            for (i, j) in pending.iter().enumerate() {
                let Some(j) = j else { continue };
                if j.bits > free {
                    continue;
                }
                let p = progress(&delivered, j);
                if pick.is_none_or(|(best, _)| p < best) {
                    pick = Some((p, i));
                }
            }
            let Some((_, i)) = pick else { break };
            let job = pending[i].take().expect("picked job is pending");
            remaining -= 1;
            free -= job.bits;
            for u in &job.users {
                *delivered.get_mut(u).expect("user counted") += 1;
            }
            sent.push(ScheduledCluster {
                bs,
                tile: job.tile,
                level: job.level,
                bits: job.bits,
                slot,
                completion_s: completion_us as f64 / 1e6,
                late: completion_us > budget.deadline_us(),
            });
        }
        slots.push(sent);
    }
    Ok(BsSchedule { bs, slot_capacity_bits, slots })
}

/// Schedules every station's clusters. `assignments` must hold a level for
/// every tile each station serves.
pub fn schedule(
    plan: &ClusterPlan,
    assignments: &BTreeMap<BsId, LevelAssignment>,
    scenario: &Scenario,
    sigs: &SignificanceMaps,
) -> Result<Schedule, ScheduleError> {
    let topo = &scenario.topology;
    let mut per_bs = BTreeMap::new();
    for bs in topo.bs_ids() {
        let tiles = plan.tiles_for(bs);
        let empty = LevelAssignment::new();
        let levels = assignments.get(&bs).unwrap_or(&empty);
        let covered = topo.covered_users(bs).expect("listed station exists");
        let weights = sigs.for_bs(bs);
        let jobs = tiles
            .into_iter()
            .map(|t| {
                let level = levels.get(t).ok_or(ScheduleError::MissingLevel { bs, tile: t })?;
                let users: Vec<UserId> = scenario.requesters(t).filter(|u| covered.contains(u)).collect();
                Ok(ClusterJob {
                    tile: t,
                    level,
                    bits: tile_cost(scenario.ladder.scale(level), &scenario.budget),
                    weight: weights.map_or(0.0, |m| m.weight_or_zero(t)),
                    overlap: sigs.overlap.get(t).unwrap_or(0),
                    users,
                })
            })
            .collect::<Result<Vec<_>, ScheduleError>>()?;
        let capacity = bs_budget_bits(bs, topo, &scenario.budget).expect("listed station exists").per_slot_bits;
        per_bs.insert(bs, schedule_station(bs, jobs, capacity, &scenario.budget)?);
    }
    Ok(Schedule { deadline_s: scenario.budget.deadline_s(), slot_s: scenario.budget.slot_s(), per_bs })
}

/// Per-user delivery outcome over the user's requested foreground tiles.
/// A user with nothing on time (or nothing requested) completes at the
/// deadline; a user with nothing requested counts as fully on time.
pub fn user_progress(
    schedule: &Schedule,
    plan: &ClusterPlan,
    scenario: &Scenario,
    sigs: &SignificanceMaps,
) -> BTreeMap<UserId, UserProgress> {
    let mut out = BTreeMap::new();
    for req in &scenario.fov_requests {
        let user = req.user;
        let sbs = scenario.topology.serving_sbs(user);
        let wanted: BTreeSet<TileId> = req.tiles.iter().copied().filter(|t| sigs.is_foreground(*t)).collect();
        let mut on_time = 0usize;
        let mut completion: Option<f64> = None;
        for &t in &wanted {
            let delivered = plan.station_for_user(t, sbs).and_then(|bs| schedule.cluster(bs, t));
            if let Some(c) = delivered.filter(|c| !c.late) {
                on_time += 1;
                completion = Some(completion.map_or(c.completion_s, |m: f64| m.max(c.completion_s)));
            }
        }
        let fraction = if wanted.is_empty() { 1.0 } else { on_time as f64 / wanted.len() as f64 };
        out.insert(
            user,
            UserProgress {
                user,
                completion_s: completion.unwrap_or(schedule.deadline_s),
                on_time_fraction: fraction,
                on_time_tiles: on_time,
                requested_tiles: wanted.len(),
            },
        );
    }
    out
}
