//! Heterogeneous network model: one macro base station (MBS) covering every
//! user, small base stations (SBSs) with pairwise disjoint coverage, the
//! resolution ladder, and the bit accounting used by every downstream stage.
//!
//! All bit quantities are integers. Durations are held in microseconds so
//! that `bandwidth × duration` is computed exactly.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::UserId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HetNetError {
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid resolution ladder: {0}")]
    Ladder(String),
    #[error("invalid delivery budget: {0}")]
    Budget(String),
    #[error("unknown base station {0}")]
    UnknownBs(BsId),
}

/// Base station identifier. The MBS orders before every SBS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BsId {
    Mbs,
    Sbs(u32),
}

impl fmt::Display for BsId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BsId::Mbs => f.write_str("MBS"),
            BsId::Sbs(id) => write!(f, "SBS{id}"),
        }
    }
}

impl FromStr for BsId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        if upper == "MBS" {
            return Ok(BsId::Mbs);
        }
        upper
            .strip_prefix("SBS")
            .and_then(|n| n.parse().ok())
            .map(BsId::Sbs)
            .ok_or_else(|| format!("invalid base station id `{s}` (expected MBS or SBS<n>)"))
    }
}

impl Serialize for BsId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BsId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseStation {
    pub id: BsId,
    pub bandwidth_bps: u64,
    pub covers: BTreeSet<UserId>,
}

/// One MBS plus SBSs. Construction enforces that the MBS covers every
/// SBS-covered user and that SBS coverage sets are pairwise disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct HetNetTopology {
    mbs: BaseStation,
    sbs: Vec<BaseStation>,
}

impl HetNetTopology {
    pub fn new(mbs: BaseStation, mut sbs: Vec<BaseStation>) -> Result<Self, HetNetError> {
        if mbs.id != BsId::Mbs {
            return Err(HetNetError::Topology("macro station must carry the MBS id".into()));
        }
        if mbs.bandwidth_bps == 0 {
            return Err(HetNetError::Topology("MBS bandwidth must be positive".into()));
        }
        sbs.sort_by_key(|s| s.id);
        let mut seen_users = BTreeSet::new();
        for (i, s) in sbs.iter().enumerate() {
            if !matches!(s.id, BsId::Sbs(_)) {
                return Err(HetNetError::Topology(format!("small station {} has the MBS id", i)));
            }
            if i > 0 && sbs[i - 1].id == s.id {
                return Err(HetNetError::Topology(format!("duplicate station id {}", s.id)));
            }
            if s.bandwidth_bps == 0 {
                return Err(HetNetError::Topology(format!("{} bandwidth must be positive", s.id)));
            }
            for u in &s.covers {
                if !mbs.covers.contains(u) {
                    return Err(HetNetError::Topology(format!(
                        "user {u} covered by {} is not covered by the MBS",
                        s.id
                    )));
                }
                if !seen_users.insert(*u) {
                    return Err(HetNetError::Topology(format!(
                        "user {u} is covered by more than one SBS (SBS coverage must not overlap)"
                    )));
                }
            }
        }
        Ok(Self { mbs, sbs })
    }

    pub fn mbs(&self) -> &BaseStation {
        &self.mbs
    }

    pub fn sbs(&self) -> &[BaseStation] {
        &self.sbs
    }

    /// MBS first, then SBSs in id order.
    pub fn stations(&self) -> impl Iterator<Item = &BaseStation> {
        std::iter::once(&self.mbs).chain(self.sbs.iter())
    }

    pub fn station(&self, id: BsId) -> Option<&BaseStation> {
        self.stations().find(|s| s.id == id)
    }

    pub fn bs_ids(&self) -> Vec<BsId> {
        self.stations().map(|s| s.id).collect()
    }

    /// The SBS covering `user`, if any.
    pub fn serving_sbs(&self, user: UserId) -> Option<BsId> {
        self.sbs.iter().find(|s| s.covers.contains(&user)).map(|s| s.id)
    }

    pub fn is_mbs_only(&self, user: UserId) -> bool {
        self.mbs.covers.contains(&user) && self.serving_sbs(user).is_none()
    }

    /// Users `bs` delivers to: for an SBS its coverage set, for the MBS everyone.
    pub fn covered_users(&self, bs: BsId) -> Result<&BTreeSet<UserId>, HetNetError> {
        self.station(bs).map(|s| &s.covers).ok_or(HetNetError::UnknownBs(bs))
    }
}

/// 1-based ladder level index; `Level(1)` is the lowest resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Level(pub u8);

impl Level {
    pub fn index(self) -> u8 {
        self.0
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderLevel {
    pub name: String,
    pub scale: f64,
}

/// Resolution levels ordered from lowest to highest; the top level is the
/// original resolution (scale 1.0).
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionLadder {
    levels: Vec<LadderLevel>,
}

impl ResolutionLadder {
    pub fn new(levels: Vec<LadderLevel>) -> Result<Self, HetNetError> {
        if levels.is_empty() {
            return Err(HetNetError::Ladder("ladder has no levels".into()));
        }
        if levels.len() > u8::MAX as usize {
            return Err(HetNetError::Ladder("ladder has too many levels".into()));
        }
        for w in levels.windows(2) {
            if w[0].scale.partial_cmp(&w[1].scale) != Some(std::cmp::Ordering::Less) {
                return Err(HetNetError::Ladder(format!(
                    "scales must be strictly increasing ({} then {})",
                    w[0].scale, w[1].scale
                )));
            }
        }
        if levels[0].scale.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(HetNetError::Ladder("lowest scale must be positive".into()));
        }
        let top = levels[levels.len() - 1].scale;
        if top != 1.0 {
            return Err(HetNetError::Ladder(format!("top level scale must be 1.0, got {top}")));
        }
        Ok(Self { levels })
    }

    /// The five-step ladder: 15%, 25%, 50%, 75% and 100% of the original
    /// resolution, named `l1` .. `l5`.
    pub fn standard() -> Self {
        let levels = [0.15, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &scale)| LadderLevel { name: format!("l{}", i + 1), scale })
            .collect();
        Self { levels }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[LadderLevel] {
        &self.levels
    }

    pub fn lowest(&self) -> Level {
        Level(1)
    }

    pub fn highest(&self) -> Level {
        Level(self.levels.len() as u8)
    }

    pub fn contains(&self, level: Level) -> bool {
        level.0 >= 1 && (level.0 as usize) <= self.levels.len()
    }

    /// Panics if `level` is not on the ladder.
    pub fn scale(&self, level: Level) -> f64 {
        self.levels[level.0 as usize - 1].scale
    }

    pub fn name(&self, level: Level) -> &str {
        &self.levels[level.0 as usize - 1].name
    }
}

/// Timing and size parameters for one delivery epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveryBudget {
    deadline_us: u64,
    slot_us: u64,
    base_tile_bits: u64,
}

impl DeliveryBudget {
    pub fn new(deadline_us: u64, slot_us: u64, base_tile_bits: u64) -> Result<Self, HetNetError> {
        if slot_us == 0 {
            return Err(HetNetError::Budget("slot duration must be positive".into()));
        }
        if deadline_us < slot_us {
            return Err(HetNetError::Budget(format!(
                "deadline ({deadline_us} us) shorter than one slot ({slot_us} us)"
            )));
        }
        if base_tile_bits == 0 {
            return Err(HetNetError::Budget("base tile size must be positive".into()));
        }
        Ok(Self { deadline_us, slot_us, base_tile_bits })
    }

    /// Millisecond-based constructor matching the scenario file units.
    pub fn from_millis(deadline_ms: f64, slot_ms: f64, base_tile_bits: u64) -> Result<Self, HetNetError> {
        if !(deadline_ms.is_finite() && slot_ms.is_finite()) || deadline_ms < 0.0 || slot_ms < 0.0 {
            return Err(HetNetError::Budget("durations must be finite and non-negative".into()));
        }
        Self::new((deadline_ms * 1000.0).round() as u64, (slot_ms * 1000.0).round() as u64, base_tile_bits)
    }

    pub fn deadline_us(&self) -> u64 {
        self.deadline_us
    }

    pub fn slot_us(&self) -> u64 {
        self.slot_us
    }

    pub fn deadline_s(&self) -> f64 {
        self.deadline_us as f64 / 1e6
    }

    pub fn slot_s(&self) -> f64 {
        self.slot_us as f64 / 1e6
    }

    pub fn base_tile_bits(&self) -> u64 {
        self.base_tile_bits
    }

    /// Whole slots that end at or before the deadline.
    pub fn slots_before_deadline(&self) -> u64 {
        self.deadline_us / self.slot_us
    }
}

/// Bits for one tile at `scale`: pixel count grows with the square of the
/// linear scale. Rounded to the nearest bit.
pub fn tile_cost(scale: f64, budget: &DeliveryBudget) -> u64 {
    (budget.base_tile_bits as f64 * scale * scale).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BsBudget {
    /// Bits deliverable before the deadline.
    pub total_bits: u64,
    /// Bits deliverable in one slot.
    pub per_slot_bits: u64,
}

fn bits_in(bandwidth_bps: u64, micros: u64) -> u64 {
    ((bandwidth_bps as u128 * micros as u128) / 1_000_000) as u64
}

pub fn bs_budget_bits(bs: BsId, topology: &HetNetTopology, budget: &DeliveryBudget) -> Result<BsBudget, HetNetError> {
    let station = topology.station(bs).ok_or(HetNetError::UnknownBs(bs))?;
    Ok(BsBudget {
        total_bits: bits_in(station.bandwidth_bps, budget.deadline_us),
        per_slot_bits: bits_in(station.bandwidth_bps, budget.slot_us),
    })
}
