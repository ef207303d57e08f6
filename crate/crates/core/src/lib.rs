//! Significance-aware multicast delivery of tiled 360° / XR frames over a
//! heterogeneous cellular network (one macro base station plus several small
//! cells).
//!
//! The crate is organised as a pipeline of decoupled stages:
//!
//! 1. [`significance`] turns per-user attention profiles and per-tile semantic
//!    feature distributions into tile significance maps (per user, per base
//!    station, and global) and splits tiles into foreground and background.
//! 2. [`cluster`] decides, for every requested tile, whether it is multicast
//!    once by the macro cell or separately by each relevant small cell.
//! 3. [`transcode`] picks a resolution-ladder level per tile and base station
//!    under the station's bit budget (genetic algorithm plus exact oracle).
//! 4. [`schedule`] places each multicast cluster into a transmission slot.
//! 5. [`qoe`] scores the result on weighted resolution, playback smoothness
//!    and synchronization, and [`image_quality`] renders the transcoded
//!    mosaic of a real image and measures PSNR.
//!
//! [`scene`] and [`hetnet`] hold the input model; [`synth`] generates random
//! instances for property tests and benchmarks.

pub mod cluster;
pub mod hetnet;
pub mod image_quality;
pub mod qoe;
pub mod scene;
pub mod schedule;
pub mod significance;
pub mod synth;
pub mod transcode;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cluster::{
    balance_report, decide_clusters, forced_mbs_tiles, BalanceReport, ClusterError, ClusterPlan, Serving, TileDecision,
};
pub use hetnet::{
    bs_budget_bits, tile_cost, BaseStation, BsBudget, BsId, DeliveryBudget, HetNetError, HetNetTopology, LadderLevel,
    Level, ResolutionLadder,
};
pub use image_quality::{apply_levels, psnr, weighted_psnr, ImageError, QualityResult, RasterImage, PSNR_CAP_DB};
pub use qoe::{smoothness, synchronization, weighted_resolution, QoeError, QoeReport, Smoothness};
pub use scene::{
    load_scenario, tiles_of_viewport, FeatureDistribution, FoVRequest, Scenario, SceneError, TileGrid, TileId,
    TileRect, UserId,
};
pub use schedule::{schedule, user_progress, Schedule, ScheduleError, UserProgress};
pub use significance::{
    classify_tiles, multi_user_significance, overlap_degree, per_bs_significance, per_user_significance, OverlapMap,
    SignificanceError, SignificanceMap, SignificanceMaps, TileClassification, UoaProfile,
};
pub use transcode::{
    avg_level_by_significance, objective, optimize_levels_exact, optimize_levels_ga, GaParams, LevelAssignment,
    ObjectiveUnit, TranscodeError, TranscodeProblem,
};

/// Whether a decision stage takes tile significance into account.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Semantic,
    Conventional,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Semantic, Mode::Conventional];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Semantic => "semantic",
            Mode::Conventional => "conventional",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "semantic" => Ok(Mode::Semantic),
            "conventional" => Ok(Mode::Conventional),
            other => Err(format!("unknown mode `{other}` (expected semantic|conventional)")),
        }
    }
}
