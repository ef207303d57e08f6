//! Random scenario generation for property tests, oracle comparisons and
//! benchmarks. Every generated scenario passes validation.

use std::collections::BTreeSet;

use rand::Rng;

use crate::hetnet::{BaseStation, BsId, DeliveryBudget, HetNetTopology, ResolutionLadder};
use crate::scene::{tiles_of_viewport, FeatureDistribution, FoVRequest, Scenario, TileGrid, TileRect, UserId};
use crate::significance::UoaProfile;

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    pub tile_px: u32,
    pub features: (usize, usize),
    pub users: (usize, usize),
    pub sbs: (usize, usize),
    /// Largest FoV side, in tiles.
    pub max_fov: usize,
    /// Chance a tile has no semantic features at all.
    pub empty_tile_prob: f64,
    /// Chance a user is left outside every SBS.
    pub mbs_only_prob: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            rows: (3, 6),
            cols: (3, 6),
            tile_px: 16,
            features: (1, 4),
            users: (2, 6),
            sbs: (0, 3),
            max_fov: 3,
            empty_tile_prob: 0.1,
            mbs_only_prob: 0.25,
        }
    }
}

impl SynthParams {
    /// Small grids that keep the free-tile count low enough for exhaustive
    /// cluster enumeration most of the time.
    pub fn small() -> Self {
        Self { rows: (2, 4), cols: (2, 4), users: (2, 4), sbs: (1, 2), max_fov: 2, ..Self::default() }
    }
}

pub fn random_scenario<R: Rng>(rng: &mut R, p: &SynthParams) -> Scenario {
    let rows = rng.gen_range(p.rows.0..=p.rows.1);
    let cols = rng.gen_range(p.cols.0..=p.cols.1);
    let grid = TileGrid::new(cols as u32 * p.tile_px, rows as u32 * p.tile_px, rows, cols).expect("valid grid");

    let k = rng.gen_range(p.features.0..=p.features.1);
    let mut data = Vec::with_capacity(rows * cols * k);
    for _ in 0..rows * cols {
        if rng.gen_bool(p.empty_tile_prob) {
            data.extend(std::iter::repeat_n(0.0, k));
            continue;
        }
        let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
        let fill = rng.gen_range(0.2..1.0);
        let sum: f64 = raw.iter().sum::<f64>().max(1e-9);
        data.extend(raw.iter().map(|v| (v / sum * fill * 1000.0).floor() / 1000.0));
    }
    let features = FeatureDistribution::new(rows, cols, k, data).expect("valid features");

    let n_users = rng.gen_range(p.users.0..=p.users.1);
    let n_sbs = rng.gen_range(p.sbs.0..=p.sbs.1);
    let mut uoa_profiles = Vec::with_capacity(n_users);
    let mut fov_requests = Vec::with_capacity(n_users);
    let mut sbs_covers: Vec<BTreeSet<UserId>> = vec![BTreeSet::new(); n_sbs];
    for i in 0..n_users {
        let user = i as UserId + 1;
        uoa_profiles
            .push(UoaProfile { user, weights: (0..k).map(|_| (rng.gen::<f64>() * 100.0).round() / 100.0).collect() });
        let h = rng.gen_range(1..=p.max_fov.min(rows));
        let w = rng.gen_range(1..=p.max_fov.min(cols));
        let r1 = rng.gen_range(0..=rows - h);
        let c1 = rng.gen_range(0..=cols - w);
        let tiles = tiles_of_viewport(&grid, TileRect { r1, c1, r2: r1 + h - 1, c2: c1 + w - 1 }).expect("in bounds");
        fov_requests.push(FoVRequest { user, tiles });
        if n_sbs > 0 && !rng.gen_bool(p.mbs_only_prob) {
            sbs_covers[rng.gen_range(0..n_sbs)].insert(user);
        }
    }

    let mbs = BaseStation {
        id: BsId::Mbs,
        bandwidth_bps: rng.gen_range(100..=300u64) * 1_000_000,
        covers: (1..=n_users as UserId).collect(),
    };
    let sbs: Vec<BaseStation> = sbs_covers
        .into_iter()
        .enumerate()
        .map(|(i, covers)| BaseStation {
            id: BsId::Sbs(i as u32 + 1),
            bandwidth_bps: rng.gen_range(50..=200u64) * 1_000_000,
            covers,
        })
        .collect();
    let min_bps = sbs.iter().map(|s| s.bandwidth_bps).chain([mbs.bandwidth_bps]).min().expect("MBS present");
    let topology = HetNetTopology::new(mbs, sbs).expect("valid topology");

    let slot_ms = rng.gen_range(10..=20u64);
    let deadline_ms = slot_ms * rng.gen_range(2..=6u64);
    let slot_bits = min_bps / 1000 * slot_ms;
    let base_tile_bits = (slot_bits as f64 * rng.gen_range(0.3..1.0)) as u64;
    let budget = DeliveryBudget::new(deadline_ms * 1000, slot_ms * 1000, base_tile_bits).expect("valid budget");

    Scenario::new(grid, features, uoa_profiles, fov_requests, topology, ResolutionLadder::standard(), budget, 0.0)
        .expect("generated scenario is valid")
}
