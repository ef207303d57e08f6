//! Source frame, tile grid, per-tile semantic features, user requests and
//! the JSON scenario file format.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hetnet::{BaseStation, BsId, DeliveryBudget, HetNetError, HetNetTopology, LadderLevel, ResolutionLadder};
use crate::significance::UoaProfile;

pub type UserId = u32;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("invalid scenario: {0}")]
    Network(#[from] HetNetError),
    #[error("viewport rows {r1}..={r2}, cols {c1}..={c2} is outside a {rows}x{cols} grid")]
    ViewportOutOfBounds { r1: usize, c1: usize, r2: usize, c2: usize, rows: usize, cols: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileId {
    pub row: usize,
    pub col: usize,
}

impl TileId {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl std::fmt::Display for TileId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// Rectangular partition of a frame. The last row and column absorb any
/// remainder pixels when the frame size is not a multiple of the grid size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    frame_width: u32,
    frame_height: u32,
    rows: usize,
    cols: usize,
}

impl TileGrid {
    pub fn new(frame_width: u32, frame_height: u32, rows: usize, cols: usize) -> Result<Self, SceneError> {
        if rows == 0 || cols == 0 {
            return Err(SceneError::Invalid("grid must have at least one row and one column".into()));
        }
        if (frame_width as usize) < cols || (frame_height as usize) < rows {
            return Err(SceneError::Invalid(format!(
                "frame {frame_width}x{frame_height} is smaller than the {rows}x{cols} grid"
            )));
        }
        Ok(Self { frame_width, frame_height, rows, cols })
    }

    pub fn frame_width(&self) -> u32 {
        self.frame_width
    }

    pub fn frame_height(&self) -> u32 {
        self.frame_height
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn tile_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn contains(&self, tile: TileId) -> bool {
        tile.row < self.rows && tile.col < self.cols
    }

    /// Row-major iteration over every tile.
    pub fn tiles(&self) -> impl Iterator<Item = TileId> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| TileId::new(r, c)))
    }

    /// Pixel rectangle `(x0, y0, width, height)` covered by `tile`.
    pub fn pixel_rect(&self, tile: TileId) -> (u32, u32, u32, u32) {
        let tw = self.frame_width / self.cols as u32;
        let th = self.frame_height / self.rows as u32;
        let x0 = tw * tile.col as u32;
        let y0 = th * tile.row as u32;
        let w = if tile.col + 1 == self.cols { self.frame_width - x0 } else { tw };
        let h = if tile.row + 1 == self.rows { self.frame_height - y0 } else { th };
        (x0, y0, w, h)
    }

    pub fn tile_of_pixel(&self, x: u32, y: u32) -> Option<TileId> {
        if x >= self.frame_width || y >= self.frame_height {
            return None;
        }
        let tw = self.frame_width / self.cols as u32;
        let th = self.frame_height / self.rows as u32;
        let col = ((x / tw) as usize).min(self.cols - 1);
        let row = ((y / th) as usize).min(self.rows - 1);
        Some(TileId::new(row, col))
    }
}

/// Inclusive tile rectangle `rows r1..=r2`, `cols c1..=c2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRect {
    pub r1: usize,
    pub c1: usize,
    pub r2: usize,
    pub c2: usize,
}

pub fn tiles_of_viewport(grid: &TileGrid, rect: TileRect) -> Result<BTreeSet<TileId>, SceneError> {
    let TileRect { r1, c1, r2, c2 } = rect;
    if r1 > r2 || c1 > c2 || r2 >= grid.rows || c2 >= grid.cols {
        return Err(SceneError::ViewportOutOfBounds { r1, c1, r2, c2, rows: grid.rows, cols: grid.cols });
    }
    Ok((r1..=r2).flat_map(|r| (c1..=c2).map(move |c| TileId::new(r, c))).collect())
}

/// Fraction of each tile's pixels belonging to each of `K` semantic feature
/// classes. Whatever is left over per tile is featureless background.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDistribution {
    rows: usize,
    cols: usize,
    k: usize,
    data: Vec<f64>,
}

impl FeatureDistribution {
    pub fn new(rows: usize, cols: usize, k: usize, data: Vec<f64>) -> Result<Self, SceneError> {
        if k == 0 {
            return Err(SceneError::Invalid("feature distribution needs at least one class".into()));
        }
        if data.len() != rows * cols * k {
            return Err(SceneError::Invalid(format!(
                "feature array has {} entries, expected {rows}x{cols}x{k}",
                data.len()
            )));
        }
        for (i, chunk) in data.chunks(k).enumerate() {
            let tile = TileId::new(i / cols, i % cols);
            if chunk.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(SceneError::Invalid(format!("feature fraction outside [0,1] at tile {tile}")));
            }
            let sum: f64 = chunk.iter().sum();
            if sum > 1.0 + 1e-9 {
                return Err(SceneError::Invalid(format!("feature fractions at tile {tile} sum to {sum} > 1")));
            }
        }
        Ok(Self { rows, cols, k, data })
    }

    /// Same distribution on every tile.
    pub fn uniform(rows: usize, cols: usize, fractions: &[f64]) -> Result<Self, SceneError> {
        let data = (0..rows * cols).flat_map(|_| fractions.iter().copied()).collect();
        Self::new(rows, cols, fractions.len(), data)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Panics if `tile` is outside the grid.
    pub fn tile(&self, tile: TileId) -> &[f64] {
        assert!(tile.row < self.rows && tile.col < self.cols, "tile {tile} outside feature grid");
        let start = (tile.row * self.cols + tile.col) * self.k;
        &self.data[start..start + self.k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoVRequest {
    pub user: UserId,
    pub tiles: BTreeSet<TileId>,
}

impl FoVRequest {
    pub fn contains(&self, tile: TileId) -> bool {
        self.tiles.contains(&tile)
    }

    /// The bounding rectangle, if the tile set is exactly a full rectangle.
    pub fn as_rect(&self) -> Option<TileRect> {
        let first = self.tiles.iter().next()?;
        let (mut r1, mut c1, mut r2, mut c2) = (first.row, first.col, first.row, first.col);
        for t in &self.tiles {
            r1 = r1.min(t.row);
            r2 = r2.max(t.row);
            c1 = c1.min(t.col);
            c2 = c2.max(t.col);
        }
        ((r2 - r1 + 1) * (c2 - c1 + 1) == self.tiles.len()).then_some(TileRect { r1, c1, r2, c2 })
    }
}

/// A fully validated delivery scenario for one frame epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: TileGrid,
    pub features: FeatureDistribution,
    pub uoa_profiles: Vec<UoaProfile>,
    pub fov_requests: Vec<FoVRequest>,
    pub topology: HetNetTopology,
    pub ladder: ResolutionLadder,
    pub budget: DeliveryBudget,
    /// Tiles with global significance at or below this are background.
    pub foreground_threshold: f64,
}

impl Scenario {
    /// Validates cross-field invariants and builds the scenario.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: TileGrid,
        features: FeatureDistribution,
        uoa_profiles: Vec<UoaProfile>,
        fov_requests: Vec<FoVRequest>,
        topology: HetNetTopology,
        ladder: ResolutionLadder,
        budget: DeliveryBudget,
        foreground_threshold: f64,
    ) -> Result<Self, SceneError> {
        if features.rows() != grid.rows() || features.cols() != grid.cols() {
            return Err(SceneError::Invalid(format!(
                "feature array is {}x{} but the grid is {}x{}",
                features.rows(),
                features.cols(),
                grid.rows(),
                grid.cols()
            )));
        }
        let mut users = BTreeSet::new();
        for p in &uoa_profiles {
            if !users.insert(p.user) {
                return Err(SceneError::Invalid(format!("duplicate user id {}", p.user)));
            }
            if p.weights.len() != features.k() {
                return Err(SceneError::Invalid(format!(
                    "UOA vector of user {} has length {}, expected K = {}",
                    p.user,
                    p.weights.len(),
                    features.k()
                )));
            }
            if p.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
                return Err(SceneError::Invalid(format!("UOA value of user {} outside [0,1]", p.user)));
            }
        }
        let mut requesters = BTreeSet::new();
        for req in &fov_requests {
            if !users.contains(&req.user) {
                return Err(SceneError::Invalid(format!("FoV request for unknown user {}", req.user)));
            }
            if !requesters.insert(req.user) {
                return Err(SceneError::Invalid(format!("user {} has more than one FoV request", req.user)));
            }
            if req.tiles.is_empty() {
                return Err(SceneError::Invalid(format!("FoV of user {} is empty", req.user)));
            }
            if let Some(t) = req.tiles.iter().find(|t| !grid.contains(**t)) {
                return Err(SceneError::Invalid(format!(
                    "FoV of user {} references tile {t} outside the {}x{} grid",
                    req.user,
                    grid.rows(),
                    grid.cols()
                )));
            }
            if !topology.mbs().covers.contains(&req.user) {
                return Err(SceneError::Invalid(format!("user {} is not covered by the network", req.user)));
            }
        }
        if !(foreground_threshold >= 0.0 && foreground_threshold.is_finite()) {
            return Err(SceneError::Invalid("foreground threshold must be finite and >= 0".into()));
        }
        let top_cost = crate::hetnet::tile_cost(1.0, &budget);
        for bs in topology.stations() {
            let slot_bits = crate::hetnet::bs_budget_bits(bs.id, &topology, &budget)?.per_slot_bits;
            if top_cost > slot_bits {
                return Err(SceneError::Invalid(format!(
                    "a full-resolution tile ({top_cost} bits) does not fit in one {} slot ({slot_bits} bits)",
                    bs.id
                )));
            }
        }
        Ok(Self { grid, features, uoa_profiles, fov_requests, topology, ladder, budget, foreground_threshold })
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.fov_requests.iter().map(|r| r.user)
    }

    pub fn uoa(&self, user: UserId) -> Option<&UoaProfile> {
        self.uoa_profiles.iter().find(|p| p.user == user)
    }

    pub fn fov(&self, user: UserId) -> Option<&FoVRequest> {
        self.fov_requests.iter().find(|r| r.user == user)
    }

    /// Union of all requested tiles.
    pub fn requested_tiles(&self) -> BTreeSet<TileId> {
        self.fov_requests.iter().flat_map(|r| r.tiles.iter().copied()).collect()
    }

    /// Users whose FoV contains `tile`.
    pub fn requesters(&self, tile: TileId) -> impl Iterator<Item = UserId> + '_ {
        self.fov_requests.iter().filter(move |r| r.contains(tile)).map(|r| r.user)
    }

    pub fn from_json_str(text: &str) -> Result<Self, SceneError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| SceneError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.into_scenario()
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile::from_scenario(self)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serialization is infallible")
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io { path: path.to_path_buf(), source })?;
    Scenario::from_json_str(&text)
}

// ---- on-disk schema ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: GridSpec,
    /// `rows × cols × K`.
    pub features: Vec<Vec<Vec<f64>>>,
    pub users: Vec<UserSpec>,
    pub topology: TopologySpec,
    pub ladder: Vec<LadderLevel>,
    pub delivery: DeliverySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width_px: u32,
    pub height_px: u32,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub id: UserId,
    pub uoa: Vec<f64>,
    pub fov: FovSpec,
}

/// A rectangle `{r1,c1,r2,c2}` or an explicit `{tiles: [[row, col], ...]}` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FovSpec {
    Rect(TileRect),
    Tiles { tiles: Vec<[usize; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub bandwidth_mbps: f64,
    pub covers: Vec<UserId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallStationSpec {
    pub id: u32,
    pub bandwidth_mbps: f64,
    pub covers: Vec<UserId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub mbs: StationSpec,
    #[serde(default)]
    pub sbs: Vec<SmallStationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeliverySpec {
    pub deadline_ms: f64,
    pub slot_ms: f64,
    pub base_tile_bits: u64,
    #[serde(default)]
    pub foreground_threshold: f64,
}

fn mbps_to_bps(mbps: f64, who: &str) -> Result<u64, SceneError> {
    if !(mbps.is_finite() && mbps > 0.0) {
        return Err(SceneError::Invalid(format!("{who} bandwidth must be positive, got {mbps}")));
    }
    Ok((mbps * 1e6).round() as u64)
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario, SceneError> {
        let g = &self.grid;
        let grid = TileGrid::new(g.width_px, g.height_px, g.rows, g.cols)?;

        if self.features.len() != grid.rows() || self.features.iter().any(|r| r.len() != grid.cols()) {
            return Err(SceneError::Invalid(format!("features must be a {}x{}xK array", grid.rows(), grid.cols())));
        }
        let k = self.features.first().and_then(|r| r.first()).map_or(0, Vec::len);
        if self.features.iter().flatten().any(|v| v.len() != k) {
            return Err(SceneError::Invalid("features have inconsistent K across tiles".into()));
        }
        let data = self.features.into_iter().flatten().flatten().collect();
        let features = FeatureDistribution::new(grid.rows(), grid.cols(), k, data)?;

        let mut uoa_profiles = Vec::with_capacity(self.users.len());
        let mut fov_requests = Vec::with_capacity(self.users.len());
        for u in self.users {
            uoa_profiles.push(UoaProfile { user: u.id, weights: u.uoa });
            let tiles = match u.fov {
                FovSpec::Rect(rect) => tiles_of_viewport(&grid, rect).map_err(|_| {
                    SceneError::Invalid(format!(
                        "FoV of user {} (rows {}..={}, cols {}..={}) is outside the {}x{} grid",
                        u.id,
                        rect.r1,
                        rect.r2,
                        rect.c1,
                        rect.c2,
                        grid.rows(),
                        grid.cols()
                    ))
                })?,
                FovSpec::Tiles { tiles } => tiles.into_iter().map(|[r, c]| TileId::new(r, c)).collect(),
            };
            fov_requests.push(FoVRequest { user: u.id, tiles });
        }

        let t = self.topology;
        let mbs = BaseStation {
            id: BsId::Mbs,
            bandwidth_bps: mbps_to_bps(t.mbs.bandwidth_mbps, "MBS")?,
            covers: t.mbs.covers.into_iter().collect(),
        };
        let sbs = t
            .sbs
            .into_iter()
            .map(|s| {
                Ok(BaseStation {
                    id: BsId::Sbs(s.id),
                    bandwidth_bps: mbps_to_bps(s.bandwidth_mbps, &format!("SBS{}", s.id))?,
                    covers: s.covers.into_iter().collect(),
                })
            })
            .collect::<Result<Vec<_>, SceneError>>()?;
        let topology = HetNetTopology::new(mbs, sbs)?;
        let ladder = ResolutionLadder::new(self.ladder)?;
        let d = self.delivery;
        let budget = DeliveryBudget::from_millis(d.deadline_ms, d.slot_ms, d.base_tile_bits)?;

        Scenario::new(grid, features, uoa_profiles, fov_requests, topology, ladder, budget, d.foreground_threshold)
    }

    pub fn from_scenario(s: &Scenario) -> Self {
        let features = (0..s.grid.rows())
            .map(|r| (0..s.grid.cols()).map(|c| s.features.tile(TileId::new(r, c)).to_vec()).collect())
            .collect();
        let users = s
            .fov_requests
            .iter()
            .map(|req| {
                let uoa = s.uoa(req.user).map(|p| p.weights.clone()).unwrap_or_default();
                let fov = match req.as_rect() {
                    Some(rect) => FovSpec::Rect(rect),
                    None => FovSpec::Tiles { tiles: req.tiles.iter().map(|t| [t.row, t.col]).collect() },
                };
                UserSpec { id: req.user, uoa, fov }
            })
            .collect();
        let mbs = s.topology.mbs();
        let topology = TopologySpec {
            mbs: StationSpec {
                bandwidth_mbps: mbs.bandwidth_bps as f64 / 1e6,
                covers: mbs.covers.iter().copied().collect(),
            },
            sbs: s
                .topology
                .sbs()
                .iter()
                .map(|b| SmallStationSpec {
                    id: match b.id {
                        BsId::Sbs(id) => id,
                        BsId::Mbs => unreachable!("SBS list never holds the MBS"),
                    },
                    bandwidth_mbps: b.bandwidth_bps as f64 / 1e6,
                    covers: b.covers.iter().copied().collect(),
                })
                .collect(),
        };
        Self {
            grid: GridSpec {
                width_px: s.grid.frame_width(),
                height_px: s.grid.frame_height(),
                rows: s.grid.rows(),
                cols: s.grid.cols(),
            },
            features,
            users,
            topology,
            ladder: s.ladder.levels().to_vec(),
            delivery: DeliverySpec {
                deadline_ms: s.budget.deadline_us() as f64 / 1000.0,
                slot_ms: s.budget.slot_us() as f64 / 1000.0,
                base_tile_bits: s.budget.base_tile_bits(),
                foreground_threshold: s.foreground_threshold,
            },
        }
    }
}
