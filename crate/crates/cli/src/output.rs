//! On-disk artifacts: CSV tables, JSON reports, PNGs and the run manifest.
//! Nothing written here depends on wall-clock time or absolute paths, so two
//! runs with the same inputs produce identical directories.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use tilecast_core::cluster::{BalanceReport, ClusterPlan, Serving, TileDecision};
use tilecast_core::hetnet::{BsId, Level, ResolutionLadder};
use tilecast_core::image_quality::{significance_heatmap, ImageError};
use tilecast_core::scene::{Scenario, TileGrid, TileId, UserId};
use tilecast_core::schedule::{Schedule, UserProgress};
use tilecast_core::significance::{SignificanceMap, SignificanceMaps};
use tilecast_core::tile_cost;
use tilecast_core::transcode::LevelAssignment;

use crate::pipeline::{file_name, CompareRow, Inputs, Outcome, RunConfig};

const HEATMAP_CELL_PX: u32 = 16;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] ImageError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv { path: path.display().to_string(), source }
}

fn format_err(path: &Path, message: impl Into<String>) -> OutputError {
    OutputError::Format { path: path.display().to_string(), message: message.into() }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), OutputError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, OutputError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err(path))
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightRow {
    tile_row: usize,
    tile_col: usize,
    weight: f64,
}

pub fn write_significance_csv(path: &Path, map: &SignificanceMap) -> Result<(), OutputError> {
    write_rows(path, map.iter().map(|(t, weight)| WeightRow { tile_row: t.row, tile_col: t.col, weight }))
}

/// `significance_global.csv`, one `significance_<BS>.csv` per station, and a
/// heatmap PNG for each.
pub fn write_significance(dir: &Path, sigs: &SignificanceMaps, grid: &TileGrid) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let maps = std::iter::once(("global".to_string(), &sigs.global))
        .chain(sigs.per_bs.iter().map(|(bs, m)| (bs.to_string(), m)));
    for (name, map) in maps {
        write_significance_csv(&dir.join(format!("significance_{name}.csv")), map)?;
        significance_heatmap(map, grid, HEATMAP_CELL_PX).save_png(dir.join(format!("heatmap_{name}.png")))?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanRow {
    tile_row: usize,
    tile_col: usize,
    /// `MBS`, or the serving SBSs joined by `;`.
    serving: String,
    forced: bool,
}

pub fn write_plan(path: &Path, plan: &ClusterPlan) -> Result<(), OutputError> {
    write_rows(
        path,
        plan.decisions().iter().map(|(t, d)| PlanRow {
            tile_row: t.row,
            tile_col: t.col,
            serving: match &d.serving {
                Serving::Mbs => BsId::Mbs.to_string(),
                Serving::Sbs(set) => set.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"),
            },
            forced: d.forced,
        }),
    )
}

pub fn read_plan(path: &Path) -> Result<ClusterPlan, OutputError> {
    let mut decisions = BTreeMap::new();
    for row in read_rows::<PlanRow>(path)? {
        let stations = row
            .serving
            .split(';')
            .map(|s| s.trim().parse::<BsId>().map_err(|e| format_err(path, e.to_string())))
            .collect::<Result<BTreeSet<BsId>, _>>()?;
        let serving = if stations.len() == 1 && stations.contains(&BsId::Mbs) {
            Serving::Mbs
        } else if stations.contains(&BsId::Mbs) || stations.is_empty() {
            return Err(format_err(path, format!("bad serving set {:?}", row.serving)));
        } else {
            Serving::Sbs(stations)
        };
        let tile = TileId::new(row.tile_row, row.tile_col);
        if decisions.insert(tile, TileDecision { serving, forced: row.forced }).is_some() {
            return Err(format_err(path, format!("tile {tile} listed twice")));
        }
    }
    Ok(ClusterPlan::from_decisions(decisions))
}

#[derive(Debug, Serialize, Deserialize)]
struct AssignmentRow {
    bs: BsId,
    tile_row: usize,
    tile_col: usize,
    level: u8,
    scale: f64,
    bits: u64,
}

pub fn write_assignments(
    path: &Path,
    assignments: &BTreeMap<BsId, LevelAssignment>,
    scenario: &Scenario,
) -> Result<(), OutputError> {
    let rows = assignments.iter().flat_map(|(bs, a)| {
        a.iter().map(move |(t, l)| {
            let scale = scenario.ladder.scale(l);
            AssignmentRow {
                bs: *bs,
                tile_row: t.row,
                tile_col: t.col,
                level: l.index(),
                scale,
                bits: tile_cost(scale, &scenario.budget),
            }
        })
    });
    write_rows(path, rows)
}

pub fn read_assignments(
    path: &Path,
    ladder: &ResolutionLadder,
) -> Result<BTreeMap<BsId, LevelAssignment>, OutputError> {
    let mut out: BTreeMap<BsId, LevelAssignment> = BTreeMap::new();
    for row in read_rows::<AssignmentRow>(path)? {
        let level = Level(row.level);
        if !ladder.contains(level) {
            return Err(format_err(path, format!("level {} not on the ladder", row.level)));
        }
        out.entry(row.bs).or_default().insert(TileId::new(row.tile_row, row.tile_col), level);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct BucketRow {
    bucket: usize,
    mean_level: Option<f64>,
}

pub fn write_buckets(path: &Path, buckets: &[Option<f64>]) -> Result<(), OutputError> {
    write_rows(path, buckets.iter().enumerate().map(|(i, m)| BucketRow { bucket: i + 1, mean_level: *m }))
}

#[derive(Debug, Serialize)]
struct ScheduleRow {
    bs: BsId,
    slot: u32,
    tile_row: usize,
    tile_col: usize,
    level: u8,
    bits: u64,
    completion_s: f64,
    late: bool,
}

pub fn write_schedule(path: &Path, schedule: &Schedule) -> Result<(), OutputError> {
    write_rows(
        path,
        schedule.clusters().map(|c| ScheduleRow {
            bs: c.bs,
            slot: c.slot,
            tile_row: c.tile.row,
            tile_col: c.tile.col,
            level: c.level.index(),
            bits: c.bits,
            completion_s: c.completion_s,
            late: c.late,
        }),
    )
}

pub fn write_progress(path: &Path, progress: &BTreeMap<UserId, UserProgress>) -> Result<(), OutputError> {
    write_json(path, &progress.values().collect::<Vec<_>>())
}

#[derive(Debug, Serialize)]
struct TilePsnrRow {
    tile_row: usize,
    tile_col: usize,
    level: Option<u8>,
    weight: f64,
    psnr_db: f64,
}

#[derive(Debug, Serialize)]
struct QualitySummary {
    psnr_db: f64,
    weighted_psnr_db: f64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    scenario: String,
    image: Option<String>,
    seed: u64,
    config_sha256: String,
    settings: &'a crate::pipeline::RunSettings,
    files: Vec<String>,
}

/// SHA-256 over the run settings and the raw bytes of every input file.
pub fn config_hash(config: &RunConfig) -> Result<String, OutputError> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&config.settings)?);
    let inputs = std::iter::once(config.scenario.clone()).chain(config.resolved_image());
    for path in inputs {
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn write_run(dir: &Path, config: &RunConfig, inputs: &Inputs, o: &Outcome) -> Result<(), OutputError> {
    let scenario = &inputs.scenario;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_significance(dir, &o.sigs, &scenario.grid)?;
    write_plan(&dir.join("plan.csv"), &o.plan)?;
    write_json(&dir.join("balance.json"), &[&o.balance, &o.significance_balance] as &[&BalanceReport])?;
    write_assignments(&dir.join("assignment.csv"), &o.assignments, scenario)?;
    write_buckets(&dir.join("buckets.csv"), &o.buckets)?;
    write_schedule(&dir.join("schedule.csv"), &o.schedule)?;
    write_progress(&dir.join("progress.json"), &o.progress)?;
    write_json(&dir.join("qoe.json"), &o.qoe)?;
    if let (Some(q), Some(rendered)) = (&o.quality, &o.rendered) {
        write_rows(
            &dir.join("tile_psnr.csv"),
            q.per_tile_psnr_db.iter().map(|(t, p)| TilePsnrRow {
                tile_row: t.row,
                tile_col: t.col,
                level: o.effective.get(*t).map(Level::index),
                weight: o.sigs.global.weight_or_zero(*t),
                psnr_db: *p,
            }),
        )?;
        write_json(
            &dir.join("quality.json"),
            &QualitySummary { psnr_db: q.psnr_db, weighted_psnr_db: q.weighted_psnr_db },
        )?;
        rendered.save_png(dir.join("mosaic.png"))?;
    }

    let mut files: Vec<String> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    files.sort();
    let manifest = Manifest {
        scenario: file_name(&config.scenario),
        image: config.resolved_image().map(|p| file_name(&p)),
        seed: config.settings.seed,
        config_sha256: config_hash(config)?,
        settings: &config.settings,
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn write_compare(path: &Path, rows: &[CompareRow]) -> Result<(), OutputError> {
    let buckets = rows.iter().map(|r| r.bucket_levels.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header: Vec<String> = [
        "cluster_mode",
        "transcode_mode",
        "weighted_resolution",
        "smoothness_min",
        "smoothness_mean",
        "synchronization_s",
        "significance_cv",
        "psnr_db",
        "weighted_psnr_db",
    ]
    .map(String::from)
    .into();
    header.extend((1..=buckets).map(|i| format!("bucket_{i}_level")));
    w.write_record(&header).map_err(csv_err(path))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let mut rec = vec![
            r.cluster_mode.to_string(),
            r.transcode_mode.to_string(),
            r.weighted_resolution.to_string(),
            r.smoothness_min.to_string(),
            r.smoothness_mean.to_string(),
            r.synchronization_s.to_string(),
            r.significance_cv.to_string(),
            opt(r.psnr_db),
            opt(r.weighted_psnr_db),
        ];
        rec.extend((0..buckets).map(|i| opt(r.bucket_levels.get(i).copied().flatten())));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
