//! End-to-end pipeline: significance → cluster → transcode → schedule → QoE
//! → image quality.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use tilecast_core::cluster::{balance_report, decide_clusters, BalanceReport, ClusterPlan};
use tilecast_core::hetnet::{bs_budget_bits, BsId};
use tilecast_core::image_quality::{apply_levels, QualityResult, RasterImage};
use tilecast_core::qoe::{QoeReport, DEFAULT_LATE_PENALTY};
use tilecast_core::scene::{load_scenario, Scenario, UserId};
use tilecast_core::schedule::{schedule, user_progress, Schedule, UserProgress};
use tilecast_core::significance::SignificanceMaps;
use tilecast_core::transcode::{
    avg_level_by_significance, optimize_levels_exact, optimize_levels_ga, GaParams, LevelAssignment, ObjectiveUnit,
    TranscodeProblem,
};
use tilecast_core::Mode;

use crate::output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Significance,
    Cluster,
    Transcode,
    Schedule,
    Qoe,
    Image,
    Output,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Significance => "significance",
            Stage::Cluster => "cluster",
            Stage::Transcode => "transcode",
            Stage::Schedule => "schedule",
            Stage::Qoe => "qoe",
            Stage::Image => "image",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
#[error("[{stage}] {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        Self { stage, source: source.into() }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<Box<dyn std::error::Error + Send + Sync>>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}

/// Everything that shapes a run apart from file locations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSettings {
    pub cluster_mode: Mode,
    pub transcode_mode: Mode,
    pub ga: GaParams,
    /// Use the exhaustive solver instead of the GA.
    pub exact: bool,
    pub objective_unit: ObjectiveUnit,
    /// Quality kept by late tiles in the weighted-resolution metric.
    pub late_penalty: f64,
    pub buckets: usize,
    pub seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            cluster_mode: Mode::Semantic,
            transcode_mode: Mode::Semantic,
            ga: GaParams::default(),
            exact: false,
            objective_unit: ObjectiveUnit::LevelIndex,
            late_penalty: DEFAULT_LATE_PENALTY,
            buckets: 4,
            seed: 0,
        }
    }
}

impl RunSettings {
    /// GA seed for one station, derived from the run seed.
    pub fn station_seed(&self, bs: BsId) -> u64 {
        let ordinal = match bs {
            BsId::Mbs => 0,
            BsId::Sbs(id) => id as u64 + 1,
        };
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(ordinal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: PathBuf,
    /// Source frame; defaults to a PNG next to the scenario with the same stem.
    pub image: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub settings: RunSettings,
}

impl RunConfig {
    pub fn resolved_image(&self) -> Option<PathBuf> {
        self.image.clone().or_else(|| {
            let sibling = self.scenario.with_extension("png");
            sibling.is_file().then_some(sibling)
        })
    }
}

pub struct Inputs {
    pub scenario: Scenario,
    pub image: Option<RasterImage>,
}

impl Inputs {
    pub fn load(config: &RunConfig) -> Result<Self, PipelineError> {
        let scenario = load_scenario(&config.scenario).stage(Stage::Load)?;
        let image = config.resolved_image().map(RasterImage::load_png).transpose().stage(Stage::Load)?;
        Ok(Self { scenario, image })
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub sigs: SignificanceMaps,
    pub plan: ClusterPlan,
    /// Balance measured in the plan's own mode.
    pub balance: BalanceReport,
    /// Balance of the same plan measured on significance.
    pub significance_balance: BalanceReport,
    pub assignments: BTreeMap<BsId, LevelAssignment>,
    /// One level per tile, taken from the station delivering it with the
    /// highest local significance.
    pub effective: LevelAssignment,
    pub buckets: Vec<Option<f64>>,
    pub schedule: Schedule,
    pub progress: BTreeMap<UserId, UserProgress>,
    pub qoe: QoeReport,
    pub quality: Option<QualityResult>,
    pub rendered: Option<RasterImage>,
}

/// Per-station level assignments for `plan`.
pub fn transcode_plan(
    scenario: &Scenario,
    sigs: &SignificanceMaps,
    plan: &ClusterPlan,
    settings: &RunSettings,
    only: Option<BsId>,
) -> Result<BTreeMap<BsId, LevelAssignment>, PipelineError> {
    let mut out = BTreeMap::new();
    for bs in scenario.topology.bs_ids() {
        if only.is_some_and(|b| b != bs) {
            continue;
        }
        let tiles = plan.tiles_for(bs);
        let empty = Default::default();
        let weights = sigs.for_bs(bs).unwrap_or(&empty);
        let budget = bs_budget_bits(bs, &scenario.topology, &scenario.budget).stage(Stage::Transcode)?;
        let problem = TranscodeProblem::from_map(
            &tiles,
            weights,
            &scenario.ladder,
            &scenario.budget,
            budget.total_bits,
            settings.transcode_mode,
            settings.objective_unit,
        )
        .stage(Stage::Transcode)?;
        let assignment = if settings.exact {
            optimize_levels_exact(&problem)
        } else {
            optimize_levels_ga(&problem, &settings.ga.clone().with_seed(settings.station_seed(bs)))
        }
        .map_err(|e| PipelineError::new(Stage::Transcode, format!("{bs}: {e}")))?;
        out.insert(bs, assignment);
    }
    Ok(out)
}

pub fn effective_levels(
    plan: &ClusterPlan,
    assignments: &BTreeMap<BsId, LevelAssignment>,
    sigs: &SignificanceMaps,
) -> LevelAssignment {
    plan.decisions()
        .keys()
        .filter_map(|&t| {
            let mut best: Option<(f64, BsId)> = None;
            for bs in plan.serving_stations(t) {
                let w = sigs.for_bs(bs).map_or(0.0, |m| m.weight_or_zero(t));
                if best.is_none_or(|(bw, _)| w > bw) {
                    best = Some((w, bs));
                }
            }
            let (_, bs) = best?;
            assignments.get(&bs)?.get(t).map(|l| (t, l))
        })
        .collect()
}

pub fn execute(inputs: &Inputs, settings: &RunSettings) -> Result<Outcome, PipelineError> {
    let scenario = &inputs.scenario;
    if !(0.0..=1.0).contains(&settings.late_penalty) {
        return Err(PipelineError::new(Stage::Qoe, format!("late penalty {} outside [0,1]", settings.late_penalty)));
    }
    let sigs = SignificanceMaps::compute(scenario).stage(Stage::Significance)?;
    let plan = decide_clusters(scenario, settings.cluster_mode, &sigs).stage(Stage::Cluster)?;
    let balance = balance_report(&plan, scenario, &sigs, settings.cluster_mode).stage(Stage::Cluster)?;
    let significance_balance = balance_report(&plan, scenario, &sigs, Mode::Semantic).stage(Stage::Cluster)?;

    let assignments = transcode_plan(scenario, &sigs, &plan, settings, None)?;
    let effective = effective_levels(&plan, &assignments, &sigs);
    let buckets = avg_level_by_significance(&effective, &sigs.global, settings.buckets);

    let schedule = schedule(&plan, &assignments, scenario, &sigs).stage(Stage::Schedule)?;
    let progress = user_progress(&schedule, &plan, scenario, &sigs);
    let qoe =
        QoeReport::compute(&schedule, &progress, &sigs, &scenario.ladder, settings.late_penalty).stage(Stage::Qoe)?;

    let (quality, rendered) = match &inputs.image {
        Some(img) => {
            let rendered = apply_levels(img, &scenario.grid, &effective, &scenario.ladder).stage(Stage::Image)?;
            let q = QualityResult::evaluate(img, &rendered, &scenario.grid, &sigs.global).stage(Stage::Image)?;
            (Some(q), Some(rendered))
        }
        None => (None, None),
    };

    Ok(Outcome {
        sigs,
        plan,
        balance,
        significance_balance,
        assignments,
        effective,
        buckets,
        schedule,
        progress,
        qoe,
        quality,
        rendered,
    })
}

/// Loads inputs, runs every stage and writes all artifacts to
/// `config.out_dir`.
pub fn run_pipeline(config: &RunConfig) -> Result<Outcome, PipelineError> {
    let inputs = Inputs::load(config)?;
    let outcome = execute(&inputs, &config.settings)?;
    output::write_run(&config.out_dir, config, &inputs, &outcome).stage(Stage::Output)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub cluster_mode: Mode,
    pub transcode_mode: Mode,
    pub weighted_resolution: f64,
    pub smoothness_min: f64,
    pub smoothness_mean: f64,
    pub synchronization_s: f64,
    pub significance_cv: f64,
    pub psnr_db: Option<f64>,
    pub weighted_psnr_db: Option<f64>,
    pub bucket_levels: Vec<Option<f64>>,
}

impl CompareRow {
    pub fn from_outcome(cluster_mode: Mode, transcode_mode: Mode, o: &Outcome) -> Self {
        Self {
            cluster_mode,
            transcode_mode,
            weighted_resolution: o.qoe.weighted_resolution,
            smoothness_min: o.qoe.smoothness.aggregate_min,
            smoothness_mean: o.qoe.smoothness.mean,
            synchronization_s: o.qoe.synchronization_s,
            significance_cv: o.significance_balance.dispersion,
            psnr_db: o.quality.as_ref().map(|q| q.psnr_db),
            weighted_psnr_db: o.quality.as_ref().map(|q| q.weighted_psnr_db),
            bucket_levels: o.buckets.clone(),
        }
    }

    /// The row without its mode labels.
    pub fn metrics(&self) -> Self {
        Self { cluster_mode: Mode::Semantic, transcode_mode: Mode::Semantic, ..self.clone() }
    }
}

/// Runs all four (cluster mode, transcode mode) pairs on shared inputs.
pub fn compare_inputs(inputs: &Inputs, base: &RunSettings) -> Result<Vec<(CompareRow, Outcome)>, PipelineError> {
    let mut rows = Vec::with_capacity(4);
    for cluster_mode in Mode::ALL {
        for transcode_mode in Mode::ALL {
            let settings = RunSettings { cluster_mode, transcode_mode, ..base.clone() };
            let o = execute(inputs, &settings)?;
            rows.push((CompareRow::from_outcome(cluster_mode, transcode_mode, &o), o));
        }
    }
    Ok(rows)
}

/// Runs the four mode pairs, writes each run under `out_dir/<cluster>_<transcode>/`
/// and the summary to `out_dir/compare.csv`.
pub fn compare(config: &RunConfig) -> Result<Vec<CompareRow>, PipelineError> {
    let inputs = Inputs::load(config)?;
    let results = compare_inputs(&inputs, &config.settings)?;
    for (row, outcome) in &results {
        let sub = config.out_dir.join(format!("{}_{}", row.cluster_mode, row.transcode_mode));
        let sub_config = RunConfig {
            settings: RunSettings {
                cluster_mode: row.cluster_mode,
                transcode_mode: row.transcode_mode,
                ..config.settings.clone()
            },
            ..config.clone()
        };
        output::write_run(&sub, &sub_config, &inputs, outcome).stage(Stage::Output)?;
    }
    let rows: Vec<CompareRow> = results.into_iter().map(|(r, _)| r).collect();
    output::write_compare(&config.out_dir.join("compare.csv"), &rows).stage(Stage::Output)?;
    Ok(rows)
}

pub fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}
