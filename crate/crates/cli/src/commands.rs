//! Command-line surface. Each stage can run on its own, reading earlier
//! stages' outputs from disk or recomputing them when not given.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use tilecast_core::cluster::{balance_report, decide_clusters, ClusterPlan};
use tilecast_core::hetnet::BsId;
use tilecast_core::qoe::{QoeReport, DEFAULT_LATE_PENALTY};
use tilecast_core::scene::{load_scenario, Scenario};
use tilecast_core::schedule::{schedule, user_progress};
use tilecast_core::significance::SignificanceMaps;
use tilecast_core::transcode::{avg_level_by_significance, GaParams, ObjectiveUnit};
use tilecast_core::Mode;

use crate::output;
use crate::pipeline::{self, effective_levels, transcode_plan, PipelineError, RunConfig, RunSettings, Stage, StageExt};

#[derive(Debug, Parser)]
#[command(name = "tilecast", version, about = "Semantic-aware multicast of tiled 360° video over a HetNet")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Significance maps.
    Significance {
        #[command(subcommand)]
        action: SignificanceAction,
    },
    /// Decide which station multicasts each tile.
    Cluster(ClusterArgs),
    /// Choose a resolution level per tile and station.
    Transcode(TranscodeArgs),
    /// Slot-level delivery schedule and per-user progress.
    Schedule(ScheduleArgs),
    /// Weighted resolution, smoothness and synchronization.
    Qoe(QoeArgs),
    /// Full pipeline with every artifact.
    Run(RunArgs),
    /// Full pipeline for all four mode pairs plus a summary table.
    Compare(RunArgs),
}

#[derive(Debug, Subcommand)]
pub enum SignificanceAction {
    /// Write global and per-station maps as CSV, with heatmaps.
    Dump(ScenarioOut),
}

#[derive(Debug, Args)]
pub struct ScenarioOut {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub io: ScenarioOut,
    #[arg(long, default_value_t = Mode::Semantic)]
    pub mode: Mode,
}

#[derive(Debug, Args, Clone)]
pub struct GaArgs {
    #[arg(long, default_value_t = 64)]
    pub population: usize,
    #[arg(long, default_value_t = 200)]
    pub generations: usize,
    #[arg(long, default_value_t = 0.9)]
    pub crossover: f64,
    #[arg(long, default_value_t = 0.05)]
    pub mutation: f64,
    #[arg(long, default_value_t = 2)]
    pub elitism: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exhaustive search instead of the GA (small instances only).
    #[arg(long)]
    pub exact: bool,
    /// Use the level's scale fraction instead of its index as objective value.
    #[arg(long)]
    pub scale_objective: bool,
}

impl GaArgs {
    fn params(&self) -> GaParams {
        GaParams {
            population_size: self.population,
            generations: self.generations,
            crossover_rate: self.crossover,
            mutation_rate: self.mutation,
            elitism_count: self.elitism,
            rng_seed: self.seed,
        }
    }

    fn unit(&self) -> ObjectiveUnit {
        if self.scale_objective {
            ObjectiveUnit::Scale
        } else {
            ObjectiveUnit::LevelIndex
        }
    }
}

#[derive(Debug, Args)]
pub struct TranscodeArgs {
    #[command(flatten)]
    pub io: ScenarioOut,
    #[arg(long, default_value_t = Mode::Semantic)]
    pub mode: Mode,
    /// Cluster plan CSV; computed with `--cluster-mode` when absent.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, default_value_t = Mode::Semantic)]
    pub cluster_mode: Mode,
    /// Restrict to one station (`MBS`, `SBS1`, ...).
    #[arg(long)]
    pub bs: Option<BsId>,
    #[arg(long, default_value_t = 4)]
    pub buckets: usize,
    #[command(flatten)]
    pub ga: GaArgs,
}

#[derive(Debug, Args)]
pub struct UpstreamArgs {
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Level assignment CSV; computed when absent.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    #[arg(long, default_value_t = Mode::Semantic)]
    pub cluster_mode: Mode,
    #[arg(long, default_value_t = Mode::Semantic)]
    pub transcode_mode: Mode,
    #[command(flatten)]
    pub ga: GaArgs,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[command(flatten)]
    pub io: ScenarioOut,
    #[command(flatten)]
    pub upstream: UpstreamArgs,
}

#[derive(Debug, Args)]
pub struct QoeArgs {
    #[command(flatten)]
    pub io: ScenarioOut,
    #[command(flatten)]
    pub upstream: UpstreamArgs,
    /// Quality kept by a late tile, in [0,1].
    #[arg(long, default_value_t = DEFAULT_LATE_PENALTY)]
    pub gamma: f64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub io: ScenarioOut,
    /// Source frame; defaults to the PNG next to the scenario.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = Mode::Semantic)]
    pub cluster_mode: Mode,
    #[arg(long, default_value_t = Mode::Semantic)]
    pub transcode_mode: Mode,
    #[arg(long, default_value_t = DEFAULT_LATE_PENALTY)]
    pub gamma: f64,
    #[arg(long, default_value_t = 4)]
    pub buckets: usize,
    #[command(flatten)]
    pub ga: GaArgs,
}

impl RunArgs {
    pub fn config(&self) -> RunConfig {
        RunConfig {
            scenario: self.io.scenario.clone(),
            image: self.image.clone(),
            out_dir: self.io.out.clone(),
            settings: RunSettings {
                cluster_mode: self.cluster_mode,
                transcode_mode: self.transcode_mode,
                ga: self.ga.params(),
                exact: self.ga.exact,
                objective_unit: self.ga.unit(),
                late_penalty: self.gamma,
                buckets: self.buckets,
                seed: self.ga.seed,
            },
        }
    }
}

fn load(path: &Path) -> Result<(Scenario, SignificanceMaps), PipelineError> {
    let scenario = load_scenario(path).stage(Stage::Load)?;
    let sigs = SignificanceMaps::compute(&scenario).stage(Stage::Significance)?;
    Ok((scenario, sigs))
}

fn make_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::new(Stage::Output, format!("{}: {e}", dir.display())))
}

fn plan_for(
    path: Option<&Path>,
    mode: Mode,
    scenario: &Scenario,
    sigs: &SignificanceMaps,
) -> Result<ClusterPlan, PipelineError> {
    match path {
        Some(p) => output::read_plan(p).stage(Stage::Cluster),
        None => decide_clusters(scenario, mode, sigs).stage(Stage::Cluster),
    }
}

fn settings_from(ga: &GaArgs, cluster_mode: Mode, transcode_mode: Mode) -> RunSettings {
    RunSettings {
        cluster_mode,
        transcode_mode,
        ga: ga.params(),
        exact: ga.exact,
        objective_unit: ga.unit(),
        seed: ga.seed,
        ..RunSettings::default()
    }
}

struct Upstream {
    scenario: Scenario,
    sigs: SignificanceMaps,
    plan: ClusterPlan,
    schedule: tilecast_core::schedule::Schedule,
}

fn upstream(scenario_path: &Path, up: &UpstreamArgs) -> Result<Upstream, PipelineError> {
    let (scenario, sigs) = load(scenario_path)?;
    let plan = plan_for(up.plan.as_deref(), up.cluster_mode, &scenario, &sigs)?;
    let assignments = match &up.assignment {
        Some(p) => output::read_assignments(p, &scenario.ladder).stage(Stage::Transcode)?,
        None => {
            transcode_plan(&scenario, &sigs, &plan, &settings_from(&up.ga, up.cluster_mode, up.transcode_mode), None)?
        }
    };
    let schedule = schedule(&plan, &assignments, &scenario, &sigs).stage(Stage::Schedule)?;
    Ok(Upstream { scenario, sigs, plan, schedule })
}

/// Runs one parsed command. Returns a short human-readable summary.
pub fn dispatch(cli: Cli) -> Result<String, PipelineError> {
    match cli.command {
        Command::Significance { action: SignificanceAction::Dump(io) } => {
            let (scenario, sigs) = load(&io.scenario)?;
            output::write_significance(&io.out, &sigs, &scenario.grid).stage(Stage::Output)?;
            Ok(format!(
                "{} foreground tiles, {} background; maps written to {}",
                sigs.classification.foreground.len(),
                sigs.classification.background.len(),
                io.out.display()
            ))
        }
        Command::Cluster(args) => {
            let (scenario, sigs) = load(&args.io.scenario)?;
            let plan = decide_clusters(&scenario, args.mode, &sigs).stage(Stage::Cluster)?;
            let report = balance_report(&plan, &scenario, &sigs, args.mode).stage(Stage::Cluster)?;
            make_dir(&args.io.out)?;
            output::write_plan(&args.io.out.join("plan.csv"), &plan).stage(Stage::Output)?;
            output::write_json(&args.io.out.join("balance.json"), &report).stage(Stage::Output)?;
            Ok(format!("{} tiles clustered, dispersion {:.6}", plan.len(), report.dispersion))
        }
        Command::Transcode(args) => {
            let (scenario, sigs) = load(&args.io.scenario)?;
            let plan = plan_for(args.plan.as_deref(), args.cluster_mode, &scenario, &sigs)?;
            let settings = settings_from(&args.ga, args.cluster_mode, args.mode);
            let assignments = transcode_plan(&scenario, &sigs, &plan, &settings, args.bs)?;
            let effective = effective_levels(&plan, &assignments, &sigs);
            let buckets = avg_level_by_significance(&effective, &sigs.global, args.buckets);
            make_dir(&args.io.out)?;
            output::write_assignments(&args.io.out.join("assignment.csv"), &assignments, &scenario)
                .stage(Stage::Output)?;
            output::write_buckets(&args.io.out.join("buckets.csv"), &buckets).stage(Stage::Output)?;
            let n: usize = assignments.values().map(|a| a.len()).sum();
            Ok(format!("{n} tile levels assigned across {} stations", assignments.len()))
        }
        Command::Schedule(args) => {
            let up = upstream(&args.io.scenario, &args.upstream)?;
            let progress = user_progress(&up.schedule, &up.plan, &up.scenario, &up.sigs);
            make_dir(&args.io.out)?;
            output::write_schedule(&args.io.out.join("schedule.csv"), &up.schedule).stage(Stage::Output)?;
            output::write_progress(&args.io.out.join("progress.json"), &progress).stage(Stage::Output)?;
            let late = up.schedule.clusters().filter(|c| c.late).count();
            Ok(format!("{} clusters scheduled, {late} late", up.schedule.clusters().count()))
        }
        Command::Qoe(args) => {
            let up = upstream(&args.io.scenario, &args.upstream)?;
            let progress = user_progress(&up.schedule, &up.plan, &up.scenario, &up.sigs);
            let report = QoeReport::compute(&up.schedule, &progress, &up.sigs, &up.scenario.ladder, args.gamma)
                .stage(Stage::Qoe)?;
            make_dir(&args.io.out)?;
            output::write_json(&args.io.out.join("qoe.json"), &report).stage(Stage::Output)?;
            Ok(format!(
                "weighted resolution {:.4}, smoothness {:.4}, synchronization {:.4} s",
                report.weighted_resolution, report.smoothness.aggregate_min, report.synchronization_s
            ))
        }
        Command::Run(args) => {
            let config = args.config();
            let o = pipeline::run_pipeline(&config)?;
            let mut msg = format!("weighted resolution {:.4}", o.qoe.weighted_resolution);
            if let Some(q) = &o.quality {
                msg.push_str(&format!(", PSNR {:.3} dB, weighted PSNR {:.3} dB", q.psnr_db, q.weighted_psnr_db));
            }
            Ok(msg)
        }
        Command::Compare(args) => {
            let config = args.config();
            let rows = pipeline::compare(&config)?;
            Ok(format!("{} runs compared; summary in {}", rows.len(), config.out_dir.join("compare.csv").display()))
        }
    }
}
