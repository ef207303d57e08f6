//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

// Negated comparisons make NaN count as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tilecast_cli::{compare_inputs, execute, run_pipeline, Inputs, RunConfig, RunSettings};
use tilecast_core::cluster::{balance_report, decide_clusters, Serving};
use tilecast_core::hetnet::{BaseStation, BsId, DeliveryBudget, HetNetTopology, ResolutionLadder};
use tilecast_core::image_quality::{apply_levels, psnr, RasterImage};
use tilecast_core::scene::{FeatureDistribution, FoVRequest, Scenario, TileGrid, TileId, UserId};
use tilecast_core::significance::{SignificanceMaps, UoaProfile};
use tilecast_core::synth::{random_scenario, SynthParams};
use tilecast_core::transcode::{
    objective, optimize_levels_exact, optimize_levels_ga, GaParams, LevelAssignment, ObjectiveUnit, TranscodeProblem,
};
use tilecast_core::Mode;

type Check = fn() -> Verdict;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn case_study() -> PathBuf {
    workspace_root().join("scenarios/case_study.json")
}

fn case_inputs() -> Inputs {
    let config =
        RunConfig { scenario: case_study(), image: None, out_dir: PathBuf::new(), settings: RunSettings::default() };
    Inputs::load(&config).expect("case study loads")
}

// Independent helpers, computed straight from the scenario fields.

fn cost(scale: f64, base_bits: u64) -> u64 {
    (base_bits as f64 * scale * scale).round() as u64
}

fn station_bits(bps: u64, us: u64) -> u64 {
    (bps as u128 * us as u128 / 1_000_000) as u64
}

fn oracle_weight(s: &Scenario, t: TileId) -> f64 {
    let feats = s.features.tile(t);
    let mut total = 0.0;
    for req in &s.fov_requests {
        if req.tiles.contains(&t) {
            let uoa = &s.uoa(req.user).unwrap().weights;
            total += uoa.iter().zip(feats).map(|(a, f)| a * f).sum::<f64>();
        }
    }
    total
}

fn oracle_foreground(s: &Scenario) -> BTreeSet<TileId> {
    s.requested_tiles().into_iter().filter(|t| oracle_weight(s, *t) > s.foreground_threshold).collect()
}

fn sbs_of(s: &Scenario, u: UserId) -> Option<BsId> {
    s.topology.sbs().iter().find(|b| b.covers.contains(&u)).map(|b| b.id)
}

fn requesters(s: &Scenario, t: TileId) -> Vec<UserId> {
    s.fov_requests.iter().filter(|r| r.tiles.contains(&t)).map(|r| r.user).collect()
}

fn oracle_forced(s: &Scenario) -> BTreeSet<TileId> {
    oracle_foreground(s).into_iter().filter(|t| requesters(s, *t).iter().any(|u| sbs_of(s, *u).is_none())).collect()
}

fn cv(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Minimum dispersion over every MBS/SBS split of the free tiles, or `None`
/// when no split fits the station budgets. Also returns the free-tile count.
fn cluster_oracle(s: &Scenario, sigs: &SignificanceMaps, mode: Mode) -> (Option<f64>, usize) {
    let fg: Vec<TileId> = oracle_foreground(s).into_iter().collect();
    let forced = oracle_forced(s);
    let relevant: Vec<BTreeSet<BsId>> =
        fg.iter().map(|t| requesters(s, *t).into_iter().filter_map(|u| sbs_of(s, u)).collect()).collect();
    let is_forced: Vec<bool> = fg.iter().zip(&relevant).map(|(t, r)| forced.contains(t) || r.is_empty()).collect();
    let mut stations: BTreeSet<BsId> = [BsId::Mbs].into();
    for (r, f) in relevant.iter().zip(&is_forced) {
        if !f {
            stations.extend(r);
        }
    }
    let stations: Vec<BsId> = stations.into_iter().collect();
    let lowest = cost(s.ladder.scale(s.ladder.lowest()), s.budget.base_tile_bits()).max(1);
    let bw = |b: BsId| s.topology.station(b).unwrap().bandwidth_bps;
    let cap: Vec<u64> = stations.iter().map(|b| station_bits(bw(*b), s.budget.deadline_us()) / lowest).collect();
    let value = |b: BsId, t: TileId| match (mode, b) {
        (Mode::Conventional, _) => 1.0,
        (Mode::Semantic, BsId::Mbs) => sigs.global.weight_or_zero(t),
        (Mode::Semantic, b) => sigs.per_bs[&b].weight_or_zero(t),
    };
    let free: Vec<usize> = (0..fg.len()).filter(|i| !is_forced[*i]).collect();
    if free.len() > 16 {
        return (None, free.len());
    }
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << free.len()) {
        let mut to_mbs = is_forced.clone();
        for (bit, &i) in free.iter().enumerate() {
            to_mbs[i] = mask >> bit & 1 == 1;
        }
        let mut loads = vec![0.0; stations.len()];
        let mut counts = vec![0u64; stations.len()];
        for (i, t) in fg.iter().enumerate() {
            let targets: Vec<BsId> = if to_mbs[i] { vec![BsId::Mbs] } else { relevant[i].iter().copied().collect() };
            for b in targets {
                let k = stations.iter().position(|x| *x == b).unwrap();
                loads[k] += value(b, *t);
                counts[k] += 1;
            }
        }
        if counts.iter().zip(&cap).any(|(c, m)| c > m) {
            continue;
        }
        let ratios: Vec<f64> = loads.iter().zip(&stations).map(|(l, b)| l / (bw(*b) as f64 / 1e6)).collect();
        let d = cv(&ratios);
        if best.is_none_or(|b| d < b) {
            best = Some(d);
        }
    }
    (best, free.len())
}

fn criterion_2() -> Verdict {
    let inputs = case_inputs();
    let mut failures = Vec::new();
    let mut slowest = 0.0f64;
    for seed in 0..10u64 {
        let base = RunSettings { seed, ..RunSettings::default() };
        let start = Instant::now();
        let rows = match compare_inputs(&inputs, &base) {
            Ok(r) => r,
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        };
        slowest = slowest.max(start.elapsed().as_secs_f64() / rows.len() as f64);
        for cluster in Mode::ALL {
            let row =
                |t: Mode| &rows.iter().find(|(r, _)| r.cluster_mode == cluster && r.transcode_mode == t).unwrap().0;
            let (sem, conv) = (row(Mode::Semantic), row(Mode::Conventional));
            let (Some(ws), Some(wc)) = (sem.weighted_psnr_db, conv.weighted_psnr_db) else {
                return verdict(false, "case study image missing");
            };
            if !(ws > wc) || !(sem.weighted_resolution > conv.weighted_resolution) {
                failures.push(format!(
                    "seed {seed} cluster={cluster}: wPSNR {ws:.3} vs {wc:.3}, wres {:.4} vs {:.4}",
                    sem.weighted_resolution, conv.weighted_resolution
                ));
            }
        }
    }
    let pass = failures.is_empty() && slowest < 60.0;
    verdict(
        pass,
        format!("10 seeds x 2 cluster modes, {} failures, slowest run {slowest:.3} s {failures:?}", failures.len()),
    )
}

fn criterion_3() -> Verdict {
    let inputs = case_inputs();
    let mut failures = Vec::new();
    for seed in 0..10u64 {
        let rows = compare_inputs(&inputs, &RunSettings { seed, ..RunSettings::default() }).expect("runs");
        let get =
            |c: Mode, t: Mode| &rows.iter().find(|(r, _)| r.cluster_mode == c && r.transcode_mode == t).unwrap().0;
        for cluster in Mode::ALL {
            let top = |t: Mode| get(cluster, t).bucket_levels.last().copied().flatten();
            match (top(Mode::Semantic), top(Mode::Conventional)) {
                (Some(s), Some(c)) if s >= c => {}
                other => failures.push(format!("seed {seed} cluster={cluster}: top bucket {other:?}")),
            }
        }
        let sem_cv = get(Mode::Semantic, Mode::Semantic).significance_cv;
        let conv_cv = get(Mode::Conventional, Mode::Semantic).significance_cv;
        if !(sem_cv < conv_cv) {
            failures.push(format!("seed {seed}: significance CV {sem_cv} vs {conv_cv}"));
        }
    }
    verdict(failures.is_empty(), format!("{} failures {failures:?}", failures.len()))
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = SynthParams { rows: (3, 5), cols: (3, 5), sbs: (1, 3), mbs_only_prob: 0.15, ..SynthParams::default() };
    let (mut checked, mut mismatches, mut tries) = (0, Vec::new(), 0);
    let (mut max_free, mut nontrivial) = (0, 0);
    while checked < 100 && tries < 10_000 {
        tries += 1;
        let s = random_scenario(&mut rng, &params);
        let sigs = SignificanceMaps::compute(&s).unwrap();
        if cluster_oracle(&s, &sigs, Mode::Conventional).1 > 16 {
            continue;
        }
        for mode in Mode::ALL {
            let (want, free) = cluster_oracle(&s, &sigs, mode);
            max_free = max_free.max(free);
            nontrivial += usize::from(free >= 2);
            let got = decide_clusters(&s, mode, &sigs)
                .ok()
                .map(|plan| balance_report(&plan, &s, &sigs, mode).unwrap().dispersion);
            if got != want {
                mismatches.push(format!("instance {checked} mode={mode}: solver {got:?} oracle {want:?}"));
            }
        }
        checked += 1;
    }
    verdict(
        checked == 100 && mismatches.is_empty(),
        format!(
            "{checked} scenarios x 2 modes ({nontrivial} with >= 2 free tiles, max {max_free}), {} mismatches {mismatches:?}",
            mismatches.len()
        ),
    )
}

fn brute_force_best(weights: &[f64], costs: &[u64], budget: u64) -> f64 {
    let (n, l) = (weights.len(), costs.len());
    let mut best = f64::NEG_INFINITY;
    for code in 0..l.pow(n as u32) {
        let (mut c, mut bits, mut score) = (code, 0u64, 0.0);
        for w in weights {
            let k = c % l;
            c /= l;
            bits += costs[k];
            score += w * (k + 1) as f64;
        }
        if bits <= budget && score > best {
            best = score;
        }
    }
    best
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ladder = ResolutionLadder::standard();
    let mut worst_matches = 100;
    let mut worst_ratio = 1.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=5usize);
        let base = rng.gen_range(100_000..3_000_000u64);
        let delivery = DeliveryBudget::new(100_000, 20_000, base).unwrap();
        let costs: Vec<u64> = ladder.levels().iter().map(|l| cost(l.scale, base)).collect();
        let lo = costs[0] * n as u64;
        let hi = costs[4] * n as u64;
        let budget = rng.gen_range(lo..=hi);
        let items: Vec<(TileId, f64)> =
            (0..n).map(|i| (TileId::new(0, i), (rng.gen::<f64>() * 5.0 * 1000.0).round() / 1000.0)).collect();
        let weights: Vec<f64> = items.iter().map(|p| p.1).collect();
        let best = brute_force_best(&weights, &costs, budget);
        let problem =
            TranscodeProblem::new(&items, &ladder, &delivery, budget, Mode::Semantic, ObjectiveUnit::LevelIndex);
        let mut matches = 0;
        for seed in 0..100 {
            let a = optimize_levels_ga(&problem, &GaParams::default().with_seed(seed)).unwrap();
            let score = problem.score_of(&a);
            if a.total_bits(&ladder, &delivery) > budget {
                return verdict(false, "GA returned an over-budget assignment");
            }
            if (score - best).abs() <= 1e-9 * best.max(1.0) {
                matches += 1;
            } else if best > 0.0 {
                worst_ratio = worst_ratio.min(score / best);
            }
        }
        worst_matches = worst_matches.min(matches);
    }
    verdict(
        worst_matches >= 95 && worst_ratio >= 0.98,
        format!("100 instances x 100 seeds, worst instance matched {worst_matches}/100, worst ratio {worst_ratio:.4}"),
    )
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = SynthParams::default();
    let mut violations: Vec<String> = Vec::new();
    let mut errors = 0;
    for run in 0..1000u64 {
        let s = random_scenario(&mut rng, &params);
        let settings = RunSettings {
            cluster_mode: if run % 2 == 0 { Mode::Semantic } else { Mode::Conventional },
            transcode_mode: if run % 4 < 2 { Mode::Semantic } else { Mode::Conventional },
            ga: GaParams { population_size: 16, generations: 30, ..GaParams::default() },
            seed: run,
            ..RunSettings::default()
        };
        let inputs = Inputs { scenario: s, image: None };
        let o = match execute(&inputs, &settings) {
            Ok(o) => o,
            Err(e) => {
                errors += 1;
                violations.push(format!("run {run}: {e}"));
                continue;
            }
        };
        let s = &inputs.scenario;
        let forced = oracle_forced(s);
        for t in &forced {
            if !matches!(o.plan.decision(*t).map(|d| &d.serving), Some(Serving::Mbs)) {
                violations.push(format!("run {run}: forced tile {t} not on MBS"));
            }
        }
        let mut seen: BTreeSet<(BsId, TileId)> = BTreeSet::new();
        for c in o.schedule.clusters() {
            if !seen.insert((c.bs, c.tile)) {
                violations.push(format!("run {run}: {} sends {} twice", c.bs, c.tile));
            }
        }
        let expected: BTreeSet<(BsId, TileId)> = o
            .plan
            .decisions()
            .keys()
            .flat_map(|t| o.plan.serving_stations(*t).into_iter().map(move |b| (b, *t)))
            .collect();
        if seen != expected {
            violations.push(format!("run {run}: scheduled clusters differ from the plan"));
        }
        for (t, d) in o.plan.decisions() {
            if let Serving::Sbs(set) = &d.serving {
                if set.len() > 1 && set.contains(&BsId::Mbs) {
                    violations.push(format!("run {run}: {t} on MBS and SBS"));
                }
            }
        }
        for b in s.topology.stations() {
            let per_slot = station_bits(b.bandwidth_bps, s.budget.slot_us());
            let total = station_bits(b.bandwidth_bps, s.budget.deadline_us());
            let Some(bs) = o.schedule.per_bs.get(&b.id) else { continue };
            for (i, slot) in bs.slots.iter().enumerate() {
                let load: u64 = slot.iter().map(|c| cost(s.ladder.scale(c.level), s.budget.base_tile_bits())).sum();
                if load > per_slot {
                    violations.push(format!("run {run}: {} slot {} carries {load} > {per_slot}", b.id, i + 1));
                }
            }
            let sent: u64 = o
                .assignments
                .get(&b.id)
                .map(|a| a.iter().map(|(_, l)| cost(s.ladder.scale(l), s.budget.base_tile_bits())).sum())
                .unwrap_or(0);
            if sent > total {
                violations.push(format!("run {run}: {} assigns {sent} bits > {total}", b.id));
            }
        }
    }
    violations.truncate(5);
    verdict(violations.is_empty(), format!("1000 randomized runs, {errors} stage errors, violations {violations:?}"))
}

fn criterion_7() -> Verdict {
    let a = RasterImage::filled(16, 16, 3, 100).unwrap();
    let b = RasterImage::filled(16, 16, 3, 101).unwrap();
    let mse1 = psnr(&a, &b).unwrap();
    let same = psnr(&a, &a).unwrap();
    let src = RasterImage::load_png(workspace_root().join("scenarios/case_study.png")).unwrap();
    let scenario = case_inputs().scenario;
    let all_top = LevelAssignment::uniform(scenario.grid.tiles(), scenario.ladder.highest());
    let mosaic = apply_levels(&src, &scenario.grid, &all_top, &scenario.ladder).unwrap();
    let identical = mosaic.data() == src.data();
    let pass = (mse1 - 48.1308).abs() < 1e-4 && same == 100.0 && identical;
    verdict(pass, format!("MSE=1 -> {mse1:.6} dB, identical -> {same} dB, all-top mosaic identical: {identical}"))
}

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_8() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let config = RunConfig {
            scenario: case_study(),
            image: None,
            out_dir: tmp.path().join(name),
            settings: RunSettings { seed: 42, ..RunSettings::default() },
        };
        run_pipeline(&config).map(|_| read_tree(&config.out_dir))
    };
    match (run("a"), run("b")) {
        (Ok(a), Ok(b)) => {
            verdict(a == b && !a.is_empty(), format!("{} files compared, identical: {}", a.len(), a == b))
        }
        (Err(e), _) | (_, Err(e)) => verdict(false, e.to_string()),
    }
}

/// Uniform features and attention with disjoint FoVs, so every requested tile
/// has significance exactly 1.
fn uniform_scenario() -> Scenario {
    let grid = TileGrid::new(64, 32, 2, 4).unwrap();
    let features = FeatureDistribution::uniform(2, 4, &[1.0]).unwrap();
    let users: Vec<UserId> = (1..=4).collect();
    let uoa = users.iter().map(|&u| UoaProfile { user: u, weights: vec![1.0] }).collect();
    let fovs = users
        .iter()
        .map(|&u| {
            let i = (u - 1) as usize;
            FoVRequest { user: u, tiles: [TileId::new(i / 2, (i % 2) * 2), TileId::new(i / 2, (i % 2) * 2 + 1)].into() }
        })
        .collect();
    let mbs = BaseStation { id: BsId::Mbs, bandwidth_bps: 100_000_000, covers: users.iter().copied().collect() };
    let sbs = vec![
        BaseStation { id: BsId::Sbs(1), bandwidth_bps: 60_000_000, covers: [1, 2].into() },
        BaseStation { id: BsId::Sbs(2), bandwidth_bps: 40_000_000, covers: [3].into() },
    ];
    let topology = HetNetTopology::new(mbs, sbs).unwrap();
    let budget = DeliveryBudget::new(40_000, 20_000, 700_000).unwrap();
    Scenario::new(grid, features, uoa, fovs, topology, ResolutionLadder::standard(), budget, 0.0).unwrap()
}

fn gradient(w: u32, h: u32) -> RasterImage {
    let data =
        (0..h).flat_map(|y| (0..w).flat_map(move |x| [(x * 4) as u8, (y * 8) as u8, ((x + y) * 3) as u8])).collect();
    RasterImage::new(w, h, 3, data).unwrap()
}

fn criterion_9() -> Verdict {
    let s = uniform_scenario();
    let sigs = SignificanceMaps::compute(&s).unwrap();
    if sigs.global.iter().any(|(_, w)| w != 1.0) {
        return verdict(false, "fixture significance is not uniform");
    }
    let mut notes = Vec::new();
    let mut pass = true;
    for cluster_mode in Mode::ALL {
        let plan = decide_clusters(&s, cluster_mode, &sigs).unwrap();
        for bs in s.topology.bs_ids() {
            let tiles = plan.tiles_for(bs);
            let budget = station_bits(s.topology.station(bs).unwrap().bandwidth_bps, s.budget.deadline_us());
            let solve = |mode: Mode| {
                let p = TranscodeProblem::from_map(
                    &tiles,
                    &sigs.per_bs[&bs],
                    &s.ladder,
                    &s.budget,
                    budget,
                    mode,
                    ObjectiveUnit::LevelIndex,
                )
                .unwrap();
                let a = optimize_levels_exact(&p).unwrap();
                objective(&a, &sigs.per_bs[&bs], mode, &s.ladder, ObjectiveUnit::LevelIndex).unwrap()
            };
            let (sem, conv) = (solve(Mode::Semantic), solve(Mode::Conventional));
            if sem != conv {
                pass = false;
                notes.push(format!("{cluster_mode}/{bs}: {sem} vs {conv}"));
            }
        }
    }
    let inputs = Inputs { scenario: s, image: Some(gradient(64, 32)) };
    let rows = compare_inputs(&inputs, &RunSettings::default()).unwrap();
    let first = rows[0].0.metrics();
    let rows_equal = rows.iter().all(|(r, _)| r.metrics() == first);
    pass &= rows_equal;
    verdict(pass, format!("exact objectives equal per station, compare rows equal: {rows_equal} {notes:?}"))
}

fn main() {
    let criteria: [(&str, Option<Check>); 9] = [
        ("criterion 1 (no absolute PSNR target; informational)", None),
        ("criterion 2 (semantic transcoding raises weighted PSNR and resolution)", Some(criterion_2)),
        ("criterion 3 (top-bucket level and cluster dispersion ordering)", Some(criterion_3)),
        ("criterion 4 (cluster solver equals exhaustive optimum)", Some(criterion_4)),
        ("criterion 5 (GA equals brute-force knapsack optimum)", Some(criterion_5)),
        ("criterion 6 (randomized constraint suite)", Some(criterion_6)),
        ("criterion 7 (analytic PSNR fixtures)", Some(criterion_7)),
        ("criterion 8 (byte-identical repeated runs)", Some(criterion_8)),
        ("criterion 9 (uniform significance collapses the modes)", Some(criterion_9)),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let Some(check) = check else {
            println!(
                "INFO {name}: absolute quality depends on the image and grid, so criteria 2-3 check orderings instead"
            );
            continue;
        };
        let start = Instant::now();
        let v = check();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {} [{:.1} s]", v.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} of 8 checked criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
