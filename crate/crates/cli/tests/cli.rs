use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tilecast_cli::output::{read_plan, write_plan};
use tilecast_core::cluster::decide_clusters;
use tilecast_core::scene::load_scenario;
use tilecast_core::significance::SignificanceMaps;
use tilecast_core::Mode;

fn case_study() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/case_study.json")
}

fn tilecast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tilecast")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tilecast(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_scenario_names_the_path_and_fails() {
    let out = tilecast(&["run", "--scenario", "/nonexistent/scene.json", "--out", "/tmp/unused"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/scene.json"), "{err}");
    assert!(err.contains("[load]"), "{err}");
}

#[test]
fn bad_gamma_is_rejected_with_stage_tag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tilecast(&["run", "--scenario", s(&case_study()), "--out", s(tmp.path()), "--gamma", "1.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[qoe]"));
}

#[test]
fn run_writes_the_full_artifact_set() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["run", "--scenario", s(&case_study()), "--out", s(tmp.path()), "--generations", "40"]);
    for f in [
        "significance_global.csv",
        "significance_MBS.csv",
        "significance_SBS1.csv",
        "significance_SBS2.csv",
        "heatmap_global.png",
        "plan.csv",
        "balance.json",
        "assignment.csv",
        "buckets.csv",
        "schedule.csv",
        "progress.json",
        "qoe.json",
        "tile_psnr.csv",
        "quality.json",
        "mosaic.png",
        "manifest.json",
    ] {
        assert!(tmp.path().join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let qoe: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("qoe.json")).unwrap()).unwrap();
    assert_eq!(qoe["formulation"], "reconstructed");
}

#[test]
fn staged_commands_reproduce_the_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = |name: &str| tmp.path().join(name);
    let scenario = case_study();
    let ga = ["--generations", "40", "--seed", "7"];

    ok(&[&["run", "--scenario", s(&scenario), "--out", s(&dir("full"))][..], &ga].concat());
    ok(&["cluster", "--scenario", s(&scenario), "--out", s(&dir("staged"))]);
    let plan = dir("staged").join("plan.csv");
    ok(&[&["transcode", "--scenario", s(&scenario), "--out", s(&dir("staged")), "--plan", s(&plan)][..], &ga].concat());
    let assignment = dir("staged").join("assignment.csv");
    let upstream = ["--plan", s(&plan), "--assignment", s(&assignment)];
    ok(&[&["schedule", "--scenario", s(&scenario), "--out", s(&dir("staged"))][..], &upstream].concat());
    ok(&[&["qoe", "--scenario", s(&scenario), "--out", s(&dir("staged"))][..], &upstream].concat());

    for f in ["plan.csv", "assignment.csv", "buckets.csv", "schedule.csv", "progress.json", "qoe.json"] {
        assert_eq!(fs::read(dir("full").join(f)).unwrap(), fs::read(dir("staged").join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn significance_dump_writes_per_station_maps() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&["significance", "dump", "--scenario", s(&case_study()), "--out", s(tmp.path())]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("foreground"));
    let global = fs::read_to_string(tmp.path().join("significance_global.csv")).unwrap();
    let mbs = fs::read_to_string(tmp.path().join("significance_MBS.csv")).unwrap();
    assert!(global.starts_with("tile_row,tile_col,weight\n"));
    assert_eq!(global, mbs);
}

#[test]
fn compare_writes_one_row_per_mode_pair() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["compare", "--scenario", s(&case_study()), "--out", s(tmp.path()), "--generations", "40"]);
    let csv = fs::read_to_string(tmp.path().join("compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("cluster_mode,transcode_mode,weighted_resolution"));
    for pair in ["semantic,semantic", "semantic,conventional", "conventional,semantic", "conventional,conventional"] {
        assert!(lines.iter().any(|l| l.starts_with(pair)), "{pair}");
        assert!(tmp.path().join(pair.replace(',', "_")).join("qoe.json").is_file());
    }
}

#[test]
fn transcode_can_target_one_station() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["transcode", "--scenario", s(&case_study()), "--out", s(tmp.path()), "--bs", "SBS2", "--generations", "20"]);
    let csv = fs::read_to_string(tmp.path().join("assignment.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with("SBS2,")));
    assert!(csv.lines().count() > 1);
}

#[test]
fn plan_csv_round_trips() {
    let scenario = load_scenario(case_study()).unwrap();
    let sigs = SignificanceMaps::compute(&scenario).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    for mode in Mode::ALL {
        let plan = decide_clusters(&scenario, mode, &sigs).unwrap();
        let path = tmp.path().join(format!("{mode}.csv"));
        write_plan(&path, &plan).unwrap();
        assert_eq!(read_plan(&path).unwrap(), plan);
    }
}
