//! Shared fixtures for the benchmarks.

use std::path::{Path, PathBuf};

use tilecast_core::{load_scenario, RasterImage, Scenario};

pub fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn case_study() -> Scenario {
    load_scenario(scenario_dir().join("case_study.json")).expect("bundled scenario loads")
}

pub fn case_study_image() -> RasterImage {
    RasterImage::load_png(scenario_dir().join("case_study.png")).expect("bundled image loads")
}
