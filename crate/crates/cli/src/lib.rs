//! Pipeline runner and command-line front end for the tiled-video multicast
//! simulator.

pub mod commands;
pub mod output;
pub mod pipeline;

pub use commands::{dispatch, Cli};
pub use pipeline::{
    compare, compare_inputs, execute, run_pipeline, CompareRow, Inputs, Outcome, PipelineError, RunConfig, RunSettings,
    Stage,
};
