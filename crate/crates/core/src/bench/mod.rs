//! Scenarios, map generation, the evaluation protocol and result tables.

pub mod mapgen;
pub mod metrics;
pub mod runner;
pub mod scenario;

use serde::Serialize;
use thiserror::Error;

use crate::percept::PerceptError;
use crate::plan::PlanError;
use crate::rl::RlError;
use crate::world::{EpisodeError, MapError};

pub use mapgen::generate_map;
pub use metrics::{
    aggregate, joint_success_filter, mean_se, records_from_csv, records_to_csv, trace_to_csv, train_log_to_csv, Method,
    MetricsRow, MetricsTable, RunRecord,
};
pub use runner::{run_episode, BenchResult, EpisodeSetup, Evaluator};
pub use scenario::{start_pose_suite, ScenarioSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}")]
    Io(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("map generation: {0}")]
    MapGen(String),
    #[error(transparent)]
    Detector(#[from] PerceptError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error("records: {0}")]
    Records(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("no admissible goal")]
    NoGoal,
}

/// Reproduction record written next to every output set.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub scenario: String,
    pub scenario_name: String,
    pub scenario_sha256: String,
    pub evaluation_seed: u64,
    pub suite_seed: u64,
    pub training_seed: u64,
    pub episodes: usize,
    pub horizon: usize,
    pub methods: Vec<Method>,
    pub checkpoint: Option<String>,
    pub config: serde_json::Value,
    pub start_poses: Vec<EpisodeSetup>,
    pub outputs: Vec<String>,
}
