//! Grid-world object search: belief maps, evidence fusion, cluster-level goal
//! selection, baselines, goal-level deep Q-learning and a benchmark harness.

pub mod belief;
pub mod bench;
pub mod episode;
pub mod percept;
pub mod plan;
pub mod policies;
pub mod rl;
pub mod world;
