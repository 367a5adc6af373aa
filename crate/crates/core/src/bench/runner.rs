//! Episode execution for every method over a scenario's start-pose suite.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::Serialize;

use super::metrics::{aggregate, joint_success_filter, Method, MetricsTable, RunRecord};
use super::scenario::ScenarioSpec;
use super::BenchError;
use crate::episode::{SearchContext, SearchEpisode, TraceStep};
use crate::plan::PartitionLadder;
use crate::policies::{bbums_next, cluster_stats, pcss_next, rws_step, UtilityWeights};
use crate::rl::{build_state_tensor, select_goal, CentroidMask, QNetwork, TrainingSetup};
use crate::world::{EpisodeSpec, Pose};

/// Runs one episode of `method` to completion. BBDPS acts greedily and needs
/// `net`; the other methods ignore it.
pub fn run_episode(
    method: Method,
    ctx: &SearchContext,
    spec: EpisodeSpec,
    weights: &UtilityWeights,
    net: Option<&QNetwork>,
    episode: usize,
    trace: bool,
) -> Result<(RunRecord, Option<Vec<TraceStep>>), BenchError> {
    spec.validate()?;
    if method == Method::Bbdps && net.is_none() {
        return Err(BenchError::Scenario("bbdps needs a trained network".into()));
    }
    let target_class = spec.target_class;
    let mut ep = if trace {
        SearchEpisode::with_trace(ctx, spec)
    } else {
        SearchEpisode::new(ctx, spec)
    };
    while !ep.is_finished() {
        if method == Method::Rws {
            let prim = rws_step(ep.policy_rng());
            ep.step(prim);
            continue;
        }
        let admissible = ep.prepare_decision();
        let goal = match method {
            Method::Pcss => pcss_next(&admissible, &ep.pose_search()),
            Method::Bbums => {
                let stats = cluster_stats(
                    ep.belief(),
                    ep.schedule().partition(),
                    &ep.pose_search(),
                    target_class,
                    &admissible,
                );
                bbums_next(&stats, weights)
            }
            Method::Bbdps => {
                let net = net.expect("checked above");
                let state = build_state_tensor(ep.belief(), target_class, &ctx.map, ep.pose());
                let mask = CentroidMask::from_centroids(&ctx.map, &admissible);
                Some(select_goal(net, &state, &mask, 0.0, ep.policy_rng())?)
            }
            Method::Rws => unreachable!(),
        };
        match goal {
            Some(g) => {
                ep.navigate(g);
            }
            None => {
                // Nothing reachable is left at this level; fall back to the first centroid.
                let g = admissible.first().map(|a| a.1).ok_or(BenchError::NoGoal)?;
                ep.navigate(g);
            }
        }
    }
    let (state, trace) = ep.into_parts();
    Ok((
        RunRecord {
            method,
            episode,
            outcome: state.finished,
            actions: state.primitives_executed,
            distance: state.distance_traveled,
        },
        trace,
    ))
}

/// Scenario bound to its search context and start-pose suite.
#[derive(Debug, Clone)]
pub struct Evaluator {
    scenario: ScenarioSpec,
    ctx: SearchContext,
    starts: Vec<Pose>,
}

/// Records, joint-success subset and tables of a full benchmark.
#[derive(Debug, Clone)]
pub struct BenchResult {
    pub records: Vec<RunRecord>,
    pub joint: BTreeSet<usize>,
    pub table: MetricsTable,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeSetup {
    pub episode: usize,
    pub start_pose: Pose,
    pub seed: u64,
}

impl Evaluator {
    /// Builds the evaluator with a start-pose suite of `episodes` poses
    /// (defaults to the scenario's `start_poses`).
    pub fn new(scenario: &ScenarioSpec, episodes: Option<usize>) -> Result<Self, BenchError> {
        let n = episodes.unwrap_or(scenario.file.evaluation.start_poses);
        let ladder = PartitionLadder::new(
            scenario.map.clone(),
            scenario.file.policy.k0,
            scenario.file.policy.cluster_seed,
        )?;
        let ctx = SearchContext::new(Arc::new(ladder), scenario.detector.clone(), scenario.calibration);
        Ok(Evaluator {
            starts: scenario.start_poses(n)?,
            scenario: scenario.clone(),
            ctx,
        })
    }

    pub fn scenario(&self) -> &ScenarioSpec {
        &self.scenario
    }

    pub fn context(&self) -> &SearchContext {
        &self.ctx
    }

    pub fn episodes(&self) -> usize {
        self.starts.len()
    }

    pub fn setups(&self) -> Vec<EpisodeSetup> {
        (0..self.starts.len())
            .map(|i| EpisodeSetup {
                episode: i,
                start_pose: self.starts[i],
                seed: self.episode_seed(i),
            })
            .collect()
    }

    pub fn episode_seed(&self, episode: usize) -> u64 {
        self.scenario.file.evaluation.seed ^ episode as u64
    }

    /// Evaluation-target episode `episode`; identical for every method.
    pub fn episode_spec(&self, episode: usize) -> EpisodeSpec {
        let target = self.scenario.eval_target();
        EpisodeSpec {
            map: self.ctx.map.clone(),
            target_class: target.class,
            target_cell: target.cell,
            clutter: self
                .scenario
                .clutter()
                .into_iter()
                .filter(|o| o.class != target.class)
                .collect(),
            start_pose: self.starts[episode],
            horizon: self.scenario.horizon(),
            confidence_threshold: self.scenario.file.evaluation.confidence_threshold,
            rng_seed: self.episode_seed(episode),
        }
    }

    pub fn run_episode(&self, method: Method, episode: usize, net: Option<&QNetwork>) -> Result<RunRecord, BenchError> {
        run_episode(
            method,
            &self.ctx,
            self.episode_spec(episode),
            &self.scenario.file.policy.weights,
            net,
            episode,
            false,
        )
        .map(|(r, _)| r)
    }

    pub fn replay(
        &self,
        method: Method,
        episode: usize,
        net: Option<&QNetwork>,
    ) -> Result<(RunRecord, Vec<TraceStep>), BenchError> {
        if episode >= self.starts.len() {
            return Err(BenchError::Scenario(format!(
                "episode {episode} outside the {}-episode suite",
                self.starts.len()
            )));
        }
        let (r, t) = run_episode(
            method,
            &self.ctx,
            self.episode_spec(episode),
            &self.scenario.file.policy.weights,
            net,
            episode,
            true,
        )?;
        Ok((r, t.unwrap_or_default()))
    }

    pub fn run_method(&self, method: Method, net: Option<&QNetwork>) -> Result<Vec<RunRecord>, BenchError> {
        (0..self.starts.len())
            .map(|i| self.run_episode(method, i, net))
            .collect()
    }

    /// All four methods on the same suite, then filtering and aggregation.
    pub fn run_bench(&self, net: &QNetwork) -> Result<BenchResult, BenchError> {
        let mut records = Vec::with_capacity(4 * self.starts.len());
        for m in Method::ALL {
            log::info!("evaluating {m} on {} episodes", self.starts.len());
            records.extend(self.run_method(m, Some(net))?);
        }
        let joint = joint_success_filter(&records)?;
        let table = aggregate(&records, &joint);
        Ok(BenchResult { records, joint, table })
    }

    /// Training episodes use the scenario's training placements and the same
    /// partition ladder as evaluation.
    pub fn training_setup(&self) -> TrainingSetup {
        TrainingSetup {
            ctx: self.ctx.clone(),
            targets: self.scenario.train_targets(),
            clutter: self.scenario.clutter(),
            horizon: self.scenario.horizon(),
            confidence_threshold: self.scenario.file.evaluation.confidence_threshold,
        }
    }
}
