//! Shared episode executor: motion, sensing, belief updates, goal bookkeeping
//! and termination for every search method.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::belief::{check_termination, BeliefMap, Termination};
use crate::percept::{simulate_frame, CalibrationConfig, DetectorModel};
use crate::plan::{shortest_path, PartitionLadder, PoseSearch, RefinementSchedule};
use crate::world::{Cell, EpisodeSpec, EpisodeState, GridMap, MotionPrimitive, Outcome, Pose};

/// Stream ids carved out of one episode seed.
const PERCEPT_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;

/// Episode-independent pieces shared by all episodes on one map.
#[derive(Debug, Clone)]
pub struct SearchContext {
    pub map: Arc<GridMap>,
    pub ladder: Arc<PartitionLadder>,
    pub model: DetectorModel,
    pub calibration: CalibrationConfig,
}

impl SearchContext {
    pub fn new(ladder: Arc<PartitionLadder>, model: DetectorModel, calibration: CalibrationConfig) -> Self {
        SearchContext {
            map: ladder.map().clone(),
            ladder,
            model,
            calibration,
        }
    }

    pub fn class_count(&self) -> usize {
        self.model.class_count()
    }
}

/// One recorded primitive (or the initial observation when `primitive` is None).
#[derive(Debug, Clone, Serialize)]
pub struct TraceStep {
    pub step: usize,
    pub primitive: Option<MotionPrimitive>,
    pub pose: Pose,
    pub goal: Option<Cell>,
    pub detections: usize,
    pub max_target_posterior: f64,
    pub outcome: Outcome,
    #[serde(skip)]
    pub belief_csv: String,
}

/// A running search episode.
#[derive(Debug)]
pub struct SearchEpisode<'a> {
    ctx: &'a SearchContext,
    spec: EpisodeSpec,
    state: EpisodeState,
    belief: BeliefMap,
    schedule: RefinementSchedule,
    percept_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    goal: Option<Cell>,
    decisions: usize,
    trace: Option<Vec<TraceStep>>,
}

impl<'a> SearchEpisode<'a> {
    /// Starts an episode and fuses the observation taken at the start pose.
    pub fn new(ctx: &'a SearchContext, spec: EpisodeSpec) -> Self {
        Self::build(ctx, spec, false)
    }

    /// Like [`SearchEpisode::new`] but records a per-step trace with belief snapshots.
    pub fn with_trace(ctx: &'a SearchContext, spec: EpisodeSpec) -> Self {
        Self::build(ctx, spec, true)
    }

    fn build(ctx: &'a SearchContext, spec: EpisodeSpec, trace: bool) -> Self {
        debug_assert!(Arc::ptr_eq(&spec.map, &ctx.map) || *spec.map == *ctx.map);
        let mut percept_rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        percept_rng.set_stream(PERCEPT_STREAM);
        let mut policy_rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        policy_rng.set_stream(POLICY_STREAM);
        let mut ep = SearchEpisode {
            ctx,
            state: EpisodeState::new(spec.start_pose),
            belief: BeliefMap::init_uniform(&ctx.map, ctx.class_count()),
            schedule: RefinementSchedule::new(ctx.ladder.clone()),
            spec,
            percept_rng,
            policy_rng,
            goal: None,
            decisions: 0,
            trace: trace.then(Vec::new),
        };
        ep.schedule.mark_visited(ep.state.pose.cell);
        ep.observe(None);
        ep
    }

    pub fn context(&self) -> &SearchContext {
        self.ctx
    }

    pub fn spec(&self) -> &EpisodeSpec {
        &self.spec
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn pose(&self) -> Pose {
        self.state.pose
    }

    pub fn outcome(&self) -> Outcome {
        self.state.finished
    }

    pub fn is_finished(&self) -> bool {
        self.state.finished.is_finished()
    }

    pub fn belief(&self) -> &BeliefMap {
        &self.belief
    }

    pub fn schedule(&self) -> &RefinementSchedule {
        &self.schedule
    }

    pub fn policy_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.policy_rng
    }

    pub fn decisions(&self) -> usize {
        self.decisions
    }

    pub fn trace(&self) -> Option<&[TraceStep]> {
        self.trace.as_deref()
    }

    pub fn into_parts(self) -> (EpisodeState, Option<Vec<TraceStep>>) {
        (self.state, self.trace)
    }

    fn observe(&mut self, primitive: Option<MotionPrimitive>) {
        let frame = simulate_frame(
            &self.ctx.map,
            self.state.pose,
            &self.spec,
            &self.ctx.model,
            &self.ctx.calibration,
            &mut self.percept_rng,
        );
        self.belief.apply_frame(&frame, &self.ctx.model);
        self.state.finished = match check_termination(&self.belief, &self.spec) {
            Termination::Success(_) => Outcome::Success,
            Termination::FalseDeclaration(_) => Outcome::FalseDeclaration,
            Termination::Running if self.state.primitives_executed >= self.spec.horizon => Outcome::HorizonExhausted,
            Termination::Running => Outcome::Running,
        };
        if let Some(trace) = &mut self.trace {
            let target = self.spec.target_class;
            trace.push(TraceStep {
                step: self.state.primitives_executed,
                primitive,
                pose: self.state.pose,
                goal: self.goal,
                detections: frame.detections.len(),
                max_target_posterior: self.belief.argmax_class(target).1,
                outcome: self.state.finished,
                belief_csv: self.belief.to_csv(target),
            });
        }
    }

    /// Executes one primitive, then senses, fuses and checks termination.
    pub fn step(&mut self, primitive: MotionPrimitive) -> Outcome {
        assert!(!self.is_finished(), "episode already finished");
        self.state.execute(&self.ctx.map, primitive);
        self.schedule.mark_visited(self.state.pose.cell);
        self.observe(Some(primitive));
        self.state.finished
    }

    /// Refines the partition when every centroid of the current level has been
    /// visited, then returns the admissible `(cluster, centroid)` set.
    pub fn prepare_decision(&mut self) -> Vec<(usize, Cell)> {
        if self.schedule.is_exhausted() {
            let mut next = self.schedule.refine().expect("schedule is exhausted");
            next.mark_visited(self.state.pose.cell);
            if next.is_exhausted() {
                // Degenerate map where every viewpoint is the current cell.
                next = self.schedule.refine().expect("schedule is exhausted");
            }
            self.schedule = next;
        }
        self.schedule.unvisited()
    }

    /// Pose-graph search from the current pose.
    pub fn pose_search(&self) -> PoseSearch {
        PoseSearch::new(&self.ctx.map, self.state.pose)
    }

    /// Follows the shortest path to `goal`, stopping early if the episode ends.
    /// Returns the number of primitives executed. A goal on the current cell
    /// costs one in-place left turn; an unreachable goal costs nothing and is
    /// marked visited.
    pub fn navigate(&mut self, goal: Cell) -> usize {
        assert!(!self.is_finished(), "episode already finished");
        self.decisions += 1;
        self.goal = Some(goal);
        let before = self.state.primitives_executed;
        match shortest_path(&self.ctx.map, self.state.pose, goal) {
            Ok(path) if path.primitives.is_empty() => {
                self.step(MotionPrimitive::TurnLeft);
            }
            Ok(path) => {
                for prim in path.primitives {
                    if self.step(prim).is_finished() {
                        break;
                    }
                }
            }
            Err(_) => {
                self.schedule.mark_visited(goal);
            }
        }
        self.state.primitives_executed - before
    }
}
