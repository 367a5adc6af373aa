//! Free-space clustering with progressive refinement, and shortest paths over
//! the `(cell, heading)` pose graph.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::world::{nearest_cell_where, step_primitive, Cell, GridMap, Heading, MotionPrimitive, Pose};

/// Lloyd iterations stop here even without an assignment fixpoint.
pub const MAX_KMEANS_ROUNDS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("cluster count {k} outside 1..={free}")]
    ClusterCount { k: usize, free: usize },
    #[error("refine called with {remaining} centroids still unvisited")]
    NotExhausted { remaining: usize },
    #[error("goal {0} is not a free cell")]
    GoalNotFree(Cell),
    #[error("goal {goal} unreachable from {start}")]
    Unreachable { start: Cell, goal: Cell },
}

/// `min(2^level · k0, free)`.
pub fn cluster_count(k0: usize, level: usize, free: usize) -> usize {
    let scaled = if level >= usize::BITS as usize {
        usize::MAX
    } else {
        k0.checked_shl(level as u32)
            .filter(|v| v >> level == k0)
            .unwrap_or(usize::MAX)
    };
    scaled.min(free)
}

/// Assignment of the free cells to `k` clusters with one viewpoint each.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPartition {
    pub level: usize,
    pub k: usize,
    /// Cluster id per free cell, aligned with [`GridMap::free_cells`].
    pub assignment: Vec<usize>,
    /// Viewpoint cell per cluster.
    pub centroids: Vec<Cell>,
    /// Cluster id per occupied cell via its nearest free cell, aligned with
    /// [`GridMap::occupied_cells`].
    pub occupied_assignment: Vec<usize>,
}

impl ClusterPartition {
    pub fn cluster_of(&self, map: &GridMap, cell: Cell) -> Option<usize> {
        map.free_index(cell).map(|i| self.assignment[i])
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn centroid_id(&self, cell: Cell) -> Option<usize> {
        self.centroids.iter().position(|&c| c == cell)
    }

    /// Text grid of cluster ids: `#` for occupied cells, centroids marked with `*`.
    pub fn dump(&self, map: &GridMap) -> String {
        let mut out = String::new();
        for row in 0..map.height() {
            for col in 0..map.width() {
                if col > 0 {
                    out.push(' ');
                }
                let cell = Cell::new(row, col);
                match map.free_index(cell) {
                    None => out.push_str("  #"),
                    Some(i) => {
                        let mark = if self.centroids[self.assignment[i]] == cell {
                            '*'
                        } else {
                            ' '
                        };
                        let _ = write!(out, "{mark}{:>2}", self.assignment[i]);
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn nearest_center(p: (f64, f64), centers: &[(f64, f64)]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Deterministic k-means over free-cell centers.
///
/// The first center is a free cell drawn from `seed`; the rest follow
/// farthest-point seeding. Lloyd rounds run to an assignment fixpoint (at most
/// [`MAX_KMEANS_ROUNDS`]), then each cluster is represented by its member cell
/// nearest the coordinate mean.
pub fn cluster_free_space(map: &GridMap, k: usize, seed: u64) -> Result<ClusterPartition, PlanError> {
    let free = map.free_cells();
    let n = free.len();
    if k == 0 || k > n {
        return Err(PlanError::ClusterCount { k, free: n });
    }
    let points: Vec<(f64, f64)> = free.iter().map(|c| (c.row as f64, c.col as f64)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut centers = vec![points[first]];
    let mut min_d: Vec<f64> = points
        .iter()
        .map(|p| (p.0 - points[first].0).powi(2) + (p.1 - points[first].1).powi(2))
        .collect();
    while centers.len() < k {
        let mut far = 0;
        for i in 1..n {
            if min_d[i] > min_d[far] {
                far = i;
            }
        }
        let c = points[far];
        centers.push(c);
        for (d, p) in min_d.iter_mut().zip(&points) {
            *d = d.min((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2));
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..MAX_KMEANS_ROUNDS {
        let mut changed = false;
        for (a, &p) in assignment.iter_mut().zip(&points) {
            let (j, _) = nearest_center(p, &centers);
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (&a, p) in assignment.iter().zip(&points) {
            sums[a].0 += p.0;
            sums[a].1 += p.1;
            sums[a].2 += 1;
        }
        for j in 0..k {
            let (sr, sc, count) = sums[j];
            if count > 0 {
                centers[j] = (sr / count as f64, sc / count as f64);
            } else {
                // Re-seed an empty cluster at the point worst served by its center.
                let mut worst = (0, -1.0);
                for (i, (&a, p)) in assignment.iter().zip(&points).enumerate() {
                    let d = (p.0 - centers[a].0).powi(2) + (p.1 - centers[a].1).powi(2);
                    if d > worst.1 {
                        worst = (i, d);
                    }
                }
                centers[j] = points[worst.0];
                assignment[worst.0] = j;
            }
        }
    }

    // Medoid snap: the member nearest the mean, ties to the smaller cell.
    let mut sums = vec![(0.0, 0.0, 0usize); k];
    for (&a, p) in assignment.iter().zip(&points) {
        sums[a].0 += p.0;
        sums[a].1 += p.1;
        sums[a].2 += 1;
    }
    let means: Vec<(f64, f64)> = sums
        .iter()
        .map(|&(r, c, n)| (r / n.max(1) as f64, c / n.max(1) as f64))
        .collect();
    let mut centroids: Vec<Option<(f64, Cell)>> = vec![None; k];
    for ((&a, p), &cell) in assignment.iter().zip(&points).zip(free) {
        let d = (p.0 - means[a].0).powi(2) + (p.1 - means[a].1).powi(2);
        if centroids[a].is_none_or(|(bd, _)| d < bd) {
            centroids[a] = Some((d, cell));
        }
    }
    let centroids: Vec<Cell> = centroids
        .into_iter()
        .map(|c| c.expect("every cluster keeps at least one member").1)
        .collect();

    let occupied_assignment = map
        .occupied_cells()
        .iter()
        .map(|&c| {
            let f = nearest_cell_where(map, c, |x| map.is_free(x)).expect("map has free cells");
            assignment[map.free_index(f).expect("free cell")]
        })
        .collect();

    Ok(ClusterPartition {
        level: 0,
        k,
        assignment,
        centroids,
        occupied_assignment,
    })
}

/// Lazily built partitions for every refinement level of one map.
#[derive(Debug)]
pub struct PartitionLadder {
    map: Arc<GridMap>,
    k0: usize,
    seed: u64,
    levels: Vec<OnceLock<Arc<ClusterPartition>>>,
}

impl PartitionLadder {
    pub fn new(map: Arc<GridMap>, k0: usize, seed: u64) -> Result<Self, PlanError> {
        let free = map.free_count();
        if k0 == 0 {
            return Err(PlanError::ClusterCount { k: k0, free });
        }
        let mut top = 0;
        while cluster_count(k0, top, free) < free {
            top += 1;
        }
        Ok(PartitionLadder {
            map,
            k0,
            seed,
            levels: (0..=top).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn map(&self) -> &Arc<GridMap> {
        &self.map
    }

    pub fn k0(&self) -> usize {
        self.k0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Level at which the cluster count saturates at `|F|`.
    pub fn saturation_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn partition(&self, level: usize) -> Arc<ClusterPartition> {
        let slot = level.min(self.saturation_level());
        let base = self.levels[slot]
            .get_or_init(|| {
                let k = cluster_count(self.k0, slot, self.map.free_count());
                let mut p = cluster_free_space(&self.map, k, self.seed).expect("k within 1..=|F|");
                p.level = slot;
                Arc::new(p)
            })
            .clone();
        if slot == level {
            base
        } else {
            let mut p = (*base).clone();
            p.level = level;
            Arc::new(p)
        }
    }
}

/// Current refinement level and the centroids already reached at that level.
#[derive(Debug, Clone)]
pub struct RefinementSchedule {
    ladder: Arc<PartitionLadder>,
    level: usize,
    partition: Arc<ClusterPartition>,
    visited: BTreeSet<Cell>,
}

impl RefinementSchedule {
    pub fn new(ladder: Arc<PartitionLadder>) -> Self {
        let partition = ladder.partition(0);
        RefinementSchedule {
            ladder,
            level: 0,
            partition,
            visited: BTreeSet::new(),
        }
    }

    pub fn k0(&self) -> usize {
        self.ladder.k0()
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn k(&self) -> usize {
        self.partition.k
    }

    pub fn partition(&self) -> &ClusterPartition {
        &self.partition
    }

    pub fn visited(&self) -> &BTreeSet<Cell> {
        &self.visited
    }

    /// Records a visit when `cell` is a centroid of the current level.
    pub fn mark_visited(&mut self, cell: Cell) -> bool {
        self.partition.centroids.contains(&cell) && self.visited.insert(cell)
    }

    pub fn is_exhausted(&self) -> bool {
        self.visited.len() == self.partition.k
    }

    /// `(cluster id, centroid)` pairs not yet visited, in cluster order.
    pub fn unvisited(&self) -> Vec<(usize, Cell)> {
        self.partition
            .centroids
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, c)| !self.visited.contains(c))
            .collect()
    }

    /// Moves to the next level with `k = min(2^(ℓ+1)·k0, |F|)` and an empty
    /// visited set. Only legal once every centroid of this level is visited.
    pub fn refine(&self) -> Result<RefinementSchedule, PlanError> {
        if !self.is_exhausted() {
            return Err(PlanError::NotExhausted {
                remaining: self.partition.k - self.visited.len(),
            });
        }
        let level = self.level + 1;
        Ok(RefinementSchedule {
            ladder: self.ladder.clone(),
            level,
            partition: self.ladder.partition(level),
            visited: BTreeSet::new(),
        })
    }
}

/// Primitive sequence with its cost (primitive count) and final pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub primitives: Vec<MotionPrimitive>,
    pub cost: usize,
    pub end_pose: Pose,
}

const UNSEEN: u32 = u32::MAX;

/// Breadth-first search over `(cell, heading)` from one start pose, each
/// primitive costing 1. Successors are expanded forward, left, right, so among
/// equal-cost paths the one that moves forward earliest wins.
#[derive(Debug, Clone)]
pub struct PoseSearch {
    width: usize,
    start: Pose,
    dist: Vec<u32>,
    parent: Vec<(u32, MotionPrimitive)>,
    first_reach: Vec<u32>,
}

impl PoseSearch {
    pub fn new(map: &GridMap, start: Pose) -> Self {
        let states = map.len() * 4;
        let mut dist = vec![UNSEEN; states];
        let mut parent = vec![(UNSEEN, MotionPrimitive::MoveForward); states];
        let mut first_reach = vec![UNSEEN; map.len()];
        let encode = |p: Pose| (map.index(p.cell) * 4 + p.heading.index()) as u32;
        let decode = |s: u32| Pose::new(map.cell_at(s as usize / 4), Heading::from_index(s as usize % 4));

        let s0 = encode(start);
        dist[s0 as usize] = 0;
        first_reach[map.index(start.cell)] = s0;
        let mut queue = VecDeque::from([s0]);
        while let Some(s) = queue.pop_front() {
            let pose = decode(s);
            for prim in MotionPrimitive::ALL {
                let step = step_primitive(map, pose, prim);
                if prim == MotionPrimitive::MoveForward && !step.moved {
                    continue;
                }
                let t = encode(step.pose);
                if dist[t as usize] == UNSEEN {
                    dist[t as usize] = dist[s as usize] + 1;
                    parent[t as usize] = (s, prim);
                    let ci = map.index(step.pose.cell);
                    if first_reach[ci] == UNSEEN {
                        first_reach[ci] = t;
                    }
                    queue.push_back(t);
                }
            }
        }
        PoseSearch {
            width: map.width(),
            start,
            dist,
            parent,
            first_reach,
        }
    }

    pub fn start(&self) -> Pose {
        self.start
    }

    fn cell_slot(&self, cell: Cell) -> Option<usize> {
        let i = cell.row * self.width + cell.col;
        (cell.col < self.width && i < self.first_reach.len()).then_some(i)
    }

    /// Minimum primitive count to stand on `cell` with any heading.
    pub fn cost_to(&self, cell: Cell) -> Option<usize> {
        let s = self.first_reach[self.cell_slot(cell)?];
        (s != UNSEEN).then(|| self.dist[s as usize] as usize)
    }

    pub fn path_to(&self, cell: Cell) -> Option<Path> {
        let mut s = self.first_reach[self.cell_slot(cell)?];
        if s == UNSEEN {
            return None;
        }
        let end_pose = Pose::new(cell, Heading::from_index(s as usize % 4));
        let mut primitives = Vec::with_capacity(self.dist[s as usize] as usize);
        while self.dist[s as usize] > 0 {
            let (p, prim) = self.parent[s as usize];
            primitives.push(prim);
            s = p;
        }
        primitives.reverse();
        Some(Path {
            cost: primitives.len(),
            primitives,
            end_pose,
        })
    }
}

/// Minimum-primitive path from `start` to any pose on `goal`.
pub fn shortest_path(map: &GridMap, start: Pose, goal: Cell) -> Result<Path, PlanError> {
    if !map.contains(goal) || map.is_occupied(goal) {
        return Err(PlanError::GoalNotFree(goal));
    }
    if start.cell == goal {
        return Ok(Path {
            primitives: vec![],
            cost: 0,
            end_pose: start,
        });
    }
    PoseSearch::new(map, start).path_to(goal).ok_or(PlanError::Unreachable {
        start: start.cell,
        goal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{apply_primitive, load_map};

    #[test]
    fn count_schedule() {
        assert_eq!(cluster_count(4, 0, 100), 4);
        assert_eq!(cluster_count(4, 2, 100), 16);
        assert_eq!(cluster_count(4, 6, 100), 100);
        assert_eq!(cluster_count(4, 200, 100), 100);
    }

    #[test]
    fn saturated_partition_is_identity() {
        let map = load_map("######\n#....#\n#.##.#\n#....#\n######\n").unwrap();
        let p = cluster_free_space(&map, map.free_count(), 3).unwrap();
        for (i, &c) in map.free_cells().iter().enumerate() {
            assert_eq!(p.centroids[p.assignment[i]], c);
        }
        assert!(p.sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn rejects_bad_k() {
        let map = load_map("###\n#.#\n###\n").unwrap();
        assert!(cluster_free_space(&map, 0, 0).is_err());
        assert!(cluster_free_space(&map, 2, 0).is_err());
    }

    #[test]
    fn single_cluster_centroid_is_medoid() {
        let map = load_map("#######\n#.....#\n#..#..#\n#.....#\n#######\n").unwrap();
        let p = cluster_free_space(&map, 1, 9).unwrap();
        let best = map
            .free_cells()
            .iter()
            .copied()
            .min_by_key(|&c| (map.free_cells().iter().map(|&o| c.dist2(o)).sum::<usize>(), c))
            .unwrap();
        assert_eq!(p.centroids, vec![best]);
    }

    #[test]
    fn refine_contract() {
        let map = Arc::new(load_map("#######\n#.....#\n#.....#\n#######\n").unwrap());
        let ladder = Arc::new(PartitionLadder::new(map.clone(), 2, 0).unwrap());
        let mut s = RefinementSchedule::new(ladder.clone());
        assert_eq!(s.k(), 2);
        assert!(matches!(s.refine(), Err(PlanError::NotExhausted { remaining: 2 })));
        for (_, c) in s.unvisited() {
            assert!(s.mark_visited(c));
        }
        assert!(!s.mark_visited(Cell::new(0, 0)));
        let s2 = s.refine().unwrap();
        assert_eq!((s2.level(), s2.k()), (1, 4));
        assert!(s2.visited().is_empty());
        assert_eq!(ladder.saturation_level(), 3);
        assert_eq!(ladder.partition(7).k, map.free_count());
    }

    #[test]
    fn path_examples() {
        let map = load_map("#######\n#.....#\n#######\n").unwrap();
        let start = Pose::new(Cell::new(1, 1), Heading::East);
        let p = shortest_path(&map, start, Cell::new(1, 1)).unwrap();
        assert_eq!(p.cost, 0);
        let p = shortest_path(&map, start, Cell::new(1, 4)).unwrap();
        assert_eq!(p.primitives, vec![MotionPrimitive::MoveForward; 3]);
        let back = Pose::new(Cell::new(1, 4), Heading::East);
        let p = shortest_path(&map, back, Cell::new(1, 1)).unwrap();
        assert_eq!(p.cost, 5);
        let mut pose = back;
        for prim in &p.primitives {
            pose = apply_primitive(&map, pose, *prim);
        }
        assert_eq!(pose, p.end_pose);
        assert_eq!(pose.cell, Cell::new(1, 1));
    }

    #[test]
    fn unreachable_and_blocked_goals() {
        let map = load_map("#####\n#.#.#\n#####\n").unwrap();
        let start = Pose::new(Cell::new(1, 1), Heading::North);
        assert!(matches!(
            shortest_path(&map, start, Cell::new(1, 3)),
            Err(PlanError::Unreachable { .. })
        ));
        assert_eq!(
            shortest_path(&map, start, Cell::new(1, 2)),
            Err(PlanError::GoalNotFree(Cell::new(1, 2)))
        );
    }

    #[test]
    fn dump_marks_centroids() {
        let map = load_map("#####\n#...#\n#####\n").unwrap();
        let p = cluster_free_space(&map, 1, 0).unwrap();
        let dump = p.dump(&map);
        assert!(dump.lines().nth(1).unwrap().contains("* 0"));
    }
}
