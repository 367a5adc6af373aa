//! Baseline search policies: random walk, nearest-cluster sweep and
//! belief-utility maximization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::BeliefMap;
use crate::plan::{ClusterPartition, PoseSearch};
use crate::world::{Cell, MotionPrimitive};

/// Uniformly random motion primitive.
pub fn rws_step<R: Rng + ?Sized>(rng: &mut R) -> MotionPrimitive {
    MotionPrimitive::ALL[rng.random_range(0..MotionPrimitive::ALL.len())]
}

/// Nearest admissible centroid by primitive cost, ties to the smaller cell.
/// Unreachable centroids are skipped.
pub fn pcss_next(admissible: &[(usize, Cell)], search: &PoseSearch) -> Option<Cell> {
    admissible
        .iter()
        .filter_map(|&(_, c)| search.cost_to(c).map(|d| (d, c)))
        .min()
        .map(|(_, c)| c)
}

/// Belief summary of one cluster, each term in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterStats {
    pub cluster: usize,
    pub centroid: Cell,
    pub mean_entropy: f64,
    pub max_target_posterior: f64,
    pub motion_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub entropy: f64,
    pub distance: f64,
    pub posterior: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        UtilityWeights {
            entropy: 0.4,
            distance: 0.5,
            posterior: 0.1,
        }
    }
}

impl UtilityWeights {
    pub fn utility(&self, s: &ClusterStats) -> f64 {
        self.entropy * s.mean_entropy + self.distance * (1.0 - s.motion_cost) + self.posterior * s.max_target_posterior
    }
}

/// Statistics for the admissible clusters.
///
/// Occupied cells count toward the cluster of their nearest free cell. The
/// posterior and motion terms are divided by their maximum over the admissible
/// set (left at zero when that maximum is zero). Unreachable centroids are
/// dropped.
pub fn cluster_stats(
    belief: &BeliefMap,
    partition: &ClusterPartition,
    search: &PoseSearch,
    target_class: usize,
    admissible: &[(usize, Cell)],
) -> Vec<ClusterStats> {
    let mut entropy_sum = vec![0.0; partition.k];
    let mut count = vec![0usize; partition.k];
    let mut max_post = vec![0.0f64; partition.k];
    for (i, &m) in partition.occupied_assignment.iter().enumerate() {
        entropy_sum[m] += belief.entropy_at(i);
        count[m] += 1;
        max_post[m] = max_post[m].max(belief.class_posterior_at(i, target_class));
    }

    let mut stats: Vec<ClusterStats> = admissible
        .iter()
        .filter_map(|&(m, centroid)| {
            let cost = search.cost_to(centroid)?;
            Some(ClusterStats {
                cluster: m,
                centroid,
                mean_entropy: if count[m] > 0 {
                    entropy_sum[m] / count[m] as f64
                } else {
                    0.0
                },
                max_target_posterior: max_post[m],
                motion_cost: cost as f64,
            })
        })
        .collect();
    let p_max = stats.iter().map(|s| s.max_target_posterior).fold(0.0, f64::max);
    let d_max = stats.iter().map(|s| s.motion_cost).fold(0.0, f64::max);
    for s in &mut stats {
        s.max_target_posterior = if p_max > 0.0 {
            s.max_target_posterior / p_max
        } else {
            0.0
        };
        s.motion_cost = if d_max > 0.0 { s.motion_cost / d_max } else { 0.0 };
    }
    stats
}

/// Highest-utility centroid, ties to the smaller cell.
pub fn bbums_next(stats: &[ClusterStats], weights: &UtilityWeights) -> Option<Cell> {
    let mut best: Option<(f64, Cell)> = None;
    for s in stats {
        let u = weights.utility(s);
        match best {
            Some((bu, bc)) if u < bu || (u == bu && s.centroid > bc) => {}
            _ => best = Some((u, s.centroid)),
        }
    }
    best.map(|(_, c)| c)
}
