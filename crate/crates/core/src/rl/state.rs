//! Belief-state tensor, goal masks and the fixed feature lifting that feeds the
//! Q-network.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::belief::BeliefMap;
use crate::world::{Cell, GridMap, Pose};

/// Target posterior, entropy, occupancy, robot one-hot.
pub const STATE_CHANNELS: usize = 4;

/// Box-mean radii applied to the first three state channels.
pub const BOX_RADII: [usize; 3] = [1, 3, 6];

/// Length scales (cells) of the geodesic robot-proximity channels.
pub const PROXIMITY_SCALES: [f64; 3] = [2.0, 4.0, 8.0];

/// Channels produced by [`LiftedState`].
pub const LIFTED_CHANNELS: usize = STATE_CHANNELS + 3 * BOX_RADII.len() + PROXIMITY_SCALES.len();

/// Four-channel grid observation. Belief channels are stored only for occupied
/// cells, since they are zero on free space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor {
    map: Arc<GridMap>,
    robot: Cell,
    posterior: Vec<f32>,
    entropy: Vec<f32>,
}

impl StateTensor {
    pub fn new(map: Arc<GridMap>, robot: Cell, posterior: Vec<f32>, entropy: Vec<f32>) -> Self {
        assert_eq!(posterior.len(), map.occupied_count());
        assert_eq!(entropy.len(), map.occupied_count());
        assert!(map.is_free(robot), "robot must stand on a free cell");
        StateTensor {
            map,
            robot,
            posterior,
            entropy,
        }
    }

    pub fn map(&self) -> &Arc<GridMap> {
        &self.map
    }

    pub fn robot(&self) -> Cell {
        self.robot
    }

    pub fn height(&self) -> usize {
        self.map.height()
    }

    pub fn width(&self) -> usize {
        self.map.width()
    }

    pub fn value(&self, channel: usize, cell: Cell) -> f32 {
        match channel {
            0 => self.map.occupied_index(cell).map_or(0.0, |i| self.posterior[i]),
            1 => self.map.occupied_index(cell).map_or(0.0, |i| self.entropy[i]),
            2 => f32::from(u8::from(self.map.is_occupied(cell))),
            3 => f32::from(u8::from(cell == self.robot)),
            _ => panic!("state channel {channel} out of range"),
        }
    }

    /// Dense `[channel][row][col]` array.
    pub fn to_dense(&self) -> Vec<f32> {
        let (h, w) = (self.height(), self.width());
        let mut out = vec![0.0; STATE_CHANNELS * h * w];
        for ch in 0..STATE_CHANNELS {
            for r in 0..h {
                for c in 0..w {
                    out[(ch * h + r) * w + c] = self.value(ch, Cell::new(r, c));
                }
            }
        }
        out
    }
}

/// Snapshot of the belief and robot position as a state tensor.
pub fn build_state_tensor(belief: &BeliefMap, target_class: usize, map: &Arc<GridMap>, pose: Pose) -> StateTensor {
    let n = belief.len();
    let mut posterior = Vec::with_capacity(n);
    let mut entropy = Vec::with_capacity(n);
    for i in 0..n {
        posterior.push(belief.class_posterior_at(i, target_class) as f32);
        entropy.push(belief.entropy_at(i) as f32);
    }
    StateTensor::new(map.clone(), pose.cell, posterior, entropy)
}

/// Admissible goal cells, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CentroidMask {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

impl CentroidMask {
    pub fn new(width: usize, height: usize, mut cells: Vec<Cell>) -> Self {
        cells.sort();
        cells.dedup();
        assert!(cells.iter().all(|c| c.row < height && c.col < width));
        CentroidMask { width, height, cells }
    }

    pub fn from_centroids(map: &GridMap, admissible: &[(usize, Cell)]) -> Self {
        Self::new(map.width(), map.height(), admissible.iter().map(|&(_, c)| c).collect())
    }

    pub fn empty(width: usize, height: usize) -> Self {
        CentroidMask {
            width,
            height,
            cells: vec![],
        }
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn is_admissible(&self, cell: Cell) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    /// Row-major boolean grid.
    pub fn to_dense(&self) -> Vec<bool> {
        let mut out = vec![false; self.width * self.height];
        for c in &self.cells {
            out[c.row * self.width + c.col] = true;
        }
        out
    }
}

/// Fixed, parameter-free expansion of a state tensor into [`LIFTED_CHANNELS`]
/// feature grids: the four raw channels, box means of channels 0 to 2 at each
/// radius in [`BOX_RADII`], and `exp(-d / s)` of the free-space BFS distance `d`
/// from the robot for each `s` in [`PROXIMITY_SCALES`].
#[derive(Debug, Clone)]
pub struct LiftedState {
    width: usize,
    height: usize,
    features: Vec<f32>,
}

impl LiftedState {
    pub fn new(state: &StateTensor) -> Self {
        let map = &state.map;
        let (h, w) = (map.height(), map.width());
        let mut features = vec![0.0f32; h * w * LIFTED_CHANNELS];

        let mut sat = vec![[0.0f64; 3]; (h + 1) * (w + 1)];
        for r in 0..h {
            for c in 0..w {
                let cell = Cell::new(r, c);
                let base = (r * w + c) * LIFTED_CHANNELS;
                let mut v = [0.0; 3];
                for (ch, slot) in v.iter_mut().enumerate() {
                    let x = state.value(ch, cell);
                    features[base + ch] = x;
                    *slot = f64::from(x);
                }
                features[base + 3] = state.value(3, cell);
                for ch in 0..3 {
                    sat[(r + 1) * (w + 1) + c + 1][ch] =
                        v[ch] + sat[r * (w + 1) + c + 1][ch] + sat[(r + 1) * (w + 1) + c][ch]
                            - sat[r * (w + 1) + c][ch];
                }
            }
        }
        for r in 0..h {
            for c in 0..w {
                let base = (r * w + c) * LIFTED_CHANNELS;
                for (ri, &rad) in BOX_RADII.iter().enumerate() {
                    let (r0, r1) = (r.saturating_sub(rad), (r + rad + 1).min(h));
                    let (c0, c1) = (c.saturating_sub(rad), (c + rad + 1).min(w));
                    let area = ((r1 - r0) * (c1 - c0)) as f64;
                    for ch in 0..3 {
                        let s = sat[r1 * (w + 1) + c1][ch] - sat[r0 * (w + 1) + c1][ch] - sat[r1 * (w + 1) + c0][ch]
                            + sat[r0 * (w + 1) + c0][ch];
                        features[base + STATE_CHANNELS + ri * 3 + ch] = (s / area) as f32;
                    }
                }
            }
        }

        let dist = free_space_distances(map, state.robot);
        let prox_base = STATE_CHANNELS + 3 * BOX_RADII.len();
        let reach = dist
            .iter()
            .filter(|&&d| d != u32::MAX)
            .max()
            .map_or(0, |&d| d as usize + 1);
        let table: Vec<[f32; PROXIMITY_SCALES.len()]> = (0..reach)
            .map(|d| PROXIMITY_SCALES.map(|s| (-(d as f64) / s).exp() as f32))
            .collect();
        for (i, &d) in dist.iter().enumerate() {
            if d != u32::MAX {
                let base = i * LIFTED_CHANNELS + prox_base;
                features[base..base + PROXIMITY_SCALES.len()].copy_from_slice(&table[d as usize]);
            }
        }
        LiftedState {
            width: w,
            height: h,
            features,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, cell: Cell) -> &[f32] {
        let i = (cell.row * self.width + cell.col) * LIFTED_CHANNELS;
        &self.features[i..i + LIFTED_CHANNELS]
    }

    /// Features of the `kernel × kernel` window centered on `cell`, summed
    /// over each orbit of window offsets under 90° rotations and reflections.
    /// Layout is `[orbit][channel]` with orbits ordered as in
    /// [`window_orbits`]; cells outside the grid contribute zero.
    pub fn patch_into(&self, cell: Cell, kernel: usize, out: &mut [f32]) {
        debug_assert_eq!(out.len(), orbit_count(kernel) * LIFTED_CHANNELS);
        out.fill(0.0);
        let half = (kernel / 2) as isize;
        for dy in -half..=half {
            for dx in -half..=half {
                let (r, c) = (cell.row as isize + dy, cell.col as isize + dx);
                if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
                    continue;
                }
                let o = orbit_index(dy, dx);
                let dst = &mut out[o * LIFTED_CHANNELS..(o + 1) * LIFTED_CHANNELS];
                for (d, &v) in dst.iter_mut().zip(self.at(Cell::new(r as usize, c as usize))) {
                    *d += v;
                }
            }
        }
    }

    pub fn patch(&self, cell: Cell, kernel: usize) -> Vec<f32> {
        let mut out = vec![0.0; orbit_count(kernel) * LIFTED_CHANNELS];
        self.patch_into(cell, kernel, &mut out);
        out
    }
}

/// Number of offset orbits in a `kernel × kernel` window.
pub fn orbit_count(kernel: usize) -> usize {
    let r = kernel / 2;
    (r + 1) * (r + 2) / 2
}

/// Orbit of offset `(dy, dx)`: the unordered pair `{|dy|, |dx|}` as `(a, b)`
/// with `a <= b`, numbered by `b` then `a`.
fn orbit_index(dy: isize, dx: isize) -> usize {
    let (a, b) = {
        let (p, q) = (dy.unsigned_abs(), dx.unsigned_abs());
        (p.min(q), p.max(q))
    };
    b * (b + 1) / 2 + a
}

/// Representative offsets `(a, b)` of every orbit, in patch order.
pub fn window_orbits(kernel: usize) -> Vec<(usize, usize)> {
    let r = kernel / 2;
    (0..=r).flat_map(|b| (0..=b).map(move |a| (a, b))).collect()
}

/// 4-connected BFS step counts over free cells, `u32::MAX` where unreachable
/// or occupied.
fn free_space_distances(map: &GridMap, from: Cell) -> Vec<u32> {
    let mut dist = vec![u32::MAX; map.len()];
    dist[map.index(from)] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        let d = dist[map.index(c)];
        for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            if let Some(n) = map.cell_checked(c.row as isize + dr, c.col as isize + dc) {
                let ni = map.index(n);
                if map.is_free(n) && dist[ni] == u32::MAX {
                    dist[ni] = d + 1;
                    queue.push_back(n);
                }
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percept::{ClassProbVector, Detection, DetectorModel, Frame};
    use crate::world::{load_map, Heading};

    fn room() -> Arc<GridMap> {
        Arc::new(load_map("#######\n#.....#\n#.#...#\n#.....#\n#######\n").unwrap())
    }

    #[test]
    fn uniform_belief_channels() {
        let map = room();
        let belief = BeliefMap::init_uniform(&map, 3);
        let pose = Pose::new(Cell::new(1, 1), Heading::East);
        let t = build_state_tensor(&belief, 0, &map, pose);
        for r in 0..map.height() {
            for c in 0..map.width() {
                let cell = Cell::new(r, c);
                if map.is_occupied(cell) {
                    assert_eq!(t.value(0, cell), 0.25);
                    assert!((t.value(1, cell) - 1.0).abs() < 1e-6);
                    assert_eq!(t.value(2, cell), 1.0);
                } else {
                    assert_eq!((t.value(0, cell), t.value(1, cell), t.value(2, cell)), (0.0, 0.0, 0.0));
                }
            }
        }
        let dense = t.to_dense();
        let hw = map.len();
        let robot: Vec<_> = dense[3 * hw..].iter().enumerate().filter(|(_, &v)| v != 0.0).collect();
        assert_eq!(robot, vec![(map.index(Cell::new(1, 1)), &1.0)]);
    }

    #[test]
    fn driven_cell_shows_in_channels() {
        let map = room();
        let mut belief = BeliefMap::init_uniform(&map, 3);
        let hot = Cell::new(0, 3);
        let frame = Frame {
            detections: vec![Detection {
                cell: hot,
                probs: ClassProbVector::new(vec![0.98, 0.01, 0.01]).unwrap(),
            }],
            background: vec![],
        };
        let model = DetectorModel::symmetric(3, 0.9);
        while belief.class_posterior(hot, 0).unwrap() < 0.9 {
            belief.apply_frame(&frame, &model);
        }
        let t = build_state_tensor(&belief, 0, &map, Pose::new(Cell::new(1, 1), Heading::East));
        assert!(t.value(0, hot) >= 0.9);
        assert!(t.value(1, hot) < 0.5);
    }

    #[test]
    fn lifted_features() {
        let map = room();
        let belief = BeliefMap::init_uniform(&map, 3);
        let t = build_state_tensor(&belief, 0, &map, Pose::new(Cell::new(1, 1), Heading::East));
        let lifted = LiftedState::new(&t);
        let f = lifted.at(Cell::new(1, 1));
        assert_eq!(&f[..4], &[0.0, 0.0, 0.0, 1.0]);
        // 3x3 window around (1,1) holds 6 wall cells out of 9.
        assert!((f[6] - 6.0 / 9.0).abs() < 1e-6);
        assert!((f[4] - 0.25 * 6.0 / 9.0).abs() < 1e-6);
        assert_eq!(f[LIFTED_CHANNELS - 3], 1.0);
        let far = lifted.at(Cell::new(3, 5));
        assert!((far[LIFTED_CHANNELS - 1] - (-6.0f32 / 8.0).exp()).abs() < 1e-6);
        assert!(lifted.at(Cell::new(0, 0))[LIFTED_CHANNELS - 1] == 0.0);
        let p = lifted.patch(Cell::new(0, 0), 3);
        let sum = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f32>>();
        assert_eq!(&p[..LIFTED_CHANNELS], lifted.at(Cell::new(0, 0)));
        assert_eq!(
            p[LIFTED_CHANNELS..2 * LIFTED_CHANNELS].to_vec(),
            sum(lifted.at(Cell::new(1, 0)), lifted.at(Cell::new(0, 1)))
        );
        assert_eq!(&p[2 * LIFTED_CHANNELS..], lifted.at(Cell::new(1, 1)));
    }

    #[test]
    fn orbits_partition_the_window() {
        assert_eq!(window_orbits(3), vec![(0, 0), (0, 1), (1, 1)]);
        assert_eq!(window_orbits(5).len(), orbit_count(5));
        for k in [1usize, 3, 5, 7] {
            let h = (k / 2) as isize;
            let mut seen = vec![0usize; orbit_count(k)];
            for dy in -h..=h {
                for dx in -h..=h {
                    let o = orbit_index(dy, dx);
                    assert_eq!(o, orbit_index(dx, -dy));
                    assert_eq!(o, orbit_index(dy, -dx));
                    let (a, b) = window_orbits(k)[o];
                    assert_eq!(
                        (a, b),
                        (
                            dy.unsigned_abs().min(dx.unsigned_abs()),
                            dy.unsigned_abs().max(dx.unsigned_abs())
                        )
                    );
                    seen[o] += 1;
                }
            }
            assert_eq!(seen.iter().sum::<usize>(), k * k);
            assert!(seen.iter().all(|&n| n > 0));
        }
    }

    #[test]
    fn patch_is_mirror_invariant() {
        let text = "#######\n#..#..#\n#.....#\n##...##\n#######\n";
        let mirrored: String = text
            .lines()
            .map(|l| l.chars().rev().collect::<String>() + "\n")
            .collect();
        let (a, b) = (
            Arc::new(load_map(text).unwrap()),
            Arc::new(load_map(&mirrored).unwrap()),
        );
        let pose_a = Pose::new(Cell::new(2, 2), Heading::North);
        let pose_b = Pose::new(Cell::new(2, 4), Heading::North);
        let la = LiftedState::new(&build_state_tensor(&BeliefMap::init_uniform(&a, 2), 0, &a, pose_a));
        let lb = LiftedState::new(&build_state_tensor(&BeliefMap::init_uniform(&b, 2), 0, &b, pose_b));
        for r in 0..5 {
            for c in 0..7 {
                let pa = la.patch(Cell::new(r, c), 3);
                let pb = lb.patch(Cell::new(r, 6 - c), 3);
                assert!(pa.iter().zip(&pb).all(|(x, y)| (x - y).abs() < 1e-5), "cell ({r},{c})");
            }
        }
    }

    #[test]
    fn mask_is_sorted_set() {
        let m = CentroidMask::new(5, 5, vec![Cell::new(3, 1), Cell::new(1, 4), Cell::new(3, 1)]);
        assert_eq!(m.cells(), &[Cell::new(1, 4), Cell::new(3, 1)]);
        assert!(m.is_admissible(Cell::new(3, 1)));
        assert!(!m.is_admissible(Cell::new(0, 0)));
        assert_eq!(m.to_dense().iter().filter(|&&b| b).count(), 2);
    }
}
