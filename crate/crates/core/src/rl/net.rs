//! Fully convolutional Q-network over lifted belief features.
//!
//! Layers: `kernel × kernel` convolution to `hidden` maps, ReLU, 1×1 convolution
//! to `hidden` maps, ReLU, 1×1 convolution to the single Q channel. Spatial
//! shape is preserved, so one network serves any map size. The first kernel is
//! tied across rotations and reflections of the window, which makes the Q-map
//! equivariant to those symmetries of the map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::state::{orbit_count, CentroidMask, LiftedState, StateTensor, LIFTED_CHANNELS};
use super::RlError;
use crate::world::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub in_channels: usize,
    pub hidden: usize,
    pub kernel: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        NetShape {
            in_channels: LIFTED_CHANNELS,
            hidden: 16,
            kernel: 3,
        }
    }
}

impl NetShape {
    /// Inputs of the first layer: one weight per window orbit and channel.
    pub fn patch_len(&self) -> usize {
        orbit_count(self.kernel) * self.in_channels
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        h * self.patch_len() + h + h * h + h + h + 1
    }

    fn offsets(&self) -> [usize; 6] {
        let h = self.hidden;
        let w1 = 0;
        let b1 = w1 + h * self.patch_len();
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + h;
        [w1, b1, w2, b2, w3, b3]
    }

    pub fn validate(&self) -> Result<(), RlError> {
        if self.in_channels == 0 || self.hidden == 0 || self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(RlError::Shape(format!("invalid network shape {self:?}")));
        }
        Ok(())
    }
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Activations {
    h1: Vec<f64>,
    h2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    shape: NetShape,
    params: Vec<f64>,
}

impl QNetwork {
    /// He-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Result<Self, RlError> {
        shape.validate()?;
        let mut params = vec![0.0; shape.param_count()];
        let [w1, b1, w2, b2, w3, b3] = shape.offsets();
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        };
        fill(w1..b1, shape.kernel * shape.kernel * shape.in_channels);
        fill(w2..b2, shape.hidden);
        fill(w3..b3, shape.hidden);
        Ok(QNetwork { shape, params })
    }

    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Result<Self, RlError> {
        shape.validate()?;
        if params.len() != shape.param_count() {
            return Err(RlError::Shape(format!(
                "expected {} parameters, found {}",
                shape.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(RlError::Shape("non-finite parameter".into()));
        }
        Ok(QNetwork { shape, params })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self) -> Result<(), RlError> {
        if self.shape.in_channels != LIFTED_CHANNELS {
            return Err(RlError::Shape(format!(
                "network expects {} input channels, state lifts to {}",
                self.shape.in_channels, LIFTED_CHANNELS
            )));
        }
        Ok(())
    }

    /// Q-value for one input window, filling `act` for a later backward pass.
    pub fn forward_patch(&self, patch: &[f32], act: &mut Activations) -> f64 {
        let s = &self.shape;
        let h = s.hidden;
        let p = s.patch_len();
        debug_assert_eq!(patch.len(), p);
        let [w1, b1, w2, b2, w3, b3] = s.offsets();
        act.h1.resize(h, 0.0);
        act.h2.resize(h, 0.0);
        for j in 0..h {
            let row = &self.params[w1 + j * p..w1 + (j + 1) * p];
            let mut z = self.params[b1 + j];
            for (w, &x) in row.iter().zip(patch) {
                z += w * f64::from(x);
            }
            act.h1[j] = z.max(0.0);
        }
        for j in 0..h {
            let row = &self.params[w2 + j * h..w2 + (j + 1) * h];
            let z = self.params[b2 + j] + row.iter().zip(&act.h1).map(|(w, a)| w * a).sum::<f64>();
            act.h2[j] = z.max(0.0);
        }
        self.params[b3]
            + self.params[w3..w3 + h]
                .iter()
                .zip(&act.h2)
                .map(|(w, a)| w * a)
                .sum::<f64>()
    }

    /// Adds `dq · ∂q/∂θ` for the window evaluated into `act` onto `grad`.
    pub fn backward_patch(&self, patch: &[f32], act: &Activations, dq: f64, grad: &mut [f64]) {
        let s = &self.shape;
        let h = s.hidden;
        let p = s.patch_len();
        let [w1, b1, w2, b2, w3, b3] = s.offsets();
        grad[b3] += dq;
        let mut d2 = vec![0.0; h];
        for i in 0..h {
            grad[w3 + i] += dq * act.h2[i];
            if act.h2[i] > 0.0 {
                d2[i] = dq * self.params[w3 + i];
            }
        }
        let mut d1 = vec![0.0; h];
        for j in 0..h {
            if d2[j] == 0.0 {
                continue;
            }
            grad[b2 + j] += d2[j];
            for i in 0..h {
                grad[w2 + j * h + i] += d2[j] * act.h1[i];
                d1[i] += d2[j] * self.params[w2 + j * h + i];
            }
        }
        for j in 0..h {
            if act.h1[j] <= 0.0 || d1[j] == 0.0 {
                continue;
            }
            grad[b1 + j] += d1[j];
            let g = &mut grad[w1 + j * p..w1 + (j + 1) * p];
            for (gi, &x) in g.iter_mut().zip(patch) {
                *gi += d1[j] * f64::from(x);
            }
        }
    }

    /// Q-value at one cell of a lifted state.
    pub fn q_at(&self, lifted: &LiftedState, cell: Cell) -> f64 {
        let patch = lifted.patch(cell, self.shape.kernel);
        Inference::new(self).q(&patch)
    }

    /// Q-values at the given cells, in order.
    pub fn q_at_cells(&self, state: &StateTensor, cells: &[Cell]) -> Result<Vec<f64>, RlError> {
        self.check_input()?;
        let lifted = LiftedState::new(state);
        let mut patch = vec![0.0; self.shape.patch_len()];
        let mut inf = Inference::new(self);
        Ok(cells
            .iter()
            .map(|&c| {
                lifted.patch_into(c, self.shape.kernel, &mut patch);
                inf.q(&patch)
            })
            .collect())
    }

    /// Largest Q-value over the admissible cells of `mask`, or None if empty.
    pub fn masked_max(&self, state: &StateTensor, mask: &CentroidMask) -> Result<Option<f64>, RlError> {
        Ok(self.q_at_cells(state, mask.cells())?.into_iter().reduce(f64::max))
    }
}

/// Single-precision copy of the weights with each layer transposed, so the
/// inner loops run over hidden units. Used wherever many windows are scored
/// with one parameter set; training keeps the double-precision path.
struct Inference {
    hidden: usize,
    w1t: Vec<f32>,
    b1: Vec<f32>,
    w2t: Vec<f32>,
    b2: Vec<f32>,
    w3: Vec<f32>,
    b3: f32,
    z1: Vec<f32>,
    z2: Vec<f32>,
}

impl Inference {
    fn new(net: &QNetwork) -> Self {
        let s = &net.shape;
        let (h, p) = (s.hidden, s.patch_len());
        let [w1, b1, w2, b2, w3, b3] = s.offsets();
        let par = &net.params;
        let mut w1t = vec![0.0f32; p * h];
        for j in 0..h {
            for i in 0..p {
                w1t[i * h + j] = par[w1 + j * p + i] as f32;
            }
        }
        let mut w2t = vec![0.0f32; h * h];
        for j in 0..h {
            for i in 0..h {
                w2t[i * h + j] = par[w2 + j * h + i] as f32;
            }
        }
        let f = |r: std::ops::Range<usize>| par[r].iter().map(|&v| v as f32).collect::<Vec<f32>>();
        Inference {
            hidden: h,
            w1t,
            b1: f(b1..w2),
            w2t,
            b2: f(b2..w3),
            w3: f(w3..b3),
            b3: par[b3] as f32,
            z1: vec![0.0; h],
            z2: vec![0.0; h],
        }
    }

    fn q(&mut self, patch: &[f32]) -> f64 {
        let h = self.hidden;
        self.z1.copy_from_slice(&self.b1);
        for (i, &x) in patch.iter().enumerate() {
            if x != 0.0 {
                for (z, &w) in self.z1.iter_mut().zip(&self.w1t[i * h..(i + 1) * h]) {
                    *z += w * x;
                }
            }
        }
        self.z2.copy_from_slice(&self.b2);
        for (i, &a) in self.z1.iter().enumerate() {
            if a > 0.0 {
                for (z, &w) in self.z2.iter_mut().zip(&self.w2t[i * h..(i + 1) * h]) {
                    *z += w * a;
                }
            }
        }
        let mut q = self.b3;
        for (&w, &a) in self.w3.iter().zip(&self.z2) {
            q += w * a.max(0.0);
        }
        f64::from(q)
    }
}

/// Dense Q-values over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl QMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height);
        QMap { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.values[cell.row * self.width + cell.col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Full-grid forward pass.
pub fn forward_q(net: &QNetwork, state: &StateTensor) -> Result<QMap, RlError> {
    net.check_input()?;
    let lifted = LiftedState::new(state);
    let (h, w) = (state.height(), state.width());
    let mut patch = vec![0.0; net.shape.patch_len()];
    let mut inf = Inference::new(net);
    let mut values = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            lifted.patch_into(Cell::new(r, c), net.shape.kernel, &mut patch);
            values.push(inf.q(&patch));
        }
    }
    Ok(QMap::new(w, h, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::BeliefMap;
    use crate::rl::state::build_state_tensor;
    use crate::world::{load_map, Heading, Pose};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn shape_and_determinism() {
        let map = Arc::new(load_map("######\n#....#\n#.##.#\n#....#\n######\n").unwrap());
        let belief = BeliefMap::init_uniform(&map, 3);
        let state = build_state_tensor(&belief, 0, &map, Pose::new(Cell::new(1, 1), Heading::North));
        let net = QNetwork::new(NetShape::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let q = forward_q(&net, &state).unwrap();
        assert_eq!((q.width(), q.height()), (6, 5));
        assert!(q.values().iter().all(|v| v.is_finite()));
        let again = forward_q(&net, &state).unwrap();
        assert!(q
            .values()
            .iter()
            .zip(again.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        let cells = [Cell::new(3, 4), Cell::new(1, 2)];
        let direct = net.q_at_cells(&state, &cells).unwrap();
        assert_eq!(direct, vec![q.get(cells[0]), q.get(cells[1])]);
    }

    #[test]
    fn inference_matches_training_forward() {
        let map = Arc::new(load_map("########\n#......#\n#.##...#\n#......#\n########\n").unwrap());
        let mut belief = BeliefMap::init_uniform(&map, 3);
        let o = crate::percept::EvidenceVector::new(vec![0.5, 0.2, 0.1, 0.2]).unwrap();
        belief.fuse(Cell::new(2, 2), &o);
        let state = build_state_tensor(&belief, 0, &map, Pose::new(Cell::new(1, 1), Heading::East));
        let net = QNetwork::new(NetShape::default(), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let lifted = LiftedState::new(&state);
        let q = forward_q(&net, &state).unwrap();
        let mut act = Activations::default();
        for r in 0..5 {
            for c in 0..8 {
                let cell = Cell::new(r, c);
                let exact = net.forward_patch(&lifted.patch(cell, 3), &mut act);
                assert!((q.get(cell) - exact).abs() <= 1e-4 * exact.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejects_wrong_input_width() {
        let map = Arc::new(load_map("###\n#.#\n###\n").unwrap());
        let belief = BeliefMap::init_uniform(&map, 1);
        let state = build_state_tensor(&belief, 0, &map, Pose::new(Cell::new(1, 1), Heading::North));
        let shape = NetShape {
            in_channels: 4,
            hidden: 2,
            kernel: 1,
        };
        let net = QNetwork::new(shape, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(forward_q(&net, &state), Err(RlError::Shape(_))));
        assert!(QNetwork::from_params(shape, vec![0.0; 3]).is_err());
        let even = NetShape { kernel: 2, ..shape };
        assert!(QNetwork::new(even, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
