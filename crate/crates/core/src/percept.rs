//! Synthetic calibrated detector and evidence construction.
//!
//! A detection is a temperature-calibrated class-probability vector attached to
//! an occupied cell. Visible occupied cells without a detection contribute
//! background evidence whose strength decays with distance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{
    nearest_cell_where, visible_cells, Cell, EpisodeSpec, GridMap, Pose, DEFAULT_FOV_DEG, DEFAULT_MAX_RANGE,
};

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptError {
    #[error("logit vector is empty")]
    EmptyLogits,
    #[error("logit {index} is not finite ({value})")]
    NonFiniteLogit { index: usize, value: f64 },
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("probability vector is not on the simplex (sum {sum}, min {min})")]
    NotSimplex { sum: f64, min: f64 },
    #[error("invalid detector model: {0}")]
    BadModel(String),
}

fn check_simplex(values: &[f64]) -> Result<(), PerceptError> {
    let sum: f64 = values.iter().sum();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() || (sum - 1.0).abs() > SIMPLEX_TOL || !(min >= 0.0) {
        return Err(PerceptError::NotSimplex { sum, min });
    }
    Ok(())
}

/// Probabilities over the K object classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbVector(Vec<f64>);

impl ClassProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, PerceptError> {
        check_simplex(&probs)?;
        Ok(ClassProbVector(probs))
    }

    pub fn uniform(k: usize) -> Self {
        ClassProbVector(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; the first one on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Observation over K object classes followed by background (K+1 entries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceVector(Vec<f64>);

impl EvidenceVector {
    pub fn new(values: Vec<f64>) -> Result<Self, PerceptError> {
        check_simplex(&values)?;
        Ok(EvidenceVector(values))
    }

    pub fn uniform(k: usize) -> Self {
        EvidenceVector(vec![1.0 / (k + 1) as f64; k + 1])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn background(&self) -> f64 {
        *self.0.last().expect("evidence has at least two entries")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub temperature: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { temperature: 1.0 }
    }
}

/// Parameters of the synthetic detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Probability η that a visible object yields no detection.
    pub false_negative_rate: f64,
    /// λ in 1/m: background evidence and logit sharpness decay with distance.
    pub distance_decay: f64,
    /// Row `c` is the logit profile emitted for an object of class `c`.
    pub confusion: Vec<Vec<f64>>,
    /// Logit scale at zero distance.
    pub confidence_sharpness: f64,
    /// Standard deviation of additive Gaussian logit noise.
    pub logit_noise: f64,
    /// Probability that a detection projects one cell off its object.
    pub projection_jitter: f64,
    /// Sensing range in cells.
    pub max_range: usize,
    pub fov_deg: f64,
}

impl DetectorModel {
    /// Detector whose confusion rows put `accuracy` on the true class and split
    /// the rest evenly.
    pub fn symmetric(class_count: usize, accuracy: f64) -> Self {
        let off = if class_count > 1 {
            (1.0 - accuracy) / (class_count - 1) as f64
        } else {
            0.0
        };
        let confusion = (0..class_count)
            .map(|r| {
                (0..class_count)
                    .map(|c| match (class_count, r == c) {
                        (1, _) => 1.0,
                        (_, true) => accuracy,
                        _ => off,
                    })
                    .collect()
            })
            .collect();
        DetectorModel {
            false_negative_rate: 0.1,
            distance_decay: 0.5,
            confusion,
            confidence_sharpness: 5.0,
            logit_noise: 0.5,
            projection_jitter: 0.0,
            max_range: DEFAULT_MAX_RANGE,
            fov_deg: DEFAULT_FOV_DEG,
        }
    }

    pub fn class_count(&self) -> usize {
        self.confusion.len()
    }

    pub fn validate(&self) -> Result<(), PerceptError> {
        let bad = |m: &str| Err(PerceptError::BadModel(m.to_string()));
        if !(0.0..1.0).contains(&self.false_negative_rate) {
            return bad("false_negative_rate must lie in [0, 1)");
        }
        if !(self.distance_decay > 0.0 && self.distance_decay.is_finite()) {
            return bad("distance_decay must be positive");
        }
        if !(self.confidence_sharpness > 0.0 && self.confidence_sharpness.is_finite()) {
            return bad("confidence_sharpness must be positive");
        }
        if !(self.logit_noise >= 0.0 && self.logit_noise.is_finite()) {
            return bad("logit_noise must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.projection_jitter) {
            return bad("projection_jitter must lie in [0, 1]");
        }
        if self.max_range == 0 {
            return bad("max_range must be at least 1");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 360.0) {
            return bad("fov_deg must lie in (0, 360]");
        }
        let k = self.confusion.len();
        if k == 0 {
            return bad("confusion matrix is empty");
        }
        for (i, row) in self.confusion.iter().enumerate() {
            if row.len() != k {
                return Err(PerceptError::BadModel(format!(
                    "confusion row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            if check_simplex(row).is_err() {
                return Err(PerceptError::BadModel(format!("confusion row {i} is not stochastic")));
            }
        }
        Ok(())
    }

    /// Logit scale at distance `rho` meters.
    pub fn sharpness_at(&self, rho: f64) -> f64 {
        self.confidence_sharpness / (1.0 + self.distance_decay * rho)
    }
}

/// Softmax of `logits / T`, shifted by the maximum for stability.
pub fn temperature_softmax(logits: &[f64], cal: &CalibrationConfig) -> Result<ClassProbVector, PerceptError> {
    if logits.is_empty() {
        return Err(PerceptError::EmptyLogits);
    }
    if let Some((index, &value)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(PerceptError::NonFiniteLogit { index, value });
    }
    let t = cal.temperature;
    if !(t > 0.0 && t.is_finite()) {
        return Err(PerceptError::BadTemperature(t));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&l| ((l - max) / t).exp()).collect();
    let z: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= z;
    }
    Ok(ClassProbVector(probs))
}

/// Detection evidence: `o_k = p_k·K/(K+1)`, `o_bg = 1/(K+1)`.
pub fn positive_evidence(p: &ClassProbVector) -> EvidenceVector {
    let k = p.len() as f64;
    let scale = k / (k + 1.0);
    let mut values: Vec<f64> = p.0.iter().map(|&pk| pk * scale).collect();
    values.push(1.0 / (k + 1.0));
    EvidenceVector(values)
}

/// Non-detection evidence at distance `rho` meters:
/// `o_bg = (1-η)/(1+λρ)`, object classes share the remainder evenly.
pub fn background_evidence(rho: f64, model: &DetectorModel, class_count: usize) -> EvidenceVector {
    let bg = (1.0 - model.false_negative_rate) / (1.0 + model.distance_decay * rho);
    let ok = (1.0 - bg) / class_count as f64;
    let mut values = vec![ok; class_count];
    values.push(bg);
    EvidenceVector(values)
}

/// Nearest occupied cell by center distance, ties to the smaller `(row, col)`.
pub fn snap_to_occupied(map: &GridMap, cell: Cell) -> Cell {
    nearest_cell_where(map, cell, |c| map.is_occupied(c)).expect("GridMap always has an occupied cell")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub cell: Cell,
    pub probs: ClassProbVector,
}

/// One camera frame worth of evidence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame {
    pub detections: Vec<Detection>,
    /// Visible occupied cells without a detection and their distance in meters.
    pub background: Vec<(Cell, f64)>,
}

impl Frame {
    pub fn is_empty(&self) -> bool {
        self.detections.is_empty() && self.background.is_empty()
    }
}

const JITTER_OFFSETS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Renders one frame of synthetic detections from ground truth.
///
/// Each visible object is detected with probability `1 - η`. Its logits are the
/// confusion row of its true class scaled by a distance-dependent sharpness plus
/// Gaussian noise, then calibrated with the temperature softmax. Every other
/// visible occupied cell is reported as background.
pub fn simulate_frame<R: Rng + ?Sized>(
    map: &GridMap,
    pose: Pose,
    spec: &EpisodeSpec,
    model: &DetectorModel,
    cal: &CalibrationConfig,
    rng: &mut R,
) -> Frame {
    let visible = visible_cells(map, pose, model.fov_deg, model.max_range);
    let is_visible = |c: &Cell| visible.binary_search(c).is_ok();
    let mut objects: Vec<_> = spec.objects().filter(|o| is_visible(&o.cell)).collect();
    objects.sort_by_key(|o| o.cell);

    let k = model.class_count();
    let mut detections = Vec::new();
    let mut logits = vec![0.0; k];
    for obj in &objects {
        let roll: f64 = rng.random();
        if roll < model.false_negative_rate {
            continue;
        }
        let rho = pose.cell.distance(obj.cell) * map.cell_size();
        let scale = model.sharpness_at(rho);
        for (l, &w) in logits.iter_mut().zip(&model.confusion[obj.class]) {
            let noise: f64 = rng.sample(StandardNormal);
            *l = scale * w + model.logit_noise * noise;
        }
        let probs = temperature_softmax(&logits, cal).expect("finite logits and validated temperature");
        let mut cell = obj.cell;
        if model.projection_jitter > 0.0 && rng.random::<f64>() < model.projection_jitter {
            let (dr, dc) = JITTER_OFFSETS[rng.random_range(0..JITTER_OFFSETS.len())];
            if let Some(shifted) = map.cell_checked(obj.cell.row as isize + dr, obj.cell.col as isize + dc) {
                let snapped = snap_to_occupied(map, shifted);
                if is_visible(&snapped) {
                    cell = snapped;
                }
            }
        }
        detections.push(Detection { cell, probs });
    }

    let background = visible
        .iter()
        .filter(|c| map.is_occupied(**c) && !detections.iter().any(|d| d.cell == **c))
        .map(|&c| (c, pose.cell.distance(c) * map.cell_size()))
        .collect();
    Frame { detections, background }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{load_map, Heading, ObjectPlacement};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        let cal = CalibrationConfig { temperature: 1.0 };
        let p = temperature_softmax(&[0.0, 0.0], &cal).unwrap();
        assert!(close(p.as_slice(), &[0.5, 0.5], 1e-12));
        let p = temperature_softmax(&[3f64.ln(), 0.0], &cal).unwrap();
        assert!(close(p.as_slice(), &[0.75, 0.25], 1e-12));
        let hot = CalibrationConfig { temperature: 1000.0 };
        let p = temperature_softmax(&[5.0, 0.0], &hot).unwrap();
        let hi = 1.0 / (1.0 + (-0.005f64).exp());
        assert!(close(p.as_slice(), &[hi, 1.0 - hi], 1e-12));
        assert!(close(p.as_slice(), &[0.5, 0.5], 1.5e-3));
    }

    #[test]
    fn softmax_rejects_bad_input() {
        let cal = CalibrationConfig::default();
        assert!(matches!(
            temperature_softmax(&[1.0, f64::NAN], &cal),
            Err(PerceptError::NonFiniteLogit { index: 1, .. })
        ));
        assert_eq!(temperature_softmax(&[], &cal), Err(PerceptError::EmptyLogits));
        assert!(temperature_softmax(&[1.0], &CalibrationConfig { temperature: 0.0 }).is_err());
    }

    #[test]
    fn softmax_shift_invariant() {
        let cal = CalibrationConfig { temperature: 0.7 };
        let a = temperature_softmax(&[1.0, 2.0, -3.0], &cal).unwrap();
        let b = temperature_softmax(&[901.0, 902.0, 897.0], &cal).unwrap();
        assert!(close(a.as_slice(), b.as_slice(), 1e-12));
    }

    #[test]
    fn positive_evidence_examples() {
        let p = ClassProbVector::new(vec![0.6, 0.3, 0.1]).unwrap();
        assert!(close(
            positive_evidence(&p).as_slice(),
            &[0.45, 0.225, 0.075, 0.25],
            1e-12
        ));
        let u = ClassProbVector::uniform(3);
        assert!(close(positive_evidence(&u).as_slice(), &[0.25; 4], 1e-12));
        let one = ClassProbVector::new(vec![1.0]).unwrap();
        assert!(close(positive_evidence(&one).as_slice(), &[0.5, 0.5], 1e-12));
    }

    #[test]
    fn background_evidence_examples() {
        let mut model = DetectorModel::symmetric(3, 0.9);
        model.false_negative_rate = 0.1;
        model.distance_decay = 1.0;
        let o = background_evidence(0.0, &model, 3);
        assert!(close(o.as_slice(), &[0.1 / 3.0, 0.1 / 3.0, 0.1 / 3.0, 0.9], 1e-12));
        let o = background_evidence(1.0, &model, 3);
        assert!((o.background() - 0.45).abs() < 1e-12);
        assert!((o.as_slice()[0] - 0.55 / 3.0).abs() < 1e-12);
        assert!((o.as_slice()[0] - 0.183333).abs() < 1e-6);
        model.distance_decay = 1e-12;
        let o = background_evidence(5.0, &model, 3);
        assert!((o.background() - 0.9).abs() < 1e-9);
    }

    #[test]
    fn model_validation() {
        let mut m = DetectorModel::symmetric(3, 0.8);
        assert!(m.validate().is_ok());
        m.confusion[1] = vec![0.5, 0.6, 0.0];
        assert!(m.validate().is_err());
        let mut m = DetectorModel::symmetric(3, 0.8);
        m.false_negative_rate = 1.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn snap_examples() {
        let map = load_map("#####\n#...#\n#...#\n#...#\n#####\n").unwrap();
        assert_eq!(snap_to_occupied(&map, Cell::new(0, 0)), Cell::new(0, 0));
        // (1,2) touches only the top wall at (0,2).
        assert_eq!(snap_to_occupied(&map, Cell::new(1, 2)), Cell::new(0, 2));
        // (1,1) is equidistant to (0,1) and (1,0); row-major order wins.
        assert_eq!(snap_to_occupied(&map, Cell::new(1, 1)), Cell::new(0, 1));
        // Centre cell: four walls at distance 2.
        assert_eq!(snap_to_occupied(&map, Cell::new(2, 2)), Cell::new(0, 2));
    }

    fn corridor_spec() -> (Arc<crate::world::GridMap>, EpisodeSpec) {
        let map = Arc::new(load_map("############\n#..........#\n############\n").unwrap());
        let spec = EpisodeSpec {
            map: map.clone(),
            target_class: 0,
            target_cell: Cell::new(1, 11),
            clutter: vec![ObjectPlacement {
                class: 1,
                cell: Cell::new(0, 5),
            }],
            start_pose: Pose::new(Cell::new(1, 1), Heading::East),
            horizon: 10,
            confidence_threshold: 0.8,
            rng_seed: 0,
        };
        (map, spec)
    }

    #[test]
    fn frame_respects_visibility() {
        let (map, spec) = corridor_spec();
        let model = DetectorModel::symmetric(3, 0.9);
        let cal = CalibrationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Facing west: the target to the east is out of view.
        let pose = Pose::new(Cell::new(1, 2), Heading::West);
        let visible = visible_cells(&map, pose, model.fov_deg, model.max_range);
        for _ in 0..200 {
            let frame = simulate_frame(&map, pose, &spec, &model, &cal, &mut rng);
            assert!(frame.detections.iter().all(|d| d.cell != spec.target_cell));
            for d in &frame.detections {
                assert!(visible.contains(&d.cell));
            }
            for (c, _) in &frame.background {
                assert!(visible.contains(c) && map.is_occupied(*c));
            }
        }
    }

    #[test]
    fn detection_rate_matches_false_negative_rate() {
        let (map, spec) = corridor_spec();
        let mut model = DetectorModel::symmetric(3, 0.9);
        model.false_negative_rate = 0.2;
        let cal = CalibrationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pose = Pose::new(Cell::new(1, 6), Heading::East);
        let trials = 10_000;
        let mut hits = 0;
        for _ in 0..trials {
            let frame = simulate_frame(&map, pose, &spec, &model, &cal, &mut rng);
            hits += frame.detections.iter().filter(|d| d.cell == spec.target_cell).count();
        }
        let freq = hits as f64 / trials as f64;
        assert!((freq - 0.8).abs() <= 0.02, "frequency {freq}");
    }
}
