//! Scenario files: map, objects, detector, policy, training and evaluation
//! settings in TOML.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mapgen::generate_map;
use super::BenchError;
use crate::percept::{CalibrationConfig, DetectorModel};
use crate::policies::UtilityWeights;
use crate::rl::TrainConfig;
use crate::world::{
    load_map, Cell, GridMap, Heading, ObjectPlacement, Pose, DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_FOV_DEG,
    DEFAULT_HORIZON_FRACTION, DEFAULT_MAX_RANGE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSpec {
    pub class: usize,
    pub row: usize,
    pub col: usize,
}

impl PlacementSpec {
    pub fn placement(&self) -> ObjectPlacement {
        ObjectPlacement {
            class: self.class,
            cell: Cell::new(self.row, self.col),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub width: usize,
    pub height: usize,
    pub rooms: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSection {
    /// Map file path, relative to the scenario file.
    pub file: Option<String>,
    pub generate: Option<GenerateSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectsSection {
    pub classes: usize,
    pub train: Vec<PlacementSpec>,
    pub eval: PlacementSpec,
    #[serde(default)]
    pub clutter: Vec<PlacementSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub false_negative_rate: f64,
    pub distance_decay: f64,
    /// Diagonal of a symmetric confusion matrix; ignored when `confusion` is set.
    pub accuracy: f64,
    pub confusion: Option<Vec<Vec<f64>>>,
    pub confidence_sharpness: f64,
    pub logit_noise: f64,
    pub projection_jitter: f64,
    pub max_range: usize,
    pub fov_deg: f64,
    pub temperature: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            false_negative_rate: 0.1,
            distance_decay: 0.5,
            accuracy: 0.9,
            confusion: None,
            confidence_sharpness: 5.0,
            logit_noise: 0.5,
            projection_jitter: 0.0,
            max_range: DEFAULT_MAX_RANGE,
            fov_deg: DEFAULT_FOV_DEG,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub k0: usize,
    pub cluster_seed: u64,
    pub weights: UtilityWeights,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            k0: 4,
            cluster_seed: 0,
            weights: UtilityWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub start_poses: usize,
    pub suite_seed: u64,
    pub horizon_fraction: f64,
    pub confidence_threshold: f64,
    /// Base seed; episode `i` runs with `seed ^ i`.
    pub seed: u64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            start_poses: 100,
            suite_seed: 0,
            horizon_fraction: DEFAULT_HORIZON_FRACTION,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            seed: 0,
        }
    }
}

/// On-disk layout of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub map: MapSection,
    pub objects: ObjectsSection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

/// A validated scenario with its map loaded.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub file: ScenarioFile,
    pub map: Arc<GridMap>,
    pub detector: DetectorModel,
    pub calibration: CalibrationConfig,
    /// SHA-256 over the scenario text and the map text.
    pub sha256: String,
}

impl ScenarioSpec {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    /// Parses scenario text; relative map paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self, BenchError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| BenchError::Scenario(e.to_string()))?;
        let map = match (&file.map.file, &file.map.generate) {
            (Some(rel), None) => {
                let path: PathBuf = base_dir.map_or_else(|| PathBuf::from(rel), |d| d.join(rel));
                let map_text =
                    fs::read_to_string(&path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
                load_map(&map_text)?
            }
            (None, Some(g)) => generate_map(g.width, g.height, g.rooms, g.seed)?,
            _ => {
                return Err(BenchError::Scenario(
                    "[map] needs exactly one of `file` or `generate`".into(),
                ))
            }
        };
        Self::from_parts(file, map, text)
    }

    pub fn from_parts(file: ScenarioFile, map: GridMap, text: &str) -> Result<Self, BenchError> {
        let k = file.objects.classes;
        let d = &file.detector;
        let detector = match &d.confusion {
            Some(c) => DetectorModel {
                confusion: c.clone(),
                ..DetectorModel::symmetric(k, d.accuracy)
            },
            None => DetectorModel::symmetric(k, d.accuracy),
        };
        let detector = DetectorModel {
            false_negative_rate: d.false_negative_rate,
            distance_decay: d.distance_decay,
            confidence_sharpness: d.confidence_sharpness,
            logit_noise: d.logit_noise,
            projection_jitter: d.projection_jitter,
            max_range: d.max_range,
            fov_deg: d.fov_deg,
            ..detector
        };
        detector.validate()?;
        if !(d.temperature > 0.0 && d.temperature.is_finite()) {
            return Err(BenchError::Scenario("detector temperature must be positive".into()));
        }
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher.update(map.to_text().as_bytes());
        let spec = ScenarioSpec {
            calibration: CalibrationConfig {
                temperature: d.temperature,
            },
            detector,
            map: Arc::new(map),
            sha256: hasher.finalize().iter().map(|b| format!("{b:02x}")).collect(),
            file,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), BenchError> {
        let f = &self.file;
        let bad = |m: String| Err(BenchError::Scenario(m));
        if f.objects.classes == 0 {
            return bad("objects.classes must be at least 1".into());
        }
        if f.objects.train.is_empty() {
            return bad("at least one training placement is required".into());
        }
        let all = f
            .objects
            .train
            .iter()
            .chain([&f.objects.eval])
            .chain(&f.objects.clutter);
        for p in all {
            let cell = Cell::new(p.row, p.col);
            if p.class >= f.objects.classes {
                return bad(format!(
                    "placement at {cell} has class {} >= {}",
                    p.class, f.objects.classes
                ));
            }
            if !self.map.contains(cell) || !self.map.is_occupied(cell) {
                return bad(format!("placement at {cell} is not an occupied cell"));
            }
        }
        let eval = f.objects.eval.placement();
        if f.objects.train.iter().any(|t| t.placement().cell == eval.cell) {
            return bad(format!("evaluation target {} is also a training target", eval.cell));
        }
        if f.policy.k0 == 0 {
            return bad("policy.k0 must be positive".into());
        }
        let e = &f.evaluation;
        if !(e.horizon_fraction > 0.0) {
            return bad("evaluation.horizon_fraction must be positive".into());
        }
        if !(e.confidence_threshold > 0.0 && e.confidence_threshold < 1.0) {
            return bad("evaluation.confidence_threshold must lie in (0, 1)".into());
        }
        f.training.config.validate()?;
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn class_count(&self) -> usize {
        self.file.objects.classes
    }

    pub fn train_targets(&self) -> Vec<ObjectPlacement> {
        self.file.objects.train.iter().map(PlacementSpec::placement).collect()
    }

    pub fn eval_target(&self) -> ObjectPlacement {
        self.file.objects.eval.placement()
    }

    pub fn clutter(&self) -> Vec<ObjectPlacement> {
        self.file.objects.clutter.iter().map(PlacementSpec::placement).collect()
    }

    pub fn horizon(&self) -> usize {
        crate::world::horizon_for(&self.map, self.file.evaluation.horizon_fraction)
    }

    /// The fixed start-pose suite for `n` episodes.
    pub fn start_poses(&self, n: usize) -> Result<Vec<Pose>, BenchError> {
        start_pose_suite(&self.map, n, self.file.evaluation.suite_seed)
    }
}

/// `n` start poses on distinct free cells drawn uniformly with `seed`, each
/// with a uniform heading.
pub fn start_pose_suite(map: &GridMap, n: usize, seed: u64) -> Result<Vec<Pose>, BenchError> {
    let free = map.free_cells();
    if n > free.len() {
        return Err(BenchError::Scenario(format!(
            "{n} distinct start poses requested but the map has {} free cells",
            free.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, free.len(), n);
    Ok(picks
        .iter()
        .map(|i| Pose::new(free[i], Heading::from_index(rng.random_range(0..4))))
        .collect())
}
