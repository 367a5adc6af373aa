//! Dirichlet belief map over occupied cells.
//!
//! Each occupied cell carries K+1 positive concentration parameters (K object
//! classes, then background). Evidence vectors are fused with Kaplan's
//! conservative rule
//!
//! ```text
//! β⁺_k = β_k · (Σ_j β_j o_j + o_k) / (Σ_j β_j o_j + min_i o_i)
//! ```
//!
//! which moves mass toward the observed class without the overconfidence of
//! adding pseudo-counts.

use std::fmt::Write as _;

use crate::percept::{background_evidence, positive_evidence, DetectorModel, EvidenceVector, Frame};
use crate::world::{Cell, EpisodeSpec, GridMap};

/// Parameters larger than this trigger a rescale of the cell's vector.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Posterior mean categorical distribution of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorCell {
    pub mean: Vec<f64>,
}

impl PosteriorCell {
    pub fn as_slice(&self) -> &[f64] {
        &self.mean
    }
}

/// Normalizes concentration parameters into the posterior mean.
pub fn posterior_mean(beta: &[f64]) -> PosteriorCell {
    let total: f64 = beta.iter().sum();
    PosteriorCell {
        mean: beta.iter().map(|b| b / total).collect(),
    }
}

/// Categorical entropy divided by `ln(K+1)`, so the result lies in `[0, 1]`.
pub fn normalized_entropy(cell: &PosteriorCell) -> f64 {
    entropy_of(&cell.mean)
}

fn entropy_of(mean: &[f64]) -> f64 {
    if mean.len() < 2 {
        return 0.0;
    }
    let h: f64 = mean.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    (h / (mean.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Kaplan fusion of one observation into a parameter vector.
pub fn kaplan_update(beta: &[f64], o: &EvidenceVector) -> Vec<f64> {
    let mut out = beta.to_vec();
    kaplan_update_in_place(&mut out, o);
    out
}

/// In-place form of [`kaplan_update`], including the overflow rescale.
pub fn kaplan_update_in_place(beta: &mut [f64], o: &EvidenceVector) {
    let o = o.as_slice();
    debug_assert_eq!(beta.len(), o.len());
    let s: f64 = beta.iter().zip(o).map(|(b, oj)| b * oj).sum();
    let min_o = o.iter().copied().fold(f64::INFINITY, f64::min);
    let denom = s + min_o;
    let mut max = 0.0f64;
    for (b, &ok) in beta.iter_mut().zip(o) {
        *b *= (s + ok) / denom;
        max = max.max(*b);
    }
    if max > OVERFLOW_GUARD {
        let min = beta.iter().copied().fold(f64::INFINITY, f64::min);
        for b in beta.iter_mut() {
            *b /= min;
        }
    }
}

/// Outcome of the threshold test on the belief map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Running,
    Success(Cell),
    FalseDeclaration(Cell),
}

/// Dirichlet parameters for every occupied cell of a map.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefMap {
    class_count: usize,
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    lookup: Vec<u32>,
    params: Vec<f64>,
}

impl BeliefMap {
    /// Uniform prior `β = 1` on every occupied cell.
    pub fn init_uniform(map: &GridMap, class_count: usize) -> Self {
        assert!(class_count >= 1, "belief needs at least one object class");
        let cells = map.occupied_cells().to_vec();
        let mut lookup = vec![u32::MAX; map.len()];
        for (i, &c) in cells.iter().enumerate() {
            lookup[map.index(c)] = i as u32;
        }
        BeliefMap {
            class_count,
            width: map.width(),
            height: map.height(),
            params: vec![1.0; cells.len() * (class_count + 1)],
            cells,
            lookup,
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Number of belief cells (occupied cells of the map).
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn slot(&self, cell: Cell) -> Option<usize> {
        if cell.row >= self.height || cell.col >= self.width {
            return None;
        }
        match self.lookup[cell.row * self.width + cell.col] {
            u32::MAX => None,
            i => Some(i as usize),
        }
    }

    pub fn beta(&self, cell: Cell) -> Option<&[f64]> {
        let stride = self.class_count + 1;
        self.slot(cell).map(|i| &self.params[i * stride..(i + 1) * stride])
    }

    /// Parameters of the `i`-th occupied cell in row-major order.
    pub fn beta_at(&self, i: usize) -> &[f64] {
        let stride = self.class_count + 1;
        &self.params[i * stride..(i + 1) * stride]
    }

    pub fn posterior(&self, cell: Cell) -> Option<PosteriorCell> {
        self.beta(cell).map(posterior_mean)
    }

    /// Posterior mean of class `class` at the `i`-th occupied cell.
    pub fn class_posterior_at(&self, i: usize, class: usize) -> f64 {
        let beta = self.beta_at(i);
        beta[class] / beta.iter().sum::<f64>()
    }

    pub fn class_posterior(&self, cell: Cell, class: usize) -> Option<f64> {
        self.slot(cell).map(|i| self.class_posterior_at(i, class))
    }

    /// Normalized entropy of the posterior mean at the `i`-th occupied cell.
    pub fn entropy_at(&self, i: usize) -> f64 {
        let beta = self.beta_at(i);
        let total: f64 = beta.iter().sum();
        let h: f64 = beta
            .iter()
            .map(|b| b / total)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum();
        (h / ((self.class_count + 1) as f64).ln()).clamp(0.0, 1.0)
    }

    /// Fuses one evidence vector at `cell`. Returns false if `cell` carries no belief.
    pub fn fuse(&mut self, cell: Cell, o: &EvidenceVector) -> bool {
        let stride = self.class_count + 1;
        match self.slot(cell) {
            Some(i) => {
                kaplan_update_in_place(&mut self.params[i * stride..(i + 1) * stride], o);
                true
            }
            None => false,
        }
    }

    /// Fuses a frame: detections first, then background cells, each group in
    /// row-major cell order.
    pub fn apply_frame(&mut self, frame: &Frame, model: &DetectorModel) {
        let mut detections: Vec<_> = frame.detections.iter().collect();
        detections.sort_by_key(|d| d.cell);
        for d in detections {
            let o = positive_evidence(&d.probs);
            self.fuse(d.cell, &o);
        }
        let mut background: Vec<_> = frame.background.iter().collect();
        background.sort_by_key(|(c, _)| *c);
        for &(cell, rho) in background {
            let o = background_evidence(rho, model, self.class_count);
            self.fuse(cell, &o);
        }
    }

    /// Cell with the largest posterior for `class`, first in row-major order on ties.
    pub fn argmax_class(&self, class: usize) -> (Cell, f64) {
        let mut best = (self.cells[0], f64::NEG_INFINITY);
        for i in 0..self.cells.len() {
            let p = self.class_posterior_at(i, class);
            if p > best.1 {
                best = (self.cells[i], p);
            }
        }
        best
    }

    /// Row-major grid of class posteriors, zero on free cells.
    pub fn class_grid(&self, class: usize) -> Vec<f64> {
        let mut grid = vec![0.0; self.width * self.height];
        for (i, c) in self.cells.iter().enumerate() {
            grid[c.row * self.width + c.col] = self.class_posterior_at(i, class);
        }
        grid
    }

    /// CSV snapshot of the target-class posterior, one grid row per line.
    pub fn to_csv(&self, class: usize) -> String {
        let grid = self.class_grid(class);
        let mut out = String::new();
        for row in grid.chunks(self.width) {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Threshold test: declare the argmax cell of the target posterior once it
/// reaches the confidence threshold.
pub fn check_termination(belief: &BeliefMap, spec: &EpisodeSpec) -> Termination {
    let (cell, p) = belief.argmax_class(spec.target_class);
    if p >= spec.confidence_threshold {
        if cell == spec.target_cell {
            Termination::Success(cell)
        } else {
            Termination::FalseDeclaration(cell)
        }
    } else {
        Termination::Running
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percept::{ClassProbVector, Detection};
    use crate::world::{load_map, Heading, ObjectPlacement, Pose};
    use std::sync::Arc;

    fn ev(v: &[f64]) -> EvidenceVector {
        EvidenceVector::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn uniform_prior() {
        let map = load_map("#####\n#...#\n#####\n").unwrap();
        let b = BeliefMap::init_uniform(&map, 3);
        assert_eq!(b.len(), map.occupied_count());
        for &c in map.occupied_cells() {
            assert!(close(b.posterior(c).unwrap().as_slice(), &[0.25; 4], 1e-15));
        }
        let b1 = BeliefMap::init_uniform(&map, 1);
        assert!(close(
            b1.posterior(Cell::new(0, 0)).unwrap().as_slice(),
            &[0.5, 0.5],
            1e-15
        ));
        assert!(b.beta(Cell::new(1, 1)).is_none());
    }

    #[test]
    fn posterior_mean_examples() {
        assert!(close(&posterior_mean(&[1.0; 4]).mean, &[0.25; 4], 1e-15));
        assert!(close(&posterior_mean(&[3.0, 1.0]).mean, &[0.75, 0.25], 1e-15));
        assert!(close(
            &posterior_mean(&[2.0, 4.0, 2.0, 2.0]).mean,
            &[0.2, 0.4, 0.2, 0.2],
            1e-15
        ));
    }

    #[test]
    fn kaplan_examples() {
        assert!(close(&kaplan_update(&[1.0; 4], &ev(&[0.25; 4])), &[1.0; 4], 1e-12));
        let b = kaplan_update(&[1.0, 1.0], &ev(&[0.8, 0.2]));
        assert!(close(&b, &[1.5, 1.0], 1e-12));
        assert!(close(&posterior_mean(&b).mean, &[0.6, 0.4], 1e-12));
        assert!(close(&kaplan_update(&[2.0, 2.0], &ev(&[0.5, 0.5])), &[2.0, 2.0], 1e-12));
    }

    #[test]
    fn kaplan_is_more_conservative_than_counting() {
        let b = kaplan_update(&[1.0, 1.0], &ev(&[0.8, 0.2]));
        let kaplan = posterior_mean(&b).mean[0];
        let counted = 2.0 / 3.0;
        assert!(kaplan < counted);
    }

    #[test]
    fn overflow_guard_preserves_mean() {
        let o = ev(&[0.9, 0.05, 0.05]);
        let mut beta = vec![2e12, 1.0, 2.0];
        let s: f64 = beta.iter().zip(o.as_slice()).map(|(b, x)| b * x).sum();
        let raw: Vec<f64> = beta
            .iter()
            .zip(o.as_slice())
            .map(|(b, x)| b * (s + x) / (s + 0.05))
            .collect();
        kaplan_update_in_place(&mut beta, &o);
        let min = beta.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((min - 1.0).abs() < 1e-12);
        let raw_sum: f64 = raw.iter().sum();
        let raw_mean: Vec<f64> = raw.iter().map(|b| b / raw_sum).collect();
        assert!(close(&posterior_mean(&beta).mean, &raw_mean, 1e-12));

        let mut big = vec![2e12, 5e11, 1e12];
        kaplan_update_in_place(&mut big, &o);
        assert!(big.iter().all(|&b| b <= OVERFLOW_GUARD));
    }

    #[test]
    fn entropy_examples() {
        let u = PosteriorCell { mean: vec![0.25; 4] };
        assert!((normalized_entropy(&u) - 1.0).abs() < 1e-12);
        let one_hot = PosteriorCell {
            mean: vec![0.0, 1.0, 0.0, 0.0],
        };
        assert_eq!(normalized_entropy(&one_hot), 0.0);
        let binary = PosteriorCell { mean: vec![0.75, 0.25] };
        assert!((normalized_entropy(&binary) - 0.811278).abs() < 1e-6);
    }

    fn spec_for(map: Arc<GridMap>, target: Cell) -> EpisodeSpec {
        EpisodeSpec {
            map,
            target_class: 0,
            target_cell: target,
            clutter: vec![ObjectPlacement {
                class: 1,
                cell: Cell::new(0, 3),
            }],
            start_pose: Pose::new(Cell::new(1, 1), Heading::East),
            horizon: 10,
            confidence_threshold: 0.8,
            rng_seed: 0,
        }
    }

    fn detection_frame(cell: Cell, probs: &[f64]) -> Frame {
        Frame {
            detections: vec![Detection {
                cell,
                probs: ClassProbVector::new(probs.to_vec()).unwrap(),
            }],
            background: vec![],
        }
    }

    #[test]
    fn frame_locality_and_empty_frame() {
        let map = load_map("#####\n#...#\n#####\n").unwrap();
        let model = DetectorModel::symmetric(3, 0.9);
        let mut b = BeliefMap::init_uniform(&map, 3);
        let fresh = b.clone();
        b.apply_frame(&Frame::default(), &model);
        assert_eq!(b, fresh);
        let target = Cell::new(0, 2);
        b.apply_frame(&detection_frame(target, &[0.7, 0.2, 0.1]), &model);
        for &c in map.occupied_cells() {
            if c == target {
                assert_ne!(b.beta(c), fresh.beta(c));
            } else {
                assert_eq!(b.beta(c), fresh.beta(c));
            }
        }
    }

    #[test]
    fn termination_outcomes() {
        let map = Arc::new(load_map("#####\n#...#\n#####\n").unwrap());
        let model = DetectorModel::symmetric(3, 0.9);
        let target = Cell::new(0, 2);
        let spec = spec_for(map.clone(), target);
        let mut b = BeliefMap::init_uniform(&map, 3);
        assert_eq!(check_termination(&b, &spec), Termination::Running);
        for _ in 0..60 {
            b.apply_frame(&detection_frame(target, &[0.9, 0.05, 0.05]), &model);
        }
        assert_eq!(check_termination(&b, &spec), Termination::Success(target));

        let clutter = Cell::new(0, 3);
        let mut b = BeliefMap::init_uniform(&map, 3);
        for _ in 0..60 {
            b.apply_frame(&detection_frame(clutter, &[0.9, 0.05, 0.05]), &model);
        }
        assert_eq!(check_termination(&b, &spec), Termination::FalseDeclaration(clutter));
    }

    #[test]
    fn csv_snapshot_shape() {
        let map = load_map("#####\n#...#\n#####\n").unwrap();
        let b = BeliefMap::init_uniform(&map, 3);
        let csv = b.to_csv(0);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "0.250000,0.000000,0.000000,0.000000,0.250000");
    }
}
