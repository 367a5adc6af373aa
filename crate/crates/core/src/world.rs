//! Discrete 2D search environment.
//!
//! The map is a fixed occupancy grid. The robot occupies one free cell and faces
//! one of four headings; it moves with three motion primitives. Sensing is a
//! field-of-view wedge with occlusion computed by supercover line traversal.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default edge length of a grid cell in meters.
pub const DEFAULT_CELL_SIZE: f64 = 0.30;
/// Default camera horizontal field of view in degrees.
pub const DEFAULT_FOV_DEG: f64 = 90.0;
/// Default sensing range in cells.
pub const DEFAULT_MAX_RANGE: usize = 10;
/// Default fraction of free cells used as the primitive budget.
pub const DEFAULT_HORIZON_FRACTION: f64 = 0.75;
/// Default posterior threshold for declaring the target.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.8;

const NO_INDEX: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("map text is empty")]
    Empty,
    #[error("line {line}: expected {expected} cells, found {found}")]
    Ragged { line: usize, expected: usize, found: usize },
    #[error("line {line}, column {column}: unknown map character {ch:?}")]
    UnknownChar { line: usize, column: usize, ch: char },
    #[error("line {line}: invalid header: {message}")]
    BadHeader { line: usize, message: String },
    #[error("cell size must be positive and finite, got {0}")]
    BadCellSize(f64),
    #[error("map has no free cells")]
    NoFreeCells,
    #[error("map has no occupied cells")]
    NoOccupiedCells,
    #[error("flag vector has {found} entries, expected {expected}")]
    SizeMismatch { expected: usize, found: usize },
}

/// Grid coordinate. Ordering is lexicographic by `(row, col)`, which is the
/// tie-breaking order used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    /// Squared Euclidean distance between cell centers, in cells².
    pub fn dist2(self, other: Cell) -> usize {
        let dr = self.row.abs_diff(other.row);
        let dc = self.col.abs_diff(other.col);
        dr * dr + dc * dc
    }

    /// Euclidean distance between cell centers, in cells.
    pub fn distance(self, other: Cell) -> f64 {
        (self.dist2(other) as f64).sqrt()
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Known occupancy grid. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    cell_size: f64,
    occupied: Vec<bool>,
    free_cells: Vec<Cell>,
    occupied_cells: Vec<Cell>,
    free_index: Vec<u32>,
    occupied_index: Vec<u32>,
}

impl GridMap {
    /// Builds a map from row-major occupancy flags.
    pub fn new(width: usize, height: usize, occupied: Vec<bool>, cell_size: f64) -> Result<Self, MapError> {
        if width == 0 || height == 0 {
            return Err(MapError::Empty);
        }
        if occupied.len() != width * height {
            return Err(MapError::SizeMismatch {
                expected: width * height,
                found: occupied.len(),
            });
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(MapError::BadCellSize(cell_size));
        }
        let mut free_cells = Vec::new();
        let mut occupied_cells = Vec::new();
        let mut free_index = vec![NO_INDEX; width * height];
        let mut occupied_index = vec![NO_INDEX; width * height];
        for row in 0..height {
            for col in 0..width {
                let i = row * width + col;
                if occupied[i] {
                    occupied_index[i] = occupied_cells.len() as u32;
                    occupied_cells.push(Cell::new(row, col));
                } else {
                    free_index[i] = free_cells.len() as u32;
                    free_cells.push(Cell::new(row, col));
                }
            }
        }
        if free_cells.is_empty() {
            return Err(MapError::NoFreeCells);
        }
        if occupied_cells.is_empty() {
            return Err(MapError::NoOccupiedCells);
        }
        Ok(GridMap {
            width,
            height,
            cell_size,
            occupied,
            free_cells,
            occupied_cells,
            free_index,
            occupied_index,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major linear index of an in-bounds cell.
    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.width + cell.col
    }

    #[inline]
    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index / self.width, index % self.width)
    }

    #[inline]
    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width
    }

    /// Converts signed coordinates into a cell when they are inside the grid.
    #[inline]
    pub fn cell_checked(&self, row: isize, col: isize) -> Option<Cell> {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            None
        } else {
            Some(Cell::new(row as usize, col as usize))
        }
    }

    /// Out-of-bounds cells count as occupied.
    #[inline]
    pub fn is_occupied(&self, cell: Cell) -> bool {
        !self.contains(cell) || self.occupied[self.index(cell)]
    }

    #[inline]
    pub fn is_free(&self, cell: Cell) -> bool {
        !self.is_occupied(cell)
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupied
    }

    /// The free-cell set F in row-major order.
    pub fn free_cells(&self) -> &[Cell] {
        &self.free_cells
    }

    /// Occupied cells in row-major order.
    pub fn occupied_cells(&self) -> &[Cell] {
        &self.occupied_cells
    }

    pub fn free_count(&self) -> usize {
        self.free_cells.len()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied_cells.len()
    }

    /// Position of `cell` within [`GridMap::free_cells`].
    pub fn free_index(&self, cell: Cell) -> Option<usize> {
        if !self.contains(cell) {
            return None;
        }
        match self.free_index[self.index(cell)] {
            NO_INDEX => None,
            i => Some(i as usize),
        }
    }

    /// Position of `cell` within [`GridMap::occupied_cells`].
    pub fn occupied_index(&self, cell: Cell) -> Option<usize> {
        if !self.contains(cell) {
            return None;
        }
        match self.occupied_index[self.index(cell)] {
            NO_INDEX => None,
            i => Some(i as usize),
        }
    }

    /// True when every free cell is 4-connected to every other free cell.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.len()];
        let start = self.free_cells[0];
        let mut stack = vec![start];
        seen[self.index(start)] = true;
        let mut reached = 0;
        while let Some(cell) = stack.pop() {
            reached += 1;
            for (dr, dc) in [(-1isize, 0isize), (0, 1), (1, 0), (0, -1)] {
                if let Some(next) = self.cell_checked(cell.row as isize + dr, cell.col as isize + dc) {
                    let i = self.index(next);
                    if !self.occupied[i] && !seen[i] {
                        seen[i] = true;
                        stack.push(next);
                    }
                }
            }
        }
        reached == self.free_cells.len()
    }

    /// Serializes into the ASCII map format accepted by [`load_map`].
    pub fn to_text(&self) -> String {
        let mut out = format!("cellsize={}\n", self.cell_size);
        for row in 0..self.height {
            for col in 0..self.width {
                out.push(if self.occupied[row * self.width + col] {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

/// Parses the ASCII map format: an optional `cellsize=<meters>` header, then
/// rectangular rows of `#` (occupied) and `.` (free).
pub fn load_map(text: &str) -> Result<GridMap, MapError> {
    let mut cell_size = DEFAULT_CELL_SIZE;
    let mut rows: Vec<(usize, &str)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if rows.is_empty() && line.trim().is_empty() {
            continue;
        }
        if rows.is_empty() && line.trim_start().starts_with("cellsize") {
            let (_, value) = line.split_once('=').ok_or_else(|| MapError::BadHeader {
                line: line_no,
                message: "expected cellsize=<meters>".into(),
            })?;
            cell_size = value.trim().parse::<f64>().map_err(|e| MapError::BadHeader {
                line: line_no,
                message: e.to_string(),
            })?;
            if !(cell_size.is_finite() && cell_size > 0.0) {
                return Err(MapError::BadCellSize(cell_size));
            }
            continue;
        }
        rows.push((line_no, line));
    }
    while rows.last().is_some_and(|(_, l)| l.trim().is_empty()) {
        rows.pop();
    }
    let Some(&(_, first)) = rows.first() else {
        return Err(MapError::Empty);
    };
    let width = first.chars().count();
    let mut occupied = Vec::with_capacity(width * rows.len());
    for &(line_no, line) in &rows {
        let mut count = 0;
        for (c, ch) in line.chars().enumerate() {
            match ch {
                '#' => occupied.push(true),
                '.' => occupied.push(false),
                _ => {
                    return Err(MapError::UnknownChar {
                        line: line_no,
                        column: c + 1,
                        ch,
                    })
                }
            }
            count += 1;
        }
        if count != width {
            return Err(MapError::Ragged {
                line: line_no,
                expected: width,
                found: count,
            });
        }
    }
    GridMap::new(width, rows.len(), occupied, cell_size)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    /// 90° counter-clockwise.
    pub fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    /// 90° clockwise.
    pub fn right(self) -> Heading {
        match self {
            Heading::North => Heading::East,
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
        }
    }

    /// `(d_row, d_col)` of one forward step.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Heading::North => (-1, 0),
            Heading::East => (0, 1),
            Heading::South => (1, 0),
            Heading::West => (0, -1),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Heading {
        Heading::ALL[i % 4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub cell: Cell,
    pub heading: Heading,
}

impl Pose {
    pub const fn new(cell: Cell, heading: Heading) -> Self {
        Pose { cell, heading }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionPrimitive {
    MoveForward,
    TurnLeft,
    TurnRight,
}

impl MotionPrimitive {
    pub const ALL: [MotionPrimitive; 3] = [
        MotionPrimitive::MoveForward,
        MotionPrimitive::TurnLeft,
        MotionPrimitive::TurnRight,
    ];
}

/// Result of executing one primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepResult {
    pub pose: Pose,
    /// True when a forward move actually changed the cell.
    pub moved: bool,
}

/// Executes one primitive and reports whether the robot changed cell.
pub fn step_primitive(map: &GridMap, pose: Pose, prim: MotionPrimitive) -> StepResult {
    match prim {
        MotionPrimitive::TurnLeft => StepResult {
            pose: Pose::new(pose.cell, pose.heading.left()),
            moved: false,
        },
        MotionPrimitive::TurnRight => StepResult {
            pose: Pose::new(pose.cell, pose.heading.right()),
            moved: false,
        },
        MotionPrimitive::MoveForward => {
            let (dr, dc) = pose.heading.delta();
            match map.cell_checked(pose.cell.row as isize + dr, pose.cell.col as isize + dc) {
                Some(next) if map.is_free(next) => StepResult {
                    pose: Pose::new(next, pose.heading),
                    moved: true,
                },
                _ => StepResult { pose, moved: false },
            }
        }
    }
}

/// Applies a primitive. A blocked forward move leaves the pose unchanged.
pub fn apply_primitive(map: &GridMap, pose: Pose, prim: MotionPrimitive) -> Pose {
    step_primitive(map, pose, prim).pose
}

fn in_wedge(dr: isize, dc: isize, heading: Heading, cos_half: f64) -> bool {
    if dr == 0 && dc == 0 {
        return true;
    }
    let (hr, hc) = heading.delta();
    let dot = (dr * hr + dc * hc) as f64;
    let norm = ((dr * dr + dc * dc) as f64).sqrt();
    dot >= norm * cos_half - 1e-9
}

/// Supercover line of sight between two cell centers. Every cell whose closed
/// square touches the segment, other than the two endpoints, must be free.
pub fn line_of_sight(map: &GridMap, from: Cell, to: Cell) -> bool {
    let dx = to.col as isize - from.col as isize;
    let dy = to.row as isize - from.row as isize;
    let nx = dx.abs();
    let ny = dy.abs();
    let sx = dx.signum();
    let sy = dy.signum();
    let (mut x, mut y) = (from.col as isize, from.row as isize);
    let (mut ix, mut iy) = (0isize, 0isize);
    let blocked = |row: isize, col: isize| match map.cell_checked(row, col) {
        Some(c) => c != to && map.is_occupied(c),
        None => true,
    };
    while ix < nx || iy < ny {
        let decision = (1 + 2 * ix) * ny - (1 + 2 * iy) * nx;
        if decision == 0 {
            // Exact corner crossing touches both side cells.
            if blocked(y, x + sx) || blocked(y + sy, x) {
                return false;
            }
            x += sx;
            y += sy;
            ix += 1;
            iy += 1;
        } else if decision < 0 {
            x += sx;
            ix += 1;
        } else {
            y += sy;
            iy += 1;
        }
        if ix >= nx && iy >= ny {
            break;
        }
        if blocked(y, x) {
            return false;
        }
    }
    true
}

/// Cells seen from `pose`: within `max_range` cells (Euclidean, center to
/// center), inside ±fov/2 of the heading, and with unobstructed line of sight.
/// Occupied cells are visible but occlude what lies behind them. The pose cell
/// itself is always included. Result is in row-major order.
pub fn visible_cells(map: &GridMap, pose: Pose, fov_deg: f64, max_range: usize) -> Vec<Cell> {
    let mut out = Vec::new();
    let range = max_range as isize;
    let range2 = range * range;
    let cos_half = if fov_deg >= 360.0 {
        -2.0
    } else {
        (fov_deg.to_radians() / 2.0).cos()
    };
    let (r0, c0) = (pose.cell.row as isize, pose.cell.col as isize);
    for dr in -range..=range {
        for dc in -range..=range {
            if dr * dr + dc * dc > range2 {
                continue;
            }
            let Some(cell) = map.cell_checked(r0 + dr, c0 + dc) else {
                continue;
            };
            if !in_wedge(dr, dc, pose.heading, cos_half) {
                continue;
            }
            if line_of_sight(map, pose.cell, cell) {
                out.push(cell);
            }
        }
    }
    out
}

/// Nearest cell (by center distance) satisfying `pred`, ties to the smaller
/// `(row, col)`. Searches square rings outward from `origin`, origin included.
pub fn nearest_cell_where(map: &GridMap, origin: Cell, pred: impl Fn(Cell) -> bool) -> Option<Cell> {
    if map.contains(origin) && pred(origin) {
        return Some(origin);
    }
    let (r0, c0) = (origin.row as isize, origin.col as isize);
    let max_ring = map.width().max(map.height()) as isize;
    let mut best: Option<(usize, Cell)> = None;
    for ring in 1..=max_ring {
        // Every cell on this ring or beyond is at least `ring` away.
        if let Some((d2, _)) = best {
            if (ring * ring) as usize > d2 {
                break;
            }
        }
        for dr in -ring..=ring {
            let step = if dr.abs() == ring { 1 } else { 2 * ring };
            let mut dc = -ring;
            while dc <= ring {
                if let Some(c) = map.cell_checked(r0 + dr, c0 + dc) {
                    if pred(c) {
                        let cand = (origin.dist2(c), c);
                        if best.is_none_or(|b| cand < b) {
                            best = Some(cand);
                        }
                    }
                }
                dc += step;
            }
        }
    }
    best.map(|(_, c)| c)
}

/// Primitive budget `floor(fraction · |F|)`, at least 1.
pub fn horizon_for(map: &GridMap, fraction: f64) -> usize {
    ((fraction * map.free_count() as f64).floor() as usize).max(1)
}

/// An object standing on an occupied cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectPlacement {
    pub class: usize,
    pub cell: Cell,
}

/// Everything needed to run one search episode.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub map: Arc<GridMap>,
    pub target_class: usize,
    pub target_cell: Cell,
    /// Other objects physically present in the scene.
    pub clutter: Vec<ObjectPlacement>,
    pub start_pose: Pose,
    pub horizon: usize,
    pub confidence_threshold: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpisodeError {
    #[error("target cell {0} is not occupied")]
    TargetNotOccupied(Cell),
    #[error("object at {0} is not on an occupied cell")]
    ObjectNotOccupied(Cell),
    #[error("start cell {0} is not free")]
    StartNotFree(Cell),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("confidence threshold {0} outside (0, 1)")]
    BadThreshold(f64),
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<(), EpisodeError> {
        if !self.map.contains(self.target_cell) || !self.map.is_occupied(self.target_cell) {
            return Err(EpisodeError::TargetNotOccupied(self.target_cell));
        }
        if let Some(obj) = self
            .clutter
            .iter()
            .find(|o| !self.map.contains(o.cell) || !self.map.is_occupied(o.cell))
        {
            return Err(EpisodeError::ObjectNotOccupied(obj.cell));
        }
        if !self.map.is_free(self.start_pose.cell) {
            return Err(EpisodeError::StartNotFree(self.start_pose.cell));
        }
        if self.horizon == 0 {
            return Err(EpisodeError::ZeroHorizon);
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return Err(EpisodeError::BadThreshold(self.confidence_threshold));
        }
        Ok(())
    }

    /// All objects in the scene, target first.
    pub fn objects(&self) -> impl Iterator<Item = ObjectPlacement> + '_ {
        std::iter::once(ObjectPlacement {
            class: self.target_class,
            cell: self.target_cell,
        })
        .chain(self.clutter.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Running,
    Success,
    HorizonExhausted,
    FalseDeclaration,
}

impl Outcome {
    pub fn is_finished(self) -> bool {
        self != Outcome::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Success => "success",
            Outcome::HorizonExhausted => "horizon_exhausted",
            Outcome::FalseDeclaration => "false_declaration",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-episode motion accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub pose: Pose,
    pub primitives_executed: usize,
    pub forward_moves: usize,
    pub distance_traveled: f64,
    pub finished: Outcome,
}

impl EpisodeState {
    pub fn new(start: Pose) -> Self {
        EpisodeState {
            pose: start,
            primitives_executed: 0,
            forward_moves: 0,
            distance_traveled: 0.0,
            finished: Outcome::Running,
        }
    }

    /// Executes one primitive, counting it even when a forward move is blocked.
    pub fn execute(&mut self, map: &GridMap, prim: MotionPrimitive) -> StepResult {
        let result = step_primitive(map, self.pose, prim);
        self.pose = result.pose;
        self.primitives_executed += 1;
        if result.moved {
            self.forward_moves += 1;
            self.distance_traveled = self.forward_moves as f64 * map.cell_size();
        }
        result
    }
}
