//! Helpers shared by the integration tests: random maps and independent
//! reference implementations to check the library against.

#![allow(dead_code)]

use std::collections::VecDeque;

use objsearch::world::{Cell, GridMap, Heading, Pose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random grid with a solid border and interior obstacles at `density`.
/// Guarantees at least one free and one occupied cell.
pub fn random_map(width: usize, height: usize, density: f64, seed: u64) -> GridMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut occ = vec![false; width * height];
    for r in 0..height {
        for c in 0..width {
            let border = r == 0 || c == 0 || r + 1 == height || c + 1 == width;
            occ[r * width + c] = border || rng.random::<f64>() < density;
        }
    }
    if occ.iter().all(|&o| o) {
        occ[(height / 2) * width + width / 2] = false;
    }
    GridMap::new(width, height, occ, 0.3).expect("valid random map")
}

/// Kaplan fusion written out from its definition.
pub fn kaplan_oracle(beta: &[f64], o: &[f64]) -> Vec<f64> {
    let s: f64 = beta.iter().zip(o).map(|(b, x)| b * x).sum();
    let m = o.iter().copied().fold(f64::INFINITY, f64::min);
    beta.iter().zip(o).map(|(b, x)| b * (s + x) / (s + m)).collect()
}

/// Heading obtained by rotating `h` a quarter turn clockwise `n` times.
fn rotate(h: Heading, n: usize) -> Heading {
    let order = [Heading::North, Heading::East, Heading::South, Heading::West];
    let i = order.iter().position(|&x| x == h).unwrap();
    order[(i + n) % 4]
}

fn forward(map: &GridMap, p: Pose) -> Option<Pose> {
    let (r, c) = (p.cell.row as isize, p.cell.col as isize);
    let (nr, nc) = match p.heading {
        Heading::North => (r - 1, c),
        Heading::South => (r + 1, c),
        Heading::East => (r, c + 1),
        Heading::West => (r, c - 1),
    };
    if nr < 0 || nc < 0 || nr as usize >= map.height() || nc as usize >= map.width() {
        return None;
    }
    let next = Cell::new(nr as usize, nc as usize);
    map.is_free(next).then_some(Pose::new(next, p.heading))
}

/// Breadth-first primitive count from `start` to any pose on `goal`.
pub fn bfs_cost(map: &GridMap, start: Pose, goal: Cell) -> Option<usize> {
    let key = |p: Pose| {
        let h = [Heading::North, Heading::East, Heading::South, Heading::West]
            .iter()
            .position(|&x| x == p.heading)
            .unwrap();
        (p.cell.row * map.width() + p.cell.col) * 4 + h
    };
    let mut seen = vec![false; map.width() * map.height() * 4];
    let mut queue = VecDeque::from([(start, 0usize)]);
    seen[key(start)] = true;
    while let Some((p, d)) = queue.pop_front() {
        if p.cell == goal {
            return Some(d);
        }
        let mut next = vec![
            Pose::new(p.cell, rotate(p.heading, 1)),
            Pose::new(p.cell, rotate(p.heading, 3)),
        ];
        if let Some(f) = forward(map, p) {
            next.push(f);
        }
        for q in next {
            if !seen[key(q)] {
                seen[key(q)] = true;
                queue.push_back((q, d + 1));
            }
        }
    }
    None
}

/// Cells reachable from `start` over free 4-neighbors.
pub fn component(map: &GridMap, start: Cell) -> Vec<Cell> {
    let mut seen = vec![false; map.width() * map.height()];
    let mut out = vec![];
    let mut queue = VecDeque::from([start]);
    seen[start.row * map.width() + start.col] = true;
    while let Some(c) = queue.pop_front() {
        out.push(c);
        for h in [Heading::North, Heading::East, Heading::South, Heading::West] {
            if let Some(n) = forward(map, Pose::new(c, h)) {
                let i = n.cell.row * map.width() + n.cell.col;
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back(n.cell);
                }
            }
        }
    }
    out
}
