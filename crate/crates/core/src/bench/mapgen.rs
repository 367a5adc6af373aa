//! Procedural floorplans by recursive division.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BenchError;
use crate::world::{GridMap, DEFAULT_CELL_SIZE};

const MAX_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy)]
struct Room {
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
}

impl Room {
    fn rows(&self) -> usize {
        self.r1 - self.r0
    }

    fn cols(&self) -> usize {
        self.c1 - self.c0
    }
}

/// Walled rectangle split into `rooms` axis-aligned rooms, each dividing wall
/// pierced by a door. Deterministic per seed; every free cell is reachable.
pub fn generate_map(width: usize, height: usize, rooms: usize, seed: u64) -> Result<GridMap, BenchError> {
    if width < 8 || height < 8 {
        return Err(BenchError::MapGen(format!("map {width}x{height} is smaller than 8x8")));
    }
    if rooms == 0 {
        return Err(BenchError::MapGen("at least one room is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(map) = attempt(width, height, rooms, &mut rng) {
            return Ok(map);
        }
    }
    Err(BenchError::MapGen(format!(
        "could not place {rooms} connected rooms in {width}x{height} after {MAX_ATTEMPTS} attempts"
    )))
}

fn attempt(width: usize, height: usize, rooms: usize, rng: &mut ChaCha8Rng) -> Option<GridMap> {
    let mut occ = vec![false; width * height];
    for r in 0..height {
        for c in 0..width {
            if r == 0 || c == 0 || r == height - 1 || c == width - 1 {
                occ[r * width + c] = true;
            }
        }
    }
    // Interior bounds are half-open [r0, r1) x [c0, c1).
    let mut open = vec![Room {
        r0: 1,
        c0: 1,
        r1: height - 1,
        c1: width - 1,
    }];
    while open.len() < rooms {
        // Split the largest room that leaves at least 3 cells on each side.
        let (i, _) = open
            .iter()
            .enumerate()
            .filter(|(_, rm)| rm.rows() >= 7 || rm.cols() >= 7)
            .max_by_key(|(i, rm)| (rm.rows() * rm.cols(), usize::MAX - i))?;
        let room = open.swap_remove(i);
        let horizontal = if room.rows() >= 7 && room.cols() >= 7 {
            if room.rows() == room.cols() {
                rng.random_bool(0.5)
            } else {
                room.rows() > room.cols()
            }
        } else {
            room.rows() >= 7
        };
        if horizontal {
            let wall = rng.random_range(room.r0 + 3..room.r1 - 3);
            let door = rng.random_range(room.c0..room.c1 - 1);
            let door_w = 1 + usize::from(rng.random_bool(0.5));
            for c in room.c0..room.c1 {
                occ[wall * width + c] = !(door..door + door_w).contains(&c);
            }
            open.push(Room { r1: wall, ..room });
            open.push(Room { r0: wall + 1, ..room });
        } else {
            let wall = rng.random_range(room.c0 + 3..room.c1 - 3);
            let door = rng.random_range(room.r0..room.r1 - 1);
            let door_w = 1 + usize::from(rng.random_bool(0.5));
            for r in room.r0..room.r1 {
                occ[r * width + wall] = !(door..door + door_w).contains(&r);
            }
            open.push(Room { c1: wall, ..room });
            open.push(Room { c0: wall + 1, ..room });
        }
    }
    let map = GridMap::new(width, height, occ, DEFAULT_CELL_SIZE).ok()?;
    map.is_connected().then_some(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_room_is_open() {
        let map = generate_map(10, 9, 1, 4).unwrap();
        assert_eq!(map.free_count(), 8 * 7);
    }

    #[test]
    fn deterministic_and_connected() {
        let a = generate_map(20, 20, 4, 9).unwrap();
        let b = generate_map(20, 20, 4, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.is_connected());
        assert!(a.free_count() < 18 * 18);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_map(7, 20, 2, 0).is_err());
        assert!(generate_map(20, 20, 0, 0).is_err());
        assert!(generate_map(8, 8, 50, 0).is_err());
    }
}
