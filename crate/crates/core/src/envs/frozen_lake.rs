use alloc::vec;
use alloc::vec::Vec;

use super::{uniform_table, AffineMap, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::mdp::{Kernel, TabularCMDP};
use crate::rng;

const MAP_4: [&str; 4] = ["SFFF", "FHFH", "FFFH", "HFFG"];
const MAP_8: [&str; 8] = [
    "SFFFFFFF", "FFFFFFFF", "FFFHFFFF", "FFFFFHFF", "FFFHFFFF", "FHHFFFHF", "FHFFHFHF", "FFFHFFFG",
];

const HOLE_REWARD: f64 = -10.0;
const GOAL_REWARD: f64 = 20.0;

/// Native rewards lie in `[−10, 20]`.
pub(super) const REWARD_MAP: AffineMap = AffineMap { offset: HOLE_REWARD, scale: GOAL_REWARD - HOLE_REWARD };

// left, down, right, up
const MOVES: [(isize, isize); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

/// Slippery Frozen-Lake on the standard 4×4 or 8×8 map.
///
/// Each action moves in the intended direction or one of the two
/// perpendicular directions with probability 1/3 each; moves off the grid
/// stay put. Entering a hole pays `r = −10, c = 0`, entering the goal pays
/// `r = 20, c = 1`, any other transition pays `r = 0` and a utility drawn
/// uniformly on `[0, 1]` per `(s, a)`. Holes and the goal reset to the
/// start cell. Rewards are stored through [`REWARD_MAP`].
pub fn frozen_lake(size: usize, seed: u64) -> Result<TabularCMDP> {
    let map: &[&str] = match size {
        4 => &MAP_4,
        8 => &MAP_8,
        _ => return Err(Error::Parameter(alloc::format!("frozen lake size must be 4 or 8, got {size}"))),
    };
    let cells: Vec<u8> = map.iter().flat_map(|row| row.bytes()).collect();
    let n = size * size;
    let na = 4;
    let start = cells.iter().position(|&c| c == b'S').expect("map has a start");
    let mut rng = rng::stream(seed, 0xf1a);
    let free_utility = uniform_table(&mut rng, n * na);

    let mut p = vec![0.0; n * na * n];
    let mut reward = vec![0.0; n * na];
    let mut utility = vec![0.0; n * na];
    for s in 0..n {
        for a in 0..na {
            let idx = s * na + a;
            let row = &mut p[idx * n..(idx + 1) * n];
            if matches!(cells[s], b'H' | b'G') {
                row[start] = 1.0;
                reward[idx] = REWARD_MAP.to_unit(0.0);
                utility[idx] = free_utility[idx];
                continue;
            }
            let (r, c) = (s / size, s % size);
            let mut raw_r = 0.0;
            let mut raw_c = 0.0;
            for dir in [(a + 3) % 4, a, (a + 1) % 4] {
                let (dr, dc) = MOVES[dir];
                let nr = (r as isize + dr).clamp(0, size as isize - 1) as usize;
                let nc = (c as isize + dc).clamp(0, size as isize - 1) as usize;
                let next = nr * size + nc;
                row[next] += 1.0 / 3.0;
                match cells[next] {
                    b'H' => raw_r += HOLE_REWARD / 3.0,
                    b'G' => {
                        raw_r += GOAL_REWARD / 3.0;
                        raw_c += 1.0 / 3.0;
                    }
                    _ => raw_c += free_utility[idx] / 3.0,
                }
            }
            reward[idx] = REWARD_MAP.to_unit(raw_r).clamp(0.0, 1.0);
            utility[idx] = raw_c.clamp(0.0, 1.0);
        }
    }
    // 1/3 + 1/3 + 1/3 may not round to exactly 1
    for row in p.chunks_exact_mut(n) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
    }
    let kernel = Kernel::new(n, na, p)?;
    let mut rho = vec![0.0; n];
    rho[start] = 1.0;
    TabularCMDP::new(kernel, reward, vec![utility], DEFAULT_GAMMA, rho, vec![0.0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_entry_pays_top_of_scale() {
        // in the 4x4 map, cell 14 moving right (a = 2): right reaches the goal,
        // the perpendicular moves go up to 10 and down (off-grid, stays at 14)
        let m = frozen_lake(4, 0).unwrap();
        let idx = 14 * 4 + 2;
        let want_r = REWARD_MAP.to_unit(GOAL_REWARD / 3.0);
        assert!((m.reward()[idx] - want_r).abs() < 1e-12);
        let row = m.kernel().row(14, 2);
        assert!((row[15] - 1.0 / 3.0).abs() < 1e-12);
        assert!((row[14] - 1.0 / 3.0).abs() < 1e-12);
        assert!((row[10] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn endpoints_of_reward_map() {
        assert_eq!(REWARD_MAP.to_unit(HOLE_REWARD), 0.0);
        assert_eq!(REWARD_MAP.to_unit(GOAL_REWARD), 1.0);
    }

    #[test]
    fn holes_and_goal_reset_to_start() {
        let m = frozen_lake(8, 3).unwrap();
        assert_eq!(m.n_states(), 64);
        assert_eq!(m.kernel().row(63, 1)[0], 1.0);
        assert_eq!(m.kernel().row(19, 0)[0], 1.0);
        assert_eq!(m.rho()[0], 1.0);
    }

    #[test]
    fn rejects_other_sizes() {
        assert!(frozen_lake(5, 0).is_err());
    }
}
