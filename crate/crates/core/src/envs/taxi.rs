use alloc::vec;

use super::{uniform_table, AffineMap, DEFAULT_GAMMA};
use crate::error::Result;
use crate::mdp::{Kernel, TabularCMDP};
use crate::rng;

const MAP: [&[u8]; 7] = [
    b"+---------+",
    b"|R: | : :G|",
    b"| : | : : |",
    b"| : : : : |",
    b"| | : | : |",
    b"|Y| : |B: |",
    b"+---------+",
];
const DEPOTS: [(usize, usize); 4] = [(0, 0), (0, 4), (4, 0), (4, 3)];
const SIDE: usize = 5;
const IN_TAXI: usize = 4;

pub const N_STATES: usize = SIDE * SIDE * 5 * 4;
pub const N_ACTIONS: usize = 6;

const STEP_REWARD: f64 = -1.0;
const DROPOFF_REWARD: f64 = 20.0;

/// Native rewards lie in `[−1, 20]`.
pub(super) const REWARD_MAP: AffineMap =
    AffineMap { offset: STEP_REWARD, scale: DROPOFF_REWARD - STEP_REWARD };

/// `((row · 5 + col) · 5 + passenger) · 4 + destination`; passenger 4 means in the taxi.
pub fn encode(row: usize, col: usize, passenger: usize, dest: usize) -> usize {
    ((row * SIDE + col) * 5 + passenger) * 4 + dest
}

pub fn decode(s: usize) -> (usize, usize, usize, usize) {
    let dest = s % 4;
    let rest = s / 4;
    let passenger = rest % 5;
    let cell = rest / 5;
    (cell / SIDE, cell % SIDE, passenger, dest)
}

/// The 5×5 taxi world with four depots (500 states, 6 actions:
/// south, north, east, west, pickup, dropoff).
///
/// A successful drop-off pays `r = 20` and restarts from the initial
/// distribution (taxi anywhere, passenger at a depot, a different
/// destination); every other step pays `r = −1`. Utilities are uniform on
/// `[0, 1]` per `(s, a)`.
pub fn taxi(seed: u64) -> Result<TabularCMDP> {
    let n = N_STATES;
    let na = N_ACTIONS;
    let mut rho = vec![0.0; n];
    for row in 0..SIDE {
        for col in 0..SIDE {
            for pass in 0..4 {
                for dest in 0..4 {
                    if pass != dest {
                        rho[encode(row, col, pass, dest)] = 1.0;
                    }
                }
            }
        }
    }
    let mass: f64 = rho.iter().sum();
    rho.iter_mut().for_each(|x| *x /= mass);

    let mut p = vec![0.0; n * na * n];
    let mut reward = vec![REWARD_MAP.to_unit(STEP_REWARD); n * na];
    for s in 0..n {
        let (row, col, pass, dest) = decode(s);
        for a in 0..na {
            let idx = s * na + a;
            let out = &mut p[idx * n..(idx + 1) * n];
            let (mut nr, mut nc, mut np) = (row, col, pass);
            match a {
                0 => nr = (row + 1).min(SIDE - 1),
                1 => nr = row.saturating_sub(1),
                2 if MAP[1 + row][2 * col + 2] == b':' => nc = (col + 1).min(SIDE - 1),
                3 if MAP[1 + row][2 * col] == b':' => nc = col.saturating_sub(1),
                4 if pass < IN_TAXI && DEPOTS[pass] == (row, col) => np = IN_TAXI,
                5 if pass == IN_TAXI && DEPOTS[dest] == (row, col) => {
                    reward[idx] = REWARD_MAP.to_unit(DROPOFF_REWARD);
                    out.copy_from_slice(&rho);
                    continue;
                }
                5 if pass == IN_TAXI => {
                    if let Some(depot) = DEPOTS.iter().position(|&d| d == (row, col)) {
                        np = depot;
                    }
                }
                _ => {}
            }
            out[encode(nr, nc, np, dest)] = 1.0;
        }
    }
    let kernel = Kernel::new(n, na, p)?;
    let mut rng = rng::stream(seed, 0x7a1);
    let utility = uniform_table(&mut rng, n * na);
    TabularCMDP::new(kernel, reward, vec![utility], DEFAULT_GAMMA, rho, vec![0.0])
}
