use alloc::vec;

use super::{AffineMap, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::mdp::{Kernel, TabularCMDP};

const LEFT_REWARD: f64 = 1.0;
const RIGHT_UTILITY: f64 = 2.0;
const END_BONUS: f64 = 40.0;

/// Native rewards lie in `[0, 40]`.
pub(super) const REWARD_MAP: AffineMap = AffineMap { offset: 0.0, scale: END_BONUS };
/// Native utilities lie in `[0, 2]`.
pub(super) const UTILITY_MAP: AffineMap = AffineMap { offset: 0.0, scale: RIGHT_UTILITY };

/// `N`-node chain with actions left (0) and right (1).
///
/// The agent moves in the chosen direction, or the opposite one with
/// probability `slip`; the ends of the chain are walls. Moving left pays
/// `(r, c) = (1, 0)`, moving right pays `(0, 2)`, and arriving at the last
/// node adds a reward bonus of 40. The chain has no random parts, so `seed`
/// does not change the instance.
pub fn n_chain(n: usize, _seed: u64, slip: f64) -> Result<TabularCMDP> {
    if n < 2 {
        return Err(Error::Parameter(alloc::format!("chain needs at least 2 nodes, got {n}")));
    }
    if !(0.0..=0.5).contains(&slip) {
        return Err(Error::Parameter(alloc::format!("slip {slip} outside [0, 0.5]")));
    }
    let na = 2;
    let mut p = vec![0.0; n * na * n];
    let mut reward = vec![0.0; n * na];
    let mut utility = vec![0.0; n * na];
    for s in 0..n {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(n - 1);
        for a in 0..na {
            let idx = s * na + a;
            let (p_left, p_right) = if a == 0 { (1.0 - slip, slip) } else { (slip, 1.0 - slip) };
            let row = &mut p[idx * n..(idx + 1) * n];
            row[left] += p_left;
            row[right] += p_right;
            let bonus = if right == n - 1 { END_BONUS } else { 0.0 };
            let raw_r = p_left * LEFT_REWARD + p_right * bonus;
            reward[idx] = REWARD_MAP.to_unit(raw_r);
            utility[idx] = UTILITY_MAP.to_unit(p_right * RIGHT_UTILITY);
        }
    }
    let kernel = Kernel::new(n, na, p)?;
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    TabularCMDP::new(kernel, reward, vec![utility], DEFAULT_GAMMA, rho, vec![0.0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_slip_is_deterministic() {
        let m = n_chain(5, 0, 0.0).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                assert!(m.kernel().row(s, a).iter().all(|&x| x == 0.0 || x == 1.0));
            }
        }
        // moving right from node 3 reaches the end: reward 40 -> 1.0, utility 2 -> 1.0
        assert_eq!(m.reward()[3 * 2 + 1], 1.0);
        assert_eq!(m.utilities()[0][3 * 2 + 1], 1.0);
        assert_eq!(m.reward()[0], 1.0 / 40.0);
    }

    #[test]
    fn slip_mixes_directions() {
        let m = n_chain(40, 0, 0.1).unwrap();
        let row = m.kernel().row(10, 1);
        assert!((row[11] - 0.9).abs() < 1e-15 && (row[9] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(n_chain(1, 0, 0.1).is_err());
        assert!(n_chain(5, 0, 0.7).is_err());
    }
}
