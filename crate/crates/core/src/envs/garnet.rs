use alloc::vec;
use alloc::vec::Vec;

use super::{uniform_table, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::math;
use crate::mdp::{Kernel, TabularCMDP};
use crate::rng;

/// Random Garnet problem `G(sn, an)`: each kernel row is a Dirichlet(1, …, 1)
/// draw, reward and utility are i.i.d. uniform on `[0, 1]`, and the initial
/// distribution is uniform. The threshold is left at 0.
pub fn garnet(sn: usize, an: usize, seed: u64) -> Result<TabularCMDP> {
    if sn < 2 || an < 1 {
        return Err(Error::Parameter(alloc::format!("garnet needs sn >= 2 and an >= 1, got ({sn}, {an})")));
    }
    let mut rng = rng::stream(seed, 0x6a2);
    let mut p = Vec::with_capacity(sn * an * sn);
    for _ in 0..sn * an {
        // normalised exponentials are Dirichlet(1, ..., 1)
        let draws: Vec<f64> = (0..sn).map(|_| -math::ln(rng::open01(&mut rng))).collect();
        let total: f64 = draws.iter().sum();
        p.extend(draws.iter().map(|x| x / total));
    }
    let kernel = Kernel::new(sn, an, p)?;
    let reward = uniform_table(&mut rng, sn * an);
    let utility = uniform_table(&mut rng, sn * an);
    let rho = vec![1.0 / sn as f64; sn];
    TabularCMDP::new(kernel, reward, vec![utility], DEFAULT_GAMMA, rho, vec![0.0])
}
