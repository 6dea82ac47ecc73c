//! Null co-significance simulation for user-level correlated metrics.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{normal_quantile, StatsError, StatsResult};
use crate::seeding::derive_seed;

const MIN_SIMULATIONS: u64 = 10_000;

/// Proportion of times metric X is falsely significant given metric Y is,
/// when both are null and their test statistics are correlated with `rho`.
///
/// Simulates paired z statistics `(z_x, z_y)` from a standard bivariate
/// normal with correlation `rho` and returns
/// `P(reject H0_X | reject H0_Y)` at two-sided level `alpha`.
/// Deterministic given `seed`: each replication draws from its own derived
/// stream, so the result is independent of execution order.
pub fn null_cosig_proportion(
    rho: f64,
    alpha: f64,
    n_sim: u64,
    seed: u64,
) -> StatsResult<f64> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(StatsError::InvalidArgument(format!(
            "correlation must lie in [-1,1], got {rho}"
        )));
    }
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(StatsError::InvalidArgument(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    if n_sim < MIN_SIMULATIONS {
        return Err(StatsError::InsufficientData(format!(
            "need at least {MIN_SIMULATIONS} simulations, got {n_sim}"
        )));
    }

    let z_crit = normal_quantile(1.0 - alpha / 2.0);
    let tail = (1.0 - rho * rho).sqrt();
    let mut y_rejects = 0u64;
    let mut joint_rejects = 0u64;
    for i in 0..n_sim {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x0c05, i]));
        let z_y: f64 = rng.sample(StandardNormal);
        let eps: f64 = rng.sample(StandardNormal);
        let z_x = rho * z_y + tail * eps;
        if z_y.abs() > z_crit {
            y_rejects += 1;
            if z_x.abs() > z_crit {
                joint_rejects += 1;
            }
        }
    }
    if y_rejects == 0 {
        return Ok(0.0);
    }
    Ok(joint_rejects as f64 / y_rejects as f64)
}
