//! Reusable statistical primitives.
//!
//! Delta-method lift inference, chi-squared goodness of fit, normal-theory
//! t-tests, Benjamini-Hochberg, ordinary least squares, the two-group EM
//! prior fit, and the correlated-null co-significance simulation.

mod cosig;
mod em;
mod ols;

pub use cosig::null_cosig_proportion;
pub use em::{em_two_group, EmFit, TwoGroupPrior};
pub use ols::{ols, simple_regression_leverage, OlsFit};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

use crate::datamodel::RangeSummary;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("undefined lift: control mean is zero")]
    UndefinedLift,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("rank-deficient design: collinear column(s) {columns:?}")]
    RankDeficient { columns: Vec<usize> },
}

pub type StatsResult<T> = Result<T, StatsError>;

// ---------------------------------------------------------------------------
// Distribution helpers
// ---------------------------------------------------------------------------

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// P(Z <= z) for the standard normal.
pub fn normal_cdf(z: f64) -> f64 {
    std_normal().cdf(z)
}

/// P(Z > z) for the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    std_normal().sf(z)
}

/// Two-sided normal p-value for a z statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    (2.0 * normal_sf(z.abs())).min(1.0)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Normal density with mean `mu` and variance `var`.
pub fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return if x == mu { f64::INFINITY } else { 0.0 };
    }
    let d = x - mu;
    (-(d * d) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Upper tail P(X > x) of a chi-squared distribution with `df` degrees of
/// freedom.
pub fn chi_squared_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).expect("valid dof").sf(x)
}

// ---------------------------------------------------------------------------
// Delta-method percent lift
// ---------------------------------------------------------------------------

/// Percent lift with its Delta-method variance and normal-theory test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    /// Percent lift: mean_t / mean_c - 1.
    pub delta_pct: f64,
    /// Delta-method variance of the lift.
    pub variance: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub n_t: u64,
    pub n_c: u64,
    pub mean_t: f64,
    pub mean_c: f64,
    pub var_t: f64,
    pub var_c: f64,
}

/// Percent-lift inference between a treatment and control summary.
///
/// `var(delta) = var_t / (mean_c^2 n_t) + var_c mean_t^2 / (mean_c^4 n_c)`,
/// with per-arm sample variances computed from the carried sums. The test is
/// the normal approximation; experiment populations are large in this domain.
pub fn delta_percent(t: &RangeSummary, c: &RangeSummary) -> StatsResult<DeltaEstimate> {
    if t.n < 2 || c.n < 2 {
        return Err(StatsError::InsufficientData(format!(
            "need n >= 2 per arm, got n_t={} n_c={}",
            t.n, c.n
        )));
    }
    let mean_t = t.mean();
    let mean_c = c.mean();
    if mean_c == 0.0 {
        return Err(StatsError::UndefinedLift);
    }
    let var_t = t.sample_variance();
    let var_c = c.sample_variance();
    let delta_pct = mean_t / mean_c - 1.0;
    let variance = var_t / (mean_c * mean_c * t.n as f64)
        + var_c * mean_t * mean_t / (mean_c.powi(4) * c.n as f64);
    let (t_stat, p_value) = if variance > 0.0 {
        let z = delta_pct / variance.sqrt();
        (z, normal_two_sided_p(z))
    } else if delta_pct == 0.0 {
        (0.0, 1.0)
    } else {
        (f64::INFINITY.copysign(delta_pct), 0.0)
    };
    Ok(DeltaEstimate {
        delta_pct,
        variance,
        t_stat,
        p_value,
        n_t: t.n,
        n_c: c.n,
        mean_t,
        mean_c,
        var_t,
        var_c,
    })
}

// ---------------------------------------------------------------------------
// Chi-squared goodness of fit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub stat: f64,
    pub p_value: f64,
    pub dof: u32,
    pub expected: Vec<f64>,
}

/// Chi-squared goodness of fit of observed counts against expected fractions.
///
/// `stat = sum_v (n_v - E_v)^2 / E_v` with `E_v = N * r_v`; the statistic has
/// `len - 1` degrees of freedom under the null.
pub fn chi_squared_gof(observed: &[u64], expected_fractions: &[f64]) -> StatsResult<GofResult> {
    if observed.len() != expected_fractions.len() {
        return Err(StatsError::InvalidArgument(format!(
            "observed ({}) and fractions ({}) differ in length",
            observed.len(),
            expected_fractions.len()
        )));
    }
    if observed.len() < 2 {
        return Err(StatsError::InvalidArgument(
            "need at least two categories".into(),
        ));
    }
    if expected_fractions.iter().any(|&f| f <= 0.0) {
        return Err(StatsError::InvalidArgument(
            "expected fractions must be strictly positive".into(),
        ));
    }
    let total_f: f64 = expected_fractions.iter().sum();
    if (total_f - 1.0).abs() > 1e-9 {
        return Err(StatsError::InvalidArgument(format!(
            "expected fractions must sum to 1, got {total_f}"
        )));
    }
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(StatsError::InsufficientData(
            "zero total observed count".into(),
        ));
    }
    let n = n as f64;
    let expected: Vec<f64> = expected_fractions.iter().map(|f| f * n).collect();
    let stat: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum();
    let dof = (observed.len() - 1) as u32;
    Ok(GofResult {
        stat,
        p_value: chi_squared_sf(stat, dof as f64),
        dof,
        expected,
    })
}

// ---------------------------------------------------------------------------
// Normal-theory two-sample test on estimates with variances
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchOutcome {
    pub t: f64,
    pub p: f64,
    /// Set when both variances are zero and the test degenerates.
    pub degenerate: bool,
}

/// Two-sample z-style test: `t = (a - b) / sqrt(var_a + var_b)` with a
/// two-sided normal p-value. Variance *bounds* may be passed; inflated
/// variances only make the test conservative.
pub fn welch_t(a: f64, var_a: f64, b: f64, var_b: f64) -> StatsResult<WelchOutcome> {
    if var_a < 0.0 || var_b < 0.0 {
        return Err(StatsError::InvalidArgument(
            "variances must be non-negative".into(),
        ));
    }
    let pooled = var_a + var_b;
    if pooled == 0.0 {
        return Ok(if a == b {
            WelchOutcome {
                t: 0.0,
                p: 1.0,
                degenerate: true,
            }
        } else {
            WelchOutcome {
                t: f64::INFINITY.copysign(a - b),
                p: 0.0,
                degenerate: true,
            }
        });
    }
    let t = (a - b) / pooled.sqrt();
    Ok(WelchOutcome {
        t,
        p: normal_two_sided_p(t),
        degenerate: false,
    })
}

// ---------------------------------------------------------------------------
// Benjamini-Hochberg
// ---------------------------------------------------------------------------

/// Standard step-up rule at FDR level `q`; returns the original indices of
/// the discoveries, sorted ascending.
pub fn benjamini_hochberg(p_values: &[f64], q: f64) -> StatsResult<Vec<usize>> {
    if !(0.0..1.0).contains(&q) || q == 0.0 {
        return Err(StatsError::InvalidArgument(format!(
            "q must be in (0,1), got {q}"
        )));
    }
    if p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(StatsError::InvalidArgument(
            "p-values must lie in [0,1]".into(),
        ));
    }
    let m = p_values.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut cutoff_rank = None;
    for (rank, &idx) in order.iter().enumerate() {
        let threshold = (rank + 1) as f64 * q / m as f64;
        if p_values[idx] <= threshold {
            cutoff_rank = Some(rank);
        }
    }
    let mut discoveries: Vec<usize> = match cutoff_rank {
        Some(r) => order[..=r].to_vec(),
        None => Vec::new(),
    };
    discoveries.sort_unstable();
    Ok(discoveries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::DayRange;

    fn summary(n: u64, sum: f64, sum_sq: f64) -> RangeSummary {
        RangeSummary {
            experiment_id: "exp".into(),
            variant: "v".into(),
            metric_id: "m".into(),
            range: DayRange::new(1, 7).unwrap(),
            n,
            sum,
            sum_sq,
        }
    }

    /// Independent chi-squared(1) upper-tail oracle: P(X > x) = erfc(sqrt(x/2)).
    fn chi1_tail_oracle(x: f64) -> f64 {
        libm::erfc((x / 2.0).sqrt())
    }

    /// Independent standard-normal two-sided oracle: p = erfc(|z|/sqrt(2)).
    fn normal_two_sided_oracle(z: f64) -> f64 {
        libm::erfc(z.abs() / std::f64::consts::SQRT_2)
    }

    #[test]
    fn distribution_helpers_match_erfc_oracles() {
        for &x in &[0.5, 1.0, 2.0, 3.84, 4.0, 10.83] {
            let ours = chi_squared_sf(x, 1.0);
            let oracle = chi1_tail_oracle(x);
            assert!((ours - oracle).abs() < 1e-10, "x={x}: {ours} vs {oracle}");
        }
        for &z in &[0.1, 1.0, 1.96, 3.0] {
            let ours = normal_two_sided_p(z);
            let oracle = normal_two_sided_oracle(z);
            assert!((ours - oracle).abs() < 1e-10, "z={z}: {ours} vs {oracle}");
        }
    }

    #[test]
    fn delta_identical_arms_is_zero() {
        let t = summary(100, 250.0, 700.0);
        let c = summary(100, 250.0, 700.0);
        let d = delta_percent(&t, &c).unwrap();
        assert_eq!(d.delta_pct, 0.0);
        assert_eq!(d.t_stat, 0.0);
        assert!((d.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_degenerate_variance() {
        // Every control user contributes exactly 2.0, every treatment user 2.2.
        let n = 50u64;
        let c = summary(n, 2.0 * n as f64, 4.0 * n as f64);
        let t = summary(n, 2.2 * n as f64, 4.84 * n as f64);
        let d = delta_percent(&t, &c).unwrap();
        assert!((d.delta_pct - 0.10).abs() < 1e-12);
        assert!(d.variance.abs() < 1e-12);
        assert_eq!(d.p_value, 0.0);
    }

    #[test]
    fn delta_errors() {
        let c = summary(100, 0.0, 0.0);
        let t = summary(100, 10.0, 2.0);
        assert!(matches!(
            delta_percent(&t, &c),
            Err(StatsError::UndefinedLift)
        ));
        let tiny = summary(1, 5.0, 25.0);
        assert!(matches!(
            delta_percent(&tiny, &t),
            Err(StatsError::InsufficientData(_))
        ));
    }

    #[test]
    fn delta_t_consistency() {
        let t = summary(1000, 1100.0, 1400.0);
        let c = summary(1000, 1000.0, 1200.0);
        let d = delta_percent(&t, &c).unwrap();
        assert!((d.t_stat - d.delta_pct / d.variance.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gof_balanced_and_exact_fit() {
        let g = chi_squared_gof(&[5000, 5000], &[0.5, 0.5]).unwrap();
        assert_eq!(g.stat, 0.0);
        assert!((g.p_value - 1.0).abs() < 1e-12);

        let g = chi_squared_gof(&[9000, 1000], &[0.9, 0.1]).unwrap();
        assert_eq!(g.stat, 0.0);
    }

    #[test]
    fn gof_spot_value_5100_4900() {
        // (5100-5000)^2/5000 * 2 = 4.0 exactly; p from the chi1 tail oracle.
        let g = chi_squared_gof(&[5100, 4900], &[0.5, 0.5]).unwrap();
        assert_eq!(g.stat, 4.0);
        let oracle = chi1_tail_oracle(4.0);
        assert!((oracle - 0.0455).abs() < 5e-4, "oracle sanity: {oracle}");
        assert!((g.p_value - oracle).abs() < 1e-10);
    }

    #[test]
    fn gof_errors() {
        assert!(chi_squared_gof(&[0, 0], &[0.5, 0.5]).is_err());
        assert!(chi_squared_gof(&[10, 10], &[1.0, 0.0]).is_err());
        assert!(chi_squared_gof(&[10, 10], &[0.6, 0.6]).is_err());
        assert!(chi_squared_gof(&[10], &[1.0]).is_err());
    }

    #[test]
    fn gof_scaling_invariance() {
        // Scaling all counts by an integer factor scales the statistic linearly.
        let base = chi_squared_gof(&[5100, 4900], &[0.5, 0.5]).unwrap();
        for k in [2u64, 3, 10] {
            let scaled = chi_squared_gof(&[5100 * k, 4900 * k], &[0.5, 0.5]).unwrap();
            assert!(
                (scaled.stat - k as f64 * base.stat).abs() < 1e-9 * k as f64,
                "k={k}"
            );
        }
    }

    #[test]
    fn welch_basics() {
        let eq = welch_t(0.5, 0.1, 0.5, 0.2).unwrap();
        assert_eq!(eq.t, 0.0);
        assert!((eq.p - 1.0).abs() < 1e-12);

        // a - b = 3 * sqrt(var_a + var_b) -> p ~ 0.0027
        let w = welch_t(3.0, 0.5, 0.0, 0.5).unwrap();
        assert!((w.t - 3.0).abs() < 1e-12);
        let oracle = normal_two_sided_oracle(3.0);
        assert!((oracle - 0.0027).abs() < 1e-4, "oracle sanity: {oracle}");
        assert!((w.p - oracle).abs() < 1e-12);
    }

    #[test]
    fn welch_degenerate() {
        let d = welch_t(1.0, 0.0, 0.0, 0.0).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.p, 0.0);
        let same = welch_t(1.0, 0.0, 1.0, 0.0).unwrap();
        assert!(same.degenerate);
        assert!((same.p - 1.0).abs() < 1e-12);
        assert!(welch_t(1.0, -0.1, 0.0, 0.5).is_err());
    }

    #[test]
    fn bh_examples() {
        // Brute-force step-up by definition: thresholds i*q/m.
        assert_eq!(
            benjamini_hochberg(&[0.01, 0.02, 0.04, 0.5], 0.05).unwrap(),
            vec![0, 1]
        );
        assert!(benjamini_hochberg(&[1.0, 1.0, 1.0], 0.05)
            .unwrap()
            .is_empty());
        assert_eq!(benjamini_hochberg(&[0.04], 0.05).unwrap(), vec![0]);
        assert!(benjamini_hochberg(&[], 0.05).unwrap().is_empty());
        assert!(benjamini_hochberg(&[0.5], 0.0).is_err());
        assert!(benjamini_hochberg(&[1.5], 0.05).is_err());
    }

    #[test]
    fn bh_unsorted_input_uses_original_indices() {
        let got = benjamini_hochberg(&[0.5, 0.01, 0.04, 0.02], 0.05).unwrap();
        assert_eq!(got, vec![1, 3]);
    }
}
