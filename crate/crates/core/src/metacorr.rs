//! Meta-analysis over a corpus of historical experiments.
//!
//! Builds one independent record per experiment, identifies metric pairs
//! whose impacts move together beyond what user-level correlation explains,
//! fits the cross-metric effect relation on discovery-controlled subsets,
//! and combines everything into the Bayesian early indicator for
//! underpowered metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::RangeSummary;
use crate::statscore::{
    benjamini_hochberg, chi_squared_sf, delta_percent, normal_pdf, null_cosig_proportion, ols,
    simple_regression_leverage, StatsError, TwoGroupPrior,
};

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("insufficient discoveries: {0} experiments moved the indicator metric, need {1}")]
    InsufficientDiscoveries(usize, usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type MetaResult<T> = Result<T, MetaError>;

// ---------------------------------------------------------------------------
// History records
// ---------------------------------------------------------------------------

/// Per-metric results of one historical experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricHistory {
    pub delta_pct: f64,
    /// Normalized effect `delta = delta_pct / sigma`, whose sampling variance
    /// is `1 / n_e` under the null.
    pub delta_norm: f64,
    /// Effective sample size `1 / (1/n_t + 1/n_c)`.
    pub n_e: f64,
    pub p_value: f64,
}

/// One experiment's contribution to the history: its maximum-power iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentHistoryRecord {
    pub experiment_id: String,
    pub iteration: u32,
    pub days: u32,
    pub powered: bool,
    pub metrics: BTreeMap<String, MetricHistory>,
}

/// Treatment/control cross-day summaries for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummaries {
    pub treatment: RangeSummary,
    pub control: RangeSummary,
}

/// Stored analysis output of one experiment iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummaries {
    pub iteration: u32,
    pub days: u32,
    pub metrics: BTreeMap<String, ArmSummaries>,
    /// Cumulative effective sample size per day 1..=days, for projection.
    #[serde(default)]
    pub ne_daily: Vec<f64>,
}

/// All iterations of one historical experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentArchive {
    pub experiment_id: String,
    pub iterations: Vec<IterationSummaries>,
}

fn effective_sample_size(n_t: u64, n_c: u64) -> f64 {
    if n_t == 0 || n_c == 0 {
        return 0.0;
    }
    1.0 / (1.0 / n_t as f64 + 1.0 / n_c as f64)
}

fn iteration_power(it: &IterationSummaries) -> f64 {
    it.metrics
        .values()
        .map(|a| effective_sample_size(a.treatment.n, a.control.n))
        .fold(0.0, f64::max)
}

/// One record per experiment from its maximum-power iteration, excluding
/// experiments shorter than `min_days`. Returns the records plus the ids of
/// excluded experiments.
pub fn build_history(
    archives: &[ExperimentArchive],
    min_days: u32,
) -> (Vec<ExperimentHistoryRecord>, Vec<String>) {
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for archive in archives {
        let best = archive
            .iterations
            .iter()
            .filter(|it| it.days >= min_days)
            .max_by(|a, b| {
                iteration_power(a)
                    .total_cmp(&iteration_power(b))
                    .then(a.days.cmp(&b.days))
            });
        let Some(it) = best else {
            excluded.push(archive.experiment_id.clone());
            continue;
        };
        let mut metrics = BTreeMap::new();
        let mut powered = true;
        for (metric_id, arms) in &it.metrics {
            let Ok(est) = delta_percent(&arms.treatment, &arms.control) else {
                powered = false;
                continue;
            };
            let n_e = effective_sample_size(est.n_t, est.n_c);
            let delta_norm = if n_e > 0.0 {
                est.t_stat / n_e.sqrt()
            } else {
                0.0
            };
            metrics.insert(
                metric_id.clone(),
                MetricHistory {
                    delta_pct: est.delta_pct,
                    delta_norm,
                    n_e,
                    p_value: est.p_value,
                },
            );
        }
        records.push(ExperimentHistoryRecord {
            experiment_id: archive.experiment_id.clone(),
            iteration: it.iteration,
            days: it.days,
            powered,
            metrics,
        });
    }
    (records, excluded)
}

// ---------------------------------------------------------------------------
// Co-movement
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComovementResult {
    pub metric_x: String,
    pub metric_y: String,
    pub user_level_rho: f64,
    /// Expected co-significance proportion under the correlated null.
    pub expected_proportion: f64,
    /// Fraction of Y-significant experiments where X is also significant.
    pub observed_proportion: f64,
    pub conditioning_count: usize,
    pub stat: f64,
    /// One-sided p for observed > expected.
    pub p_value: f64,
    pub elevated: bool,
    /// Ranking criterion across candidate pairs: the chi-squared statistic.
    pub ranking_score: f64,
}

const MIN_CONDITIONING: usize = 30;
const NULL_COSIG_SIMS: u64 = 100_000;

/// Tests whether X is significant more often than the correlated null
/// predicts, among experiments where Y is significant.
pub fn comovement(
    history: &[ExperimentHistoryRecord],
    metric_x: &str,
    metric_y: &str,
    user_level_rho: f64,
    alpha: f64,
    seed: u64,
) -> MetaResult<ComovementResult> {
    let mut m = 0usize;
    let mut joint = 0usize;
    for record in history {
        let (Some(x), Some(y)) = (record.metrics.get(metric_x), record.metrics.get(metric_y))
        else {
            continue;
        };
        if y.p_value < alpha {
            m += 1;
            if x.p_value < alpha {
                joint += 1;
            }
        }
    }
    if m < MIN_CONDITIONING {
        return Err(MetaError::InsufficientHistory(format!(
            "only {m} experiments have significant '{metric_y}', need {MIN_CONDITIONING}"
        )));
    }
    let expected = null_cosig_proportion(user_level_rho, alpha, NULL_COSIG_SIMS, seed)?;
    let observed = joint as f64 / m as f64;

    let e1 = expected * m as f64;
    let e0 = m as f64 - e1;
    let (stat, p_value) = if e1 <= 0.0 || e0 <= 0.0 {
        // Degenerate expectation (rho = +-1): elevation is impossible.
        (0.0, 1.0)
    } else {
        let o1 = joint as f64;
        let o0 = (m - joint) as f64;
        let stat = (o1 - e1).powi(2) / e1 + (o0 - e0).powi(2) / e0;
        let two_sided = chi_squared_sf(stat, 1.0);
        let p = if observed > expected {
            two_sided / 2.0
        } else {
            1.0 - two_sided / 2.0
        };
        (stat, p)
    };

    Ok(ComovementResult {
        metric_x: metric_x.to_string(),
        metric_y: metric_y.to_string(),
        user_level_rho,
        expected_proportion: expected,
        observed_proportion: observed,
        conditioning_count: m,
        stat,
        p_value,
        elevated: observed > expected && p_value < alpha,
        ranking_score: stat,
    })
}

/// Hypothesis-level conditionals approximated from observed co-significance,
/// corrected by the share the correlated null alone would produce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoSigConditionals {
    pub p_y1_given_x1: f64,
    pub p_y1_given_x0: f64,
}

pub fn estimate_conditionals(
    history: &[ExperimentHistoryRecord],
    metric_x: &str,
    metric_y: &str,
    user_level_rho: f64,
    alpha: f64,
    seed: u64,
) -> MetaResult<CoSigConditionals> {
    let mut x_sig = 0usize;
    let mut x_sig_y_sig = 0usize;
    let mut x_non = 0usize;
    let mut x_non_y_sig = 0usize;
    for record in history {
        let (Some(x), Some(y)) = (record.metrics.get(metric_x), record.metrics.get(metric_y))
        else {
            continue;
        };
        if x.p_value < alpha {
            x_sig += 1;
            if y.p_value < alpha {
                x_sig_y_sig += 1;
            }
        } else {
            x_non += 1;
            if y.p_value < alpha {
                x_non_y_sig += 1;
            }
        }
    }
    if x_sig < 10 || x_non < 10 {
        return Err(MetaError::InsufficientHistory(format!(
            "need both strata populated: {x_sig} X-significant, {x_non} X-nonsignificant"
        )));
    }
    let null_share = null_cosig_proportion(user_level_rho, alpha, NULL_COSIG_SIMS, seed)?;
    let raw1 = x_sig_y_sig as f64 / x_sig as f64;
    let raw0 = x_non_y_sig as f64 / x_non as f64;
    Ok(CoSigConditionals {
        p_y1_given_x1: (raw1 - null_share).max(0.0),
        p_y1_given_x0: (raw0 - alpha).max(0.0),
    })
}

// ---------------------------------------------------------------------------
// Cross-metric effect relation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRelationFit {
    pub metric_x: String,
    pub metric_y: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// (experiment id, delta_x, delta_y) actually used in the final fit.
    pub points_used: Vec<(String, f64, f64)>,
    pub outliers_removed: Vec<String>,
}

const MIN_DISCOVERIES: usize = 10;
const STUDENTIZED_CUTOFF: f64 = 3.0;

/// Regression of `delta_Y` on `delta_X` over the experiments that moved X
/// (Benjamini-Hochberg at level `q`), with one studentized-residual outlier
/// pass. Refusing to fit without enough discoveries avoids the
/// spurious-correlation regime of null-dominated corpora.
pub fn fit_delta_relation(
    history: &[ExperimentHistoryRecord],
    metric_x: &str,
    metric_y: &str,
    q: f64,
) -> MetaResult<DeltaRelationFit> {
    let mut ids = Vec::new();
    let mut p_values = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for record in history {
        let (Some(x), Some(y)) = (record.metrics.get(metric_x), record.metrics.get(metric_y))
        else {
            continue;
        };
        ids.push(record.experiment_id.clone());
        p_values.push(x.p_value);
        xs.push(x.delta_pct);
        ys.push(y.delta_pct);
    }
    let selected = benjamini_hochberg(&p_values, q)?;
    if selected.len() < MIN_DISCOVERIES {
        return Err(MetaError::InsufficientDiscoveries(
            selected.len(),
            MIN_DISCOVERIES,
        ));
    }

    let fit_subset = |keep: &[usize]| -> MetaResult<(crate::statscore::OlsFit, Vec<f64>)> {
        let rows: Vec<Vec<f64>> = keep.iter().map(|&i| vec![1.0, xs[i]]).collect();
        let y: Vec<f64> = keep.iter().map(|&i| ys[i]).collect();
        let fit = ols(&rows, &y)?;
        let x_col: Vec<f64> = keep.iter().map(|&i| xs[i]).collect();
        Ok((fit, x_col))
    };

    let (first_fit, x_col) = fit_subset(&selected)?;
    let n = selected.len();
    let dof = (n - 2).max(1) as f64;
    let s_sq: f64 = first_fit.residuals.iter().map(|r| r * r).sum::<f64>() / dof;
    let leverage = simple_regression_leverage(&x_col);
    let mut keep = Vec::new();
    let mut outliers = Vec::new();
    for (pos, &idx) in selected.iter().enumerate() {
        let denom = (s_sq * (1.0_f64 - leverage[pos]).max(1e-12)).sqrt();
        let studentized = if denom > 0.0 {
            first_fit.residuals[pos] / denom
        } else {
            0.0
        };
        if studentized.abs() > STUDENTIZED_CUTOFF {
            outliers.push(ids[idx].clone());
        } else {
            keep.push(idx);
        }
    }

    let (final_fit, kept_idx) = if outliers.is_empty() || keep.len() < MIN_DISCOVERIES {
        (first_fit, selected)
    } else {
        let (refit, _) = fit_subset(&keep)?;
        (refit, keep)
    };

    Ok(DeltaRelationFit {
        metric_x: metric_x.to_string(),
        metric_y: metric_y.to_string(),
        slope: final_fit.coefficients[1],
        intercept: final_fit.coefficients[0],
        r_squared: final_fit.r_squared,
        points_used: kept_idx
            .iter()
            .map(|&i| (ids[i].clone(), xs[i], ys[i]))
            .collect(),
        outliers_removed: outliers,
    })
}

// ---------------------------------------------------------------------------
// Early indicator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyIndicatorInputs {
    /// Observed normalized effect of the indicator metric X.
    pub delta_x: f64,
    /// Current effective sample size of X.
    pub ne_x: f64,
    /// Observed normalized effect of the underpowered metric Y.
    pub delta_y: f64,
    /// Predicted effective sample size of Y at full run length.
    pub ne_y_pred: f64,
    pub prior_x: TwoGroupPrior,
    pub prior_y: TwoGroupPrior,
    pub conditionals: CoSigConditionals,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyIndicatorResult {
    /// P(H1 for Y | delta_X, delta_Y).
    pub posterior: f64,
    /// P(H1 for X | delta_X): the single-metric posterior of the indicator.
    pub p_h1x_given_delta_x: f64,
    /// P(H1 for Y | delta_X): the prior mixture before seeing delta_Y.
    pub prior_mixture: f64,
    pub flag: bool,
    pub inputs: EarlyIndicatorInputs,
}

/// Posterior probability that the underpowered metric Y is truly impacted,
/// combining its own early reading with the indicator metric X.
///
/// `P(H1_X | delta_x)` comes from the two-group model on X; the conditionals
/// mix it into a prior for Y, and Y's own likelihood ratio (at the predicted
/// effective sample size) updates it.
pub fn early_indicator(inputs: EarlyIndicatorInputs) -> MetaResult<EarlyIndicatorResult> {
    let EarlyIndicatorInputs {
        delta_x,
        ne_x,
        delta_y,
        ne_y_pred,
        prior_x,
        prior_y,
        conditionals,
        threshold,
    } = inputs;
    if ne_x <= 0.0 || ne_y_pred <= 0.0 {
        return Err(MetaError::InvalidInput(
            "effective sample sizes must be positive".into(),
        ));
    }
    for p in [
        conditionals.p_y1_given_x1,
        conditionals.p_y1_given_x0,
        prior_x.pi1,
        prior_y.pi1,
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(MetaError::InvalidInput(format!(
                "probability {p} outside [0,1]"
            )));
        }
    }
    if prior_x.v_sq < 0.0 || prior_y.v_sq < 0.0 {
        return Err(MetaError::InvalidInput(
            "effect-size variances must be non-negative".into(),
        ));
    }

    let s_x = 1.0 / ne_x;
    let lx1 = prior_x.pi1 * normal_pdf(delta_x, 0.0, s_x + prior_x.v_sq);
    let lx0 = (1.0 - prior_x.pi1) * normal_pdf(delta_x, 0.0, s_x);
    let p_h1x = if lx1 + lx0 > 0.0 {
        lx1 / (lx1 + lx0)
    } else {
        prior_x.pi1
    };

    let prior_mixture = conditionals.p_y1_given_x1 * p_h1x
        + conditionals.p_y1_given_x0 * (1.0 - p_h1x);

    let s_y = 1.0 / ne_y_pred;
    let ly1 = normal_pdf(delta_y, 0.0, s_y + prior_y.v_sq);
    let ly0 = normal_pdf(delta_y, 0.0, s_y);
    let numer = ly1 * prior_mixture;
    let denom = numer + ly0 * (1.0 - prior_mixture);
    let posterior = if denom > 0.0 {
        numer / denom
    } else {
        prior_mixture
    };

    Ok(EarlyIndicatorResult {
        posterior,
        p_h1x_given_delta_x: p_h1x,
        prior_mixture,
        flag: posterior > threshold,
        inputs,
    })
}

// ---------------------------------------------------------------------------
// Effective-sample-size projection
// ---------------------------------------------------------------------------

/// Extrapolates the effective sample size to `target_day` via a log-log
/// power-law fit, with the growth exponent clamped to [0, 1]: the sample
/// cannot shrink and cannot outgrow linear accrual on a fixed population.
pub fn project_ne(daily: &[f64], target_day: u32) -> MetaResult<f64> {
    if daily.len() < 3 {
        return Err(MetaError::InsufficientHistory(format!(
            "need at least 3 observed days, got {}",
            daily.len()
        )));
    }
    if daily.iter().any(|&v| v <= 0.0) {
        return Err(MetaError::InvalidInput(
            "effective sample sizes must be positive".into(),
        ));
    }
    if target_day == 0 {
        return Err(MetaError::InvalidInput("target day must be >= 1".into()));
    }
    let log_days: Vec<f64> = (1..=daily.len()).map(|d| (d as f64).ln()).collect();
    let log_ne: Vec<f64> = daily.iter().map(|v| v.ln()).collect();
    let rows: Vec<Vec<f64>> = log_days.iter().map(|&d| vec![1.0, d]).collect();
    let fit = ols(&rows, &log_ne)?;
    let b = fit.coefficients[1].clamp(0.0, 1.0);
    // Re-anchor the intercept after clamping.
    let mean_y = log_ne.iter().sum::<f64>() / log_ne.len() as f64;
    let mean_x = log_days.iter().sum::<f64>() / log_days.len() as f64;
    let a = mean_y - b * mean_x;
    Ok((a + b * (target_day as f64).ln()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::DayRange;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn summary(variant: &str, metric: &str, n: u64, mean: f64, var: f64) -> RangeSummary {
        let nf = n as f64;
        RangeSummary {
            experiment_id: "e".into(),
            variant: variant.into(),
            metric_id: metric.into(),
            range: DayRange::new(1, 14).unwrap(),
            n,
            sum: mean * nf,
            sum_sq: (var + mean * mean) * nf,
        }
    }

    fn archive_with(
        id: &str,
        iterations: Vec<(u32, u32, f64, u64)>, // (iteration, days, delta, n per arm)
    ) -> ExperimentArchive {
        ExperimentArchive {
            experiment_id: id.into(),
            iterations: iterations
                .into_iter()
                .map(|(iteration, days, delta, n)| {
                    let mut metrics = BTreeMap::new();
                    metrics.insert(
                        "x".to_string(),
                        ArmSummaries {
                            treatment: summary("treatment", "x", n, 1.0 + delta, 1.0),
                            control: summary("control", "x", n, 1.0, 1.0),
                        },
                    );
                    IterationSummaries {
                        iteration,
                        days,
                        metrics,
                        ne_daily: Vec::new(),
                    }
                })
                .collect(),
        }
    }

    /// Synthetic history with planted normalized effects and noise
    /// correlation `rho` between the two metrics' estimates.
    fn synthetic_history(
        m: usize,
        pi1: f64,
        v: f64,
        beta1: f64,
        rho: f64,
        n_e: f64,
        seed: u64,
    ) -> Vec<ExperimentHistoryRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tail = (1.0 - rho * rho).sqrt();
        (0..m)
            .map(|i| {
                let truly_moved = rng.gen::<f64>() < pi1;
                let theta_x = if truly_moved {
                    rng.sample::<f64, _>(StandardNormal) * v
                } else {
                    0.0
                };
                let theta_y = beta1 * theta_x;
                let zx: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                let zy = rho * zx + tail * e;
                let se = 1.0 / n_e.sqrt();
                let dx = theta_x + zx * se;
                let dy = theta_y + zy * se;
                let mut metrics = BTreeMap::new();
                for (name, d) in [("x", dx), ("y", dy)] {
                    metrics.insert(
                        name.to_string(),
                        MetricHistory {
                            delta_pct: d,
                            delta_norm: d,
                            n_e,
                            p_value: crate::statscore::normal_two_sided_p(d * n_e.sqrt()),
                        },
                    );
                }
                ExperimentHistoryRecord {
                    experiment_id: format!("exp{i}"),
                    iteration: 1,
                    days: 14,
                    powered: true,
                    metrics,
                }
            })
            .collect()
    }

    #[test]
    fn empty_corpus_gives_empty_history() {
        let (records, excluded) = build_history(&[], 7);
        assert!(records.is_empty());
        assert!(excluded.is_empty());
    }

    #[test]
    fn max_power_iteration_selected_and_short_ones_excluded() {
        let archive = archive_with("a", vec![(1, 14, 0.05, 1_000), (2, 14, 0.02, 50_000)]);
        let (records, _) = build_history(&[archive], 7);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].iteration, 2, "higher-power iteration wins");

        let short = archive_with("b", vec![(1, 3, 0.01, 1_000)]);
        let (records, excluded) = build_history(&[short], 7);
        assert!(records.is_empty());
        assert_eq!(excluded, vec!["b"]);
    }

    #[test]
    fn record_normalization_is_consistent() {
        let archive = archive_with("a", vec![(1, 14, 0.1, 10_000)]);
        let (records, _) = build_history(&[archive], 7);
        let m = &records[0].metrics["x"];
        // z-statistic reconstructed from the normalized effect.
        let z = m.delta_norm * m.n_e.sqrt();
        let p = crate::statscore::normal_two_sided_p(z);
        assert!((p - m.p_value).abs() < 1e-9);
        assert!((m.n_e - 5_000.0).abs() < 1e-9);
    }

    #[test]
    fn comovement_null_is_not_elevated() {
        // Pure null corpus, rho = 0: observed proportion ~ alpha.
        let history = synthetic_history(4_000, 0.0, 0.0, 0.0, 0.0, 10_000.0, 5);
        let r = comovement(&history, "x", "y", 0.0, 0.05, 9).unwrap();
        assert!((r.observed_proportion - 0.05).abs() < 0.04, "{r:?}");
        assert!(!r.elevated, "{r:?}");
    }

    #[test]
    fn comovement_planted_joint_effects_are_elevated() {
        let history = synthetic_history(400, 0.6, 0.08, 1.0, 0.0, 10_000.0, 6);
        let r = comovement(&history, "x", "y", 0.0, 0.05, 9).unwrap();
        assert!(r.elevated, "{r:?}");
        assert!(r.ranking_score > 10.0);
    }

    #[test]
    fn comovement_identical_metric_not_elevated() {
        // X == Y with rho = 1: observed = expected = 1.
        let mut history = synthetic_history(300, 0.5, 0.1, 1.0, 0.0, 10_000.0, 7);
        for record in &mut history {
            let x = record.metrics["x"].clone();
            record.metrics.insert("y".into(), x);
        }
        let r = comovement(&history, "x", "y", 1.0, 0.05, 9).unwrap();
        assert_eq!(r.observed_proportion, 1.0);
        assert!(!r.elevated, "{r:?}");
    }

    #[test]
    fn comovement_needs_conditioning_mass() {
        let history = synthetic_history(40, 0.0, 0.0, 0.0, 0.0, 100.0, 8);
        assert!(matches!(
            comovement(&history, "x", "y", 0.0, 0.05, 9),
            Err(MetaError::InsufficientHistory(_))
        ));
    }

    #[test]
    fn delta_relation_recovers_planted_slope() {
        let history = synthetic_history(200, 0.5, 0.1, 0.5, 0.0, 50_000.0, 11);
        let fit = fit_delta_relation(&history, "x", "y", 0.05).unwrap();
        assert!(
            (fit.slope - 0.5).abs() < 0.1,
            "slope {} should be near 0.5",
            fit.slope
        );
    }

    #[test]
    fn delta_relation_refuses_null_corpus() {
        let history = synthetic_history(200, 0.0, 0.0, 0.0, 0.0, 10_000.0, 12);
        assert!(matches!(
            fit_delta_relation(&history, "x", "y", 0.05),
            Err(MetaError::InsufficientDiscoveries(_, _))
        ));
    }

    #[test]
    fn delta_relation_removes_planted_outlier() {
        let mut history = synthetic_history(200, 0.6, 0.1, 0.5, 0.0, 50_000.0, 13);
        // Corrupt the strongest discovery's Y reading.
        let idx = history
            .iter()
            .enumerate()
            .min_by(|a, b| {
                a.1.metrics["x"]
                    .p_value
                    .total_cmp(&b.1.metrics["x"].p_value)
            })
            .map(|(i, _)| i)
            .unwrap();
        history[idx].metrics.get_mut("y").unwrap().delta_pct = 5.0;
        let fit = fit_delta_relation(&history, "x", "y", 0.05).unwrap();
        assert_eq!(fit.outliers_removed.len(), 1);
        assert!(
            (fit.slope - 0.5).abs() < 0.1,
            "slope {} after outlier removal",
            fit.slope
        );
    }

    #[test]
    fn early_indicator_uninformative_conditionals_match_single_metric() {
        let prior_y = TwoGroupPrior {
            pi1: 0.3,
            v_sq: 0.01,
        };
        let r = early_indicator(EarlyIndicatorInputs {
            delta_x: 0.08,
            ne_x: 10_000.0,
            delta_y: 0.02,
            ne_y_pred: 4_000.0,
            prior_x: TwoGroupPrior {
                pi1: 0.4,
                v_sq: 0.02,
            },
            prior_y,
            conditionals: CoSigConditionals {
                p_y1_given_x1: prior_y.pi1,
                p_y1_given_x0: prior_y.pi1,
            },
            threshold: 0.6,
        })
        .unwrap();
        // Single-metric objective posterior for Y.
        let s_y = 1.0 / 4_000.0;
        let l1 = prior_y.pi1 * normal_pdf(0.02, 0.0, s_y + prior_y.v_sq);
        let l0 = (1.0 - prior_y.pi1) * normal_pdf(0.02, 0.0, s_y);
        let single = l1 / (l1 + l0);
        assert!((r.posterior - single).abs() < 1e-12);
    }

    #[test]
    fn early_indicator_zero_delta_y_with_huge_ne_kills_posterior() {
        let r = early_indicator(EarlyIndicatorInputs {
            delta_x: 0.2,
            ne_x: 10_000.0,
            delta_y: 0.0,
            ne_y_pred: 1e9,
            prior_x: TwoGroupPrior {
                pi1: 0.5,
                v_sq: 0.04,
            },
            prior_y: TwoGroupPrior {
                pi1: 0.5,
                v_sq: 0.04,
            },
            conditionals: CoSigConditionals {
                p_y1_given_x1: 0.9,
                p_y1_given_x0: 0.1,
            },
            threshold: 0.6,
        })
        .unwrap();
        assert!(r.posterior < 0.01, "posterior {}", r.posterior);
        assert!(!r.flag);
    }

    #[test]
    fn early_indicator_monotone_in_indicator_strength() {
        let mut previous = -1.0;
        for i in 0..20 {
            let delta_x = i as f64 * 0.01;
            let r = early_indicator(EarlyIndicatorInputs {
                delta_x,
                ne_x: 10_000.0,
                delta_y: 0.01,
                ne_y_pred: 2_000.0,
                prior_x: TwoGroupPrior {
                    pi1: 0.3,
                    v_sq: 0.01,
                },
                prior_y: TwoGroupPrior {
                    pi1: 0.3,
                    v_sq: 0.01,
                },
                conditionals: CoSigConditionals {
                    p_y1_given_x1: 0.8,
                    p_y1_given_x0: 0.05,
                },
                threshold: 0.6,
            })
            .unwrap();
            assert!(
                r.posterior >= previous - 1e-12,
                "posterior not monotone at |delta_x| = {delta_x}"
            );
            assert!((0.0..=1.0).contains(&r.posterior));
            previous = r.posterior;
        }
    }

    #[test]
    fn early_indicator_tiny_ne_y_returns_prior_mixture() {
        let r = early_indicator(EarlyIndicatorInputs {
            delta_x: 0.1,
            ne_x: 10_000.0,
            delta_y: 0.5,
            ne_y_pred: 1e-9,
            prior_x: TwoGroupPrior {
                pi1: 0.4,
                v_sq: 0.02,
            },
            prior_y: TwoGroupPrior {
                pi1: 0.4,
                v_sq: 0.02,
            },
            conditionals: CoSigConditionals {
                p_y1_given_x1: 0.7,
                p_y1_given_x0: 0.1,
            },
            threshold: 0.6,
        })
        .unwrap();
        assert!(
            (r.posterior - r.prior_mixture).abs() < 1e-6,
            "uninformative delta_y should return the prior mixture"
        );
    }

    #[test]
    fn project_ne_constant_and_linear() {
        let constant = vec![500.0; 10];
        let p = project_ne(&constant, 30).unwrap();
        assert!((p - 500.0).abs() < 1e-6);

        let linear: Vec<f64> = (1..=10).map(|d| 100.0 * d as f64).collect();
        let p = project_ne(&linear, 30).unwrap();
        assert!((p - 3_000.0).abs() < 1.0, "p = {p}");

        assert!(project_ne(&[1.0, 2.0], 30).is_err());
        assert!(project_ne(&[1.0, 0.0, 2.0], 30).is_err());
    }

    #[test]
    fn project_ne_clamps_super_linear_growth() {
        let quadratic: Vec<f64> = (1..=10).map(|d| (d * d) as f64).collect();
        let p = project_ne(&quadratic, 30).unwrap();
        // Clamped exponent 1 from the last anchor: bounded by linear growth.
        assert!(p < 900.0 * 1.5, "p = {p}");
    }
}
