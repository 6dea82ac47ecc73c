//! Triggered-analysis summaries and the analytic comparisons between
//! triggered and non-triggered (all-user) analysis.
//!
//! Once a user triggers in the analysis range, all her activity in the range
//! is counted, including days she does not trigger. Metrics are classified
//! as fully covered (contributions only on trigger days) or partially
//! covered, and cross-day totals decompose exactly into in-trigger and
//! off-trigger parts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{assign_variant, DayRange, IngestedLog, RangeSummary};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid range {range} for experiment of {duration} days")]
    RangeOutOfBounds { range: DayRange, duration: u32 },
    #[error("single-day mode requires a one-day range, got {0}")]
    NotSingleDay(DayRange),
    #[error("unknown metric '{0}'")]
    UnknownMetric(String),
    #[error("data integrity: {0}")]
    DataIntegrity(String),
    #[error("day {0} needs at least one preceding day for new/returned split")]
    NeedsPriorDay(u32),
}

pub type EngineResult<T> = Result<T, EngineError>;

/// Which population a summary describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnalysisMode {
    /// Users with at least one exposure in the range; totals over the range.
    Triggered,
    /// All targeted users regardless of exposure; totals over the range.
    AllUser,
    /// Users exposed on the (single) day; totals over that day only.
    SingleDay,
}

/// Per-variant populations and per-metric summaries for one (range, mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarySet {
    pub mode: AnalysisMode,
    pub range: DayRange,
    /// Population size per variant index (users, including zero-metric ones).
    pub variant_counts: Vec<u64>,
    /// (variant index, metric index) -> summary.
    pub summaries: BTreeMap<(u32, u32), RangeSummary>,
}

impl SummarySet {
    pub fn summary(&self, log: &IngestedLog, variant: &str, metric: &str) -> Option<&RangeSummary> {
        let v = log.config.variant_index(variant)? as u32;
        let m = log.metric_index(metric)?;
        self.summaries.get(&(v, m))
    }

    /// (treatment, control) pair for a metric, using the config's control.
    pub fn arm_pair(
        &self,
        log: &IngestedLog,
        variant: &str,
        metric: &str,
    ) -> Option<(&RangeSummary, &RangeSummary)> {
        let t = self.summary(log, variant, metric)?;
        let c = self.summary(log, log.config.control_label(), metric)?;
        Some((t, c))
    }
}

fn check_range(log: &IngestedLog, range: DayRange) -> EngineResult<()> {
    if range.end > log.config.duration_days {
        return Err(EngineError::RangeOutOfBounds {
            range,
            duration: log.config.duration_days,
        });
    }
    Ok(())
}

/// Builds per-(variant, metric) summaries for the requested population mode.
///
/// An empty population is not an error: summaries carry `n = 0`.
pub fn build_summaries(
    log: &IngestedLog,
    range: DayRange,
    mode: AnalysisMode,
) -> EngineResult<SummarySet> {
    check_range(log, range)?;
    if mode == AnalysisMode::SingleDay && range.start != range.end {
        return Err(EngineError::NotSingleDay(range));
    }

    let n_variants = log.n_variants();
    let n_metrics = log.metric_names.len();
    let mut variant_counts = vec![0u64; n_variants];
    let mut sums = vec![0.0f64; n_variants * n_metrics];
    let mut sum_sqs = vec![0.0f64; n_variants * n_metrics];

    for user in &log.users {
        let in_population = match mode {
            AnalysisMode::Triggered => user.triggered_in(range),
            AnalysisMode::SingleDay => user.triggered_on(range.start),
            AnalysisMode::AllUser => match &log.config.target_membership {
                Some(membership) => (range.start..=range.end)
                    .any(|d| membership.get(&d).is_some_and(|s| s.contains(&user.user_id))),
                None => true,
            },
        };
        if !in_population {
            continue;
        }
        let v = user.variant as usize;
        variant_counts[v] += 1;
        for series in &user.metrics {
            let m = series.metric as usize;
            let total: f64 = series
                .entries
                .iter()
                .filter(|e| range.contains(e.day))
                .map(|e| e.value)
                .sum();
            sums[v * n_metrics + m] += total;
            sum_sqs[v * n_metrics + m] += total * total;
        }
    }

    // Targeted users that never emitted any event still belong to the
    // all-user population; count them via their hash assignment.
    if mode == AnalysisMode::AllUser {
        if let Some(membership) = &log.config.target_membership {
            let mut seen = std::collections::BTreeSet::new();
            for day in range.start..=range.end {
                if let Some(users) = membership.get(&day) {
                    for uid in users {
                        if seen.insert(uid.as_str()) && log.user(uid).is_none() {
                            let label =
                                assign_variant(&log.config.hash_id, &log.config.variants, uid);
                            let v = log.config.variant_index(label).expect("config label");
                            variant_counts[v] += 1;
                        }
                    }
                }
            }
        }
    }

    let mut summaries = BTreeMap::new();
    for v in 0..n_variants {
        for m in 0..n_metrics {
            summaries.insert(
                (v as u32, m as u32),
                RangeSummary {
                    experiment_id: log.experiment_id().to_string(),
                    variant: log.variant_label(v as u32).to_string(),
                    metric_id: log.metric_names[m].clone(),
                    range,
                    n: variant_counts[v],
                    sum: sums[v * n_metrics + m],
                    sum_sq: sum_sqs[v * n_metrics + m],
                },
            );
        }
    }

    Ok(SummarySet {
        mode,
        range,
        variant_counts,
        summaries,
    })
}

/// Triggered user counts per variant over the range: the `n^[x,y]` series.
pub fn triggered_counts(log: &IngestedLog, range: DayRange) -> EngineResult<Vec<u64>> {
    check_range(log, range)?;
    let mut counts = vec![0u64; log.n_variants()];
    for user in &log.users {
        if user.triggered_in(range) {
            counts[user.variant as usize] += 1;
        }
    }
    Ok(counts)
}

// ---------------------------------------------------------------------------
// Metric coverage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coverage {
    FullyCovered,
    PartiallyCovered,
}

/// Whether a metric is nested under the trigger condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageClass {
    pub metric_id: String,
    pub class: Coverage,
    /// Metric-positive user-days falling on non-trigger days.
    pub evidence: u64,
}

/// A metric is fully covered iff no user has a nonzero value on a day she
/// did not trigger.
pub fn classify_coverage(log: &IngestedLog, metric_id: &str) -> EngineResult<CoverageClass> {
    let metric = log
        .metric_index(metric_id)
        .ok_or_else(|| EngineError::UnknownMetric(metric_id.to_string()))?;
    let mut evidence = 0u64;
    for user in &log.users {
        if let Some(series) = user.metric_series(metric) {
            let mut last_day = u32::MAX;
            for e in &series.entries {
                if e.value != 0.0 && !user.triggered_on(e.day) && e.day != last_day {
                    evidence += 1;
                    last_day = e.day;
                }
            }
        }
    }
    Ok(CoverageClass {
        metric_id: metric_id.to_string(),
        class: if evidence == 0 {
            Coverage::FullyCovered
        } else {
            Coverage::PartiallyCovered
        },
        evidence,
    })
}

// ---------------------------------------------------------------------------
// In-trigger / off-trigger decomposition
// ---------------------------------------------------------------------------

/// Per-arm sums of the decomposition `X_i = I_i + O_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedArm {
    pub variant: String,
    /// Triggered population by day k.
    pub n: u64,
    pub sum_i: f64,
    pub sum_o: f64,
    /// Defined as `sum_i + sum_o`, so the decomposition identity is exact.
    pub sum_x: f64,
    pub sum_sq_x: f64,
    pub sum_sq_i: f64,
    pub sum_sq_o: f64,
    /// Total trigger days of the population within [1,k].
    pub trigger_days: u64,
    /// Total non-trigger days of the population within [1,k].
    pub off_days: u64,
}

impl DecomposedArm {
    pub fn mean_i(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum_i / self.n as f64
        }
    }
    pub fn mean_o(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum_o / self.n as f64
        }
    }
    pub fn mean_x(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum_x / self.n as f64
        }
    }
    /// Unbiased variance of per-user cross-day totals.
    pub fn var_x(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        ((self.sum_sq_x - self.sum_x * self.sum_x / n) / (n - 1.0)).max(0.0)
    }
}

/// Cross-day sums decomposed into in-trigger and off-trigger contributions
/// for one metric over `[1, k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedSums {
    pub metric_id: String,
    pub k: u32,
    /// Indexed by variant index.
    pub arms: Vec<DecomposedArm>,
    /// Control-arm fraction of in-trigger contribution; `None` when the
    /// control cross-day sum is zero.
    pub w_k: Option<f64>,
}

impl DecomposedSums {
    pub fn control(&self) -> &DecomposedArm {
        &self.arms[0]
    }
}

/// Decomposes cross-day metric totals over `[1, k]` into sums on each user's
/// trigger days and non-trigger days.
pub fn decompose_in_off(
    log: &IngestedLog,
    metric_id: &str,
    k: u32,
) -> EngineResult<DecomposedSums> {
    let range = DayRange::new(1, k).map_err(|_| EngineError::RangeOutOfBounds {
        range: DayRange {
            start: 1,
            end: k.max(1),
        },
        duration: log.config.duration_days,
    })?;
    check_range(log, range)?;
    let metric = log
        .metric_index(metric_id)
        .ok_or_else(|| EngineError::UnknownMetric(metric_id.to_string()))?;

    let mut arms: Vec<DecomposedArm> = (0..log.n_variants())
        .map(|v| DecomposedArm {
            variant: log.variant_label(v as u32).to_string(),
            n: 0,
            sum_i: 0.0,
            sum_o: 0.0,
            sum_x: 0.0,
            sum_sq_x: 0.0,
            sum_sq_i: 0.0,
            sum_sq_o: 0.0,
            trigger_days: 0,
            off_days: 0,
        })
        .collect();

    for user in &log.users {
        if !user.triggered_in(range) {
            continue;
        }
        let arm = &mut arms[user.variant as usize];
        arm.n += 1;
        let t_days = user.trigger_days_in(range) as u64;
        arm.trigger_days += t_days;
        arm.off_days += k as u64 - t_days;
        let (on, off) = user.metric_total_split(metric, range);
        let x = on + off;
        arm.sum_i += on;
        arm.sum_o += off;
        arm.sum_sq_i += on * on;
        arm.sum_sq_o += off * off;
        arm.sum_sq_x += x * x;
    }
    for arm in &mut arms {
        arm.sum_x = arm.sum_i + arm.sum_o;
    }

    let control = &arms[0];
    let w_k = if control.sum_x != 0.0 {
        Some(control.sum_i / control.sum_x)
    } else {
        None
    };

    Ok(DecomposedSums {
        metric_id: metric_id.to_string(),
        k,
        arms,
        w_k,
    })
}

// ---------------------------------------------------------------------------
// Closed-form triggered vs non-triggered comparisons
// ---------------------------------------------------------------------------

/// Variance-inflation ratio `var(delta') / var(delta)` of all-user over
/// triggered analysis for a fully-covered metric:
///
/// `1 + (mean_t^2 + r (1+delta)^2 mean_c^2) / (var_t + r (1+delta)^2 var_c) * (1 - 1/k)`
///
/// where `k = n'_c / n_c >= 1` and `r = n_t / n_c`. Always `>= 1`.
pub fn variance_inflation_fully(
    k: f64,
    r: f64,
    delta_pct: f64,
    mean_t: f64,
    mean_c: f64,
    var_t: f64,
    var_c: f64,
) -> EngineResult<f64> {
    if k < 1.0 {
        return Err(EngineError::DataIntegrity(format!(
            "population/triggered ratio k={k} < 1"
        )));
    }
    let growth = (1.0 + delta_pct) * (1.0 + delta_pct);
    let denom = var_t + r * growth * var_c;
    if denom <= 0.0 || r <= 0.0 {
        return Err(EngineError::DataIntegrity(
            "variances and allocation ratio must be positive".into(),
        ));
    }
    let numer = mean_t * mean_t + r * growth * mean_c * mean_c;
    Ok(1.0 + numer / denom * (1.0 - 1.0 / k))
}

/// Approximate upper bound on `t'/t` for a partially-covered metric:
/// `1 / sqrt(n'_c SS'_c / (n_c SS_c))`, always `<= 1`.
pub fn t_ratio_partial(n_c: u64, ss_c: f64, n_prime_c: u64, ss_prime_c: f64) -> EngineResult<f64> {
    if n_c == 0 || ss_c <= 0.0 {
        return Err(EngineError::DataIntegrity(
            "triggered control counts and sums of squares must be positive".into(),
        ));
    }
    if n_prime_c < n_c || ss_prime_c < ss_c {
        return Err(EngineError::DataIntegrity(format!(
            "population must dominate triggered arm: n'={n_prime_c} vs n={n_c}, SS'={ss_prime_c} vs SS={ss_c}"
        )));
    }
    Ok(1.0 / (n_prime_c as f64 * ss_prime_c / (n_c as f64 * ss_c)).sqrt())
}

// ---------------------------------------------------------------------------
// New / returned user counts
// ---------------------------------------------------------------------------

/// Per-variant split of day-k triggers into first-time and returning users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewReturnedCounts {
    pub day: u32,
    /// Per variant index: users whose first trigger in [1,k] is day k.
    pub n_new: Vec<u64>,
    /// Per variant index: users triggering on day k with an earlier trigger.
    pub n_returned: Vec<u64>,
}

/// Derives day-k new/returned counts from the standard count series:
/// `n_new = n^[1,k] - n^[1,k-1]`, `n_returned = n^[1,k-1] + n^[k,k] - n^[1,k]`.
pub fn new_returned_counts(log: &IngestedLog, k: u32) -> EngineResult<NewReturnedCounts> {
    if k < 2 {
        return Err(EngineError::NeedsPriorDay(k));
    }
    let upto_k = triggered_counts(log, DayRange::new(1, k).expect("k >= 2"))?;
    let upto_prev = triggered_counts(log, DayRange::new(1, k - 1).expect("k >= 2"))?;
    let on_k = triggered_counts(log, DayRange::new(k, k).expect("k >= 2"))?;

    let mut n_new = Vec::with_capacity(upto_k.len());
    let mut n_returned = Vec::with_capacity(upto_k.len());
    for v in 0..upto_k.len() {
        if upto_k[v] < upto_prev[v] || upto_prev[v] + on_k[v] < upto_k[v] {
            return Err(EngineError::DataIntegrity(format!(
                "inconsistent count series for variant {v}: n[1,k-1]={}, n[1,k]={}, n[k,k]={}",
                upto_prev[v], upto_k[v], on_k[v]
            )));
        }
        n_new.push(upto_k[v] - upto_prev[v]);
        n_returned.push(upto_prev[v] + on_k[v] - upto_k[v]);
    }
    Ok(NewReturnedCounts {
        day: k,
        n_new,
        n_returned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{ingest, Event, ExperimentConfig, ExposureEvent, MetricEvent};

    fn exposure(user: &str, day: u32, variant: &str) -> Event {
        Event::Exposure(ExposureEvent {
            user_id: user.into(),
            experiment_id: "exp".into(),
            variant: variant.into(),
            day,
            service_tag: None,
        })
    }

    fn metric(user: &str, day: u32, name: &str, value: f64) -> Event {
        Event::Metric(MetricEvent {
            user_id: user.into(),
            day,
            metric_id: name.into(),
            value,
            source_tag: None,
        })
    }

    fn config() -> ExperimentConfig {
        ExperimentConfig::two_arm("exp", "h", 14)
    }

    #[test]
    fn triggered_counts_off_days() {
        // User triggers day 1 only; metric value 5 on day 1 and 2 on day 3.
        let log = ingest(
            vec![
                exposure("u1", 1, "treatment"),
                metric("u1", 1, "m", 5.0),
                metric("u1", 3, "m", 2.0),
            ],
            &config(),
        )
        .unwrap();
        let range = DayRange::new(1, 3).unwrap();
        let set = build_summaries(&log, range, AnalysisMode::Triggered).unwrap();
        let s = set.summary(&log, "treatment", "m").unwrap();
        assert_eq!(s.n, 1);
        assert_eq!(s.sum, 7.0);

        // Same user is not in the day-3 single-day population.
        let sd =
            build_summaries(&log, DayRange::new(3, 3).unwrap(), AnalysisMode::SingleDay).unwrap();
        assert_eq!(sd.variant_counts, vec![0, 0]);
    }

    #[test]
    fn single_day_requires_one_day_range() {
        let log = ingest(vec![exposure("u1", 1, "control")], &config()).unwrap();
        assert!(matches!(
            build_summaries(&log, DayRange::new(1, 2).unwrap(), AnalysisMode::SingleDay),
            Err(EngineError::NotSingleDay(_))
        ));
    }

    #[test]
    fn empty_population_is_zero_not_error() {
        let log = ingest(vec![exposure("u1", 5, "control")], &config()).unwrap();
        let set =
            build_summaries(&log, DayRange::new(1, 2).unwrap(), AnalysisMode::Triggered).unwrap();
        assert_eq!(set.variant_counts, vec![0, 0]);
    }

    #[test]
    fn coverage_classification() {
        let log = ingest(
            vec![
                exposure("u1", 1, "control"),
                metric("u1", 1, "covered", 4.0),
                metric("u1", 1, "mixed", 1.0),
                metric("u1", 2, "mixed", 1.0),
            ],
            &config(),
        )
        .unwrap();
        let c = classify_coverage(&log, "covered").unwrap();
        assert_eq!(c.class, Coverage::FullyCovered);
        assert_eq!(c.evidence, 0);
        let p = classify_coverage(&log, "mixed").unwrap();
        assert_eq!(p.class, Coverage::PartiallyCovered);
        assert_eq!(p.evidence, 1);
        assert!(classify_coverage(&log, "absent").is_err());
    }

    #[test]
    fn decomposition_identity_and_w() {
        let log = ingest(
            vec![
                exposure("c1", 1, "control"),
                metric("c1", 1, "m", 6.0),
                metric("c1", 2, "m", 2.0),
                exposure("t1", 1, "treatment"),
                metric("t1", 1, "m", 9.0),
                metric("t1", 3, "m", 1.0),
            ],
            &config(),
        )
        .unwrap();
        let d = decompose_in_off(&log, "m", 3).unwrap();
        let control = d.control();
        assert_eq!(control.sum_i, 6.0);
        assert_eq!(control.sum_o, 2.0);
        assert_eq!(control.sum_x, 8.0);
        assert_eq!(d.w_k, Some(0.75));
        assert_eq!(control.trigger_days, 1);
        assert_eq!(control.off_days, 2);

        // Fully-covered metric: sum_o = 0, w = 1.
        let log2 = ingest(
            vec![
                exposure("c1", 1, "control"),
                metric("c1", 1, "m", 6.0),
                exposure("t1", 1, "treatment"),
                metric("t1", 1, "m", 9.0),
            ],
            &config(),
        )
        .unwrap();
        let d2 = decompose_in_off(&log2, "m", 3).unwrap();
        assert_eq!(d2.w_k, Some(1.0));
        assert_eq!(d2.control().sum_o, 0.0);
    }

    #[test]
    fn k_equals_one_means_w_is_one() {
        let log = ingest(
            vec![
                exposure("c1", 1, "control"),
                metric("c1", 1, "m", 3.0),
                exposure("t1", 1, "treatment"),
                metric("t1", 1, "m", 4.0),
            ],
            &config(),
        )
        .unwrap();
        let d = decompose_in_off(&log, "m", 1).unwrap();
        assert_eq!(d.w_k, Some(1.0));
    }

    #[test]
    fn variance_inflation_formula() {
        // k = 1: no inflation.
        let r = variance_inflation_fully(1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(r, 1.0);
        // k = 2, symmetric arms: 1 + (1+1)/(1+1) * 0.5 = 1.5.
        let r = variance_inflation_fully(2.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((r - 1.5).abs() < 1e-12);
        assert!(variance_inflation_fully(0.5, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn t_ratio_bound_values() {
        assert_eq!(t_ratio_partial(100, 50.0, 100, 50.0).unwrap(), 1.0);
        let b = t_ratio_partial(100, 50.0, 400, 50.0).unwrap();
        assert!((b - 0.5).abs() < 1e-12);
        assert!(t_ratio_partial(100, 50.0, 50, 50.0).is_err());
        assert!(t_ratio_partial(100, 50.0, 400, 10.0).is_err());
    }

    #[test]
    fn new_returned_identity() {
        // u1 triggers days 1 and 3 (returned on 3), u2 first triggers day 3.
        let log = ingest(
            vec![
                exposure("u1", 1, "control"),
                exposure("u1", 3, "control"),
                exposure("u2", 3, "treatment"),
            ],
            &config(),
        )
        .unwrap();
        let nr = new_returned_counts(&log, 3).unwrap();
        assert_eq!(nr.n_new, vec![0, 1]);
        assert_eq!(nr.n_returned, vec![1, 0]);
        let on_k = triggered_counts(&log, DayRange::new(3, 3).unwrap()).unwrap();
        for v in 0..2 {
            assert_eq!(nr.n_new[v] + nr.n_returned[v], on_k[v]);
        }
        assert!(new_returned_counts(&log, 1).is_err());
    }

    #[test]
    fn all_user_mode_counts_targeted_nonparticipants() {
        let mut cfg = config();
        let mut membership = std::collections::BTreeMap::new();
        let mut day1 = std::collections::BTreeSet::new();
        day1.insert("u1".to_string());
        day1.insert("ghost".to_string());
        membership.insert(1, day1);
        cfg.target_membership = Some(membership);
        let log = ingest(vec![exposure("u1", 1, "control")], &cfg).unwrap();
        let set =
            build_summaries(&log, DayRange::new(1, 2).unwrap(), AnalysisMode::AllUser).unwrap();
        assert_eq!(set.variant_counts.iter().sum::<u64>(), 2);
    }
}
