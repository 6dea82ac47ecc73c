//! Detectors for time-dependent treatment effects: the trigger-day effect
//! (cross-day impact diverging from single-day impact as the in-trigger
//! share w_k shrinks) and the novelty effect (impact decaying as users are
//! exposed repeatedly), plus the staggered-cohort magnitude measurement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{DayRange, IngestedLog};
use crate::statscore::{delta_percent, ols, welch_t, DeltaEstimate, StatsError, WelchOutcome};
use crate::trigger_engine::{
    build_summaries, classify_coverage, decompose_in_off, AnalysisMode, Coverage, CoverageClass,
    DecomposedSums, EngineError,
};

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient days: need {needed}, got {got}")]
    InsufficientDays { needed: u32, got: u32 },
    #[error("cohort not distinguishable: {0}")]
    CohortNotFound(String),
}

pub type TemporalResult<T> = Result<T, TemporalError>;

// ---------------------------------------------------------------------------
// The w_k model
// ---------------------------------------------------------------------------

/// Fraction of in-trigger contribution after k days when users trigger with
/// daily probability `p` and contribute `r` times as much on trigger days:
/// `w_k = p r / ((1-p) - (1-p)^k + p r)`.
pub fn wk_model(p: f64, r: f64, k: u32) -> TemporalResult<f64> {
    if !(0.0..=1.0).contains(&p) || p == 0.0 {
        return Err(TemporalError::InvalidArgument(format!(
            "daily trigger probability must lie in (0,1], got {p}"
        )));
    }
    if r < 0.0 {
        return Err(TemporalError::InvalidArgument(format!(
            "contribution ratio must be non-negative, got {r}"
        )));
    }
    if k == 0 {
        return Err(TemporalError::InvalidArgument("k must be >= 1".into()));
    }
    let q = 1.0 - p;
    let denom = q - q.powi(k as i32) + p * r;
    if denom == 0.0 {
        // p*r = 0 with k = 1: no contribution at all.
        return Ok(1.0);
    }
    Ok(p * r / denom)
}

/// Limit of `w_k` as the experiment runs long: `p r / (1 - p + p r)`. The
/// cross-day impact stabilizes to this fraction of the in-trigger impact
/// when the off-trigger impact is zero.
pub fn wk_limit(p: f64, r: f64) -> TemporalResult<f64> {
    if !(0.0..=1.0).contains(&p) || p == 0.0 {
        return Err(TemporalError::InvalidArgument(format!(
            "daily trigger probability must lie in (0,1], got {p}"
        )));
    }
    if r < 0.0 {
        return Err(TemporalError::InvalidArgument(format!(
            "contribution ratio must be non-negative, got {r}"
        )));
    }
    let denom = 1.0 - p + p * r;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok(p * r / denom)
}

// ---------------------------------------------------------------------------
// (p, r) estimation from the control arm
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrEstimate {
    /// Daily trigger probability: trigger days over user-days at risk.
    pub p_hat: f64,
    /// In/off per-day contribution ratio; `None` when no off-trigger days
    /// exist (fully-covered usage or p = 1).
    pub r_hat: Option<f64>,
}

/// Estimates `(p, r)` on the control arm of a decomposition over `[1, k]`.
pub fn estimate_p_r(decomposed: &DecomposedSums) -> TemporalResult<PrEstimate> {
    let control = decomposed.control();
    if control.n == 0 {
        return Err(TemporalError::InvalidArgument(
            "empty triggered control population".into(),
        ));
    }
    let user_days = control.n as f64 * decomposed.k as f64;
    let p_hat = control.trigger_days as f64 / user_days;
    let r_hat = if control.off_days == 0 || control.sum_o == 0.0 {
        None
    } else {
        let per_trigger_day = control.sum_i / control.trigger_days as f64;
        let per_off_day = control.sum_o / control.off_days as f64;
        Some(per_trigger_day / per_off_day)
    };
    Ok(PrEstimate { p_hat, r_hat })
}

/// Convenience: decompose and estimate in one step.
pub fn estimate_p_r_from_log(
    log: &IngestedLog,
    metric_id: &str,
    k: u32,
) -> TemporalResult<PrEstimate> {
    let decomposed = decompose_in_off(log, metric_id, k)?;
    estimate_p_r(&decomposed)
}

// ---------------------------------------------------------------------------
// Impact series
// ---------------------------------------------------------------------------

/// A per-day lift estimate; `None` with a note when the day's population is
/// too small to test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactPoint {
    pub day: u32,
    pub estimate: Option<DeltaEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Single-day and cross-day lift series for one metric and one treatment arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactSeries {
    pub metric_id: String,
    pub variant: String,
    pub coverage: CoverageClass,
    pub single_day: Vec<ImpactPoint>,
    pub cross_day: Vec<ImpactPoint>,
}

pub fn build_impact_series(
    log: &IngestedLog,
    metric_id: &str,
    variant: &str,
    t_max: u32,
) -> TemporalResult<ImpactSeries> {
    let coverage = classify_coverage(log, metric_id)?;
    let mut single_day = Vec::with_capacity(t_max as usize);
    let mut cross_day = Vec::with_capacity(t_max as usize);
    for t in 1..=t_max {
        for (mode, out) in [
            (AnalysisMode::SingleDay, &mut single_day),
            (AnalysisMode::Triggered, &mut cross_day),
        ] {
            let range = match mode {
                AnalysisMode::SingleDay => DayRange::single(t),
                _ => DayRange::new(1, t),
            }
            .expect("valid day");
            let set = build_summaries(log, range, mode)?;
            let point = match set.arm_pair(log, variant, metric_id) {
                Some((t_sum, c_sum)) => match delta_percent(t_sum, c_sum) {
                    Ok(estimate) => ImpactPoint {
                        day: t,
                        estimate: Some(estimate),
                        note: None,
                    },
                    Err(e) => ImpactPoint {
                        day: t,
                        estimate: None,
                        note: Some(e.to_string()),
                    },
                },
                None => ImpactPoint {
                    day: t,
                    estimate: None,
                    note: Some("metric or variant absent".into()),
                },
            };
            out.push(point);
        }
    }
    Ok(ImpactSeries {
        metric_id: metric_id.to_string(),
        variant: variant.to_string(),
        coverage,
        single_day,
        cross_day,
    })
}

// ---------------------------------------------------------------------------
// Trigger-day effect detector
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerDayParams {
    /// Flag only when the in-trigger share is below this.
    pub w_threshold: f64,
    pub alpha: f64,
}

impl Default for TriggerDayParams {
    fn default() -> Self {
        Self {
            w_threshold: 0.8,
            alpha: 0.05,
        }
    }
}

/// Lift with a variance bound derived from the cross-day totals
/// (`var(X) >= var(I)` and `var(X) >= var(O)` when `cov(I, O) >= 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedDelta {
    pub delta_pct: f64,
    pub variance_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerDayFinding {
    pub metric_id: String,
    pub k: u32,
    pub coverage: Coverage,
    /// `w_j` for j = 1..=k on the control arm (plot data).
    pub w_series: Vec<(u32, Option<f64>)>,
    pub w_k: Option<f64>,
    pub delta_in: Option<BoundedDelta>,
    pub delta_off: Option<BoundedDelta>,
    /// Conservative test of in-trigger vs off-trigger impact.
    pub test: Option<WelchOutcome>,
    pub p_hat: Option<f64>,
    pub r_hat: Option<f64>,
    pub w_infinity: Option<f64>,
    /// `w_inf * delta_in + (1 - w_inf) * delta_off`: where the cross-day
    /// impact stabilizes.
    pub projected_stable_impact: Option<f64>,
    pub flag: bool,
    pub reasons: Vec<String>,
}

/// Bounded Delta-method variance for a component lift, substituting the
/// cross-day per-user variance for the unobservable component variance.
fn bounded_component_delta(
    mean_t: f64,
    mean_c: f64,
    n_t: u64,
    n_c: u64,
    var_x_t: f64,
    var_x_c: f64,
) -> Option<BoundedDelta> {
    if mean_c == 0.0 || n_t == 0 || n_c == 0 {
        return None;
    }
    let delta_pct = mean_t / mean_c - 1.0;
    let variance_bound = var_x_t / (mean_c * mean_c * n_t as f64)
        + var_x_c * mean_t * mean_t / (mean_c.powi(4) * n_c as f64);
    Some(BoundedDelta {
        delta_pct,
        variance_bound,
    })
}

/// Flags a trigger-day effect on a decomposition over `[1, k]`: the metric
/// must be partially covered, the in-trigger share small, and the in- vs
/// off-trigger impacts significantly different under the conservative
/// variance bound.
pub fn detect_trigger_day(
    decomposed: &DecomposedSums,
    coverage: &CoverageClass,
    params: TriggerDayParams,
) -> TemporalResult<TriggerDayFinding> {
    if decomposed.k < 3 {
        return Err(TemporalError::InsufficientDays {
            needed: 3,
            got: decomposed.k,
        });
    }
    if decomposed.arms.len() < 2 {
        return Err(TemporalError::InvalidArgument(
            "need a treatment and a control arm".into(),
        ));
    }
    let mut finding = TriggerDayFinding {
        metric_id: decomposed.metric_id.clone(),
        k: decomposed.k,
        coverage: coverage.class,
        w_series: Vec::new(),
        w_k: decomposed.w_k,
        delta_in: None,
        delta_off: None,
        test: None,
        p_hat: None,
        r_hat: None,
        w_infinity: None,
        projected_stable_impact: None,
        flag: false,
        reasons: Vec::new(),
    };

    if coverage.class == Coverage::FullyCovered {
        finding
            .reasons
            .push("fully covered metric: w = 1, cross-day equals in-trigger impact".into());
        return Ok(finding);
    }

    let control = decomposed.control();
    let treatment = &decomposed.arms[1];
    if control.n < 2 || treatment.n < 2 {
        finding.reasons.push("insufficient triggered users".into());
        return Ok(finding);
    }
    let n_c = control.n as f64;
    let n_t = treatment.n as f64;

    let pr = estimate_p_r(decomposed)?;
    finding.p_hat = Some(pr.p_hat);
    finding.r_hat = pr.r_hat;

    finding.delta_in = bounded_component_delta(
        treatment.sum_i / n_t,
        control.sum_i / n_c,
        treatment.n,
        control.n,
        treatment.var_x(),
        control.var_x(),
    );
    finding.delta_off = bounded_component_delta(
        treatment.sum_o / n_t,
        control.sum_o / n_c,
        treatment.n,
        control.n,
        treatment.var_x(),
        control.var_x(),
    );

    if let (Some(p_hat), Some(r_hat)) = (finding.p_hat, finding.r_hat) {
        if p_hat > 0.0 {
            let w_inf = wk_limit(p_hat, r_hat)?;
            finding.w_infinity = Some(w_inf);
            if let (Some(di), Some(doff)) = (finding.delta_in, finding.delta_off) {
                finding.projected_stable_impact =
                    Some(w_inf * di.delta_pct + (1.0 - w_inf) * doff.delta_pct);
            }
        }
    }

    let (Some(di), Some(doff)) = (finding.delta_in, finding.delta_off) else {
        finding
            .reasons
            .push("in- or off-trigger lift undefined (zero control mean)".into());
        return Ok(finding);
    };
    let test = welch_t(
        di.delta_pct,
        di.variance_bound,
        doff.delta_pct,
        doff.variance_bound,
    )?;
    finding.test = Some(test);

    match decomposed.w_k {
        Some(w) if w < params.w_threshold => {
            if test.p < params.alpha {
                finding.flag = true;
                finding.reasons.push(format!(
                    "w_k = {w:.3} < {} and in/off-trigger impacts differ (p = {:.3e})",
                    params.w_threshold, test.p
                ));
            } else {
                finding.reasons.push(format!(
                    "in/off-trigger impacts not significantly different (p = {:.3})",
                    test.p
                ));
            }
        }
        Some(w) => {
            finding.reasons.push(format!(
                "w_k = {w:.3} >= {}: off-trigger share too small to distort cross-day impact",
                params.w_threshold
            ));
        }
        None => {
            finding
                .reasons
                .push("w undefined: control cross-day sum is zero".into());
        }
    }
    Ok(finding)
}

/// Full trigger-day analysis from a log: classifies coverage, decomposes
/// every prefix to produce the w series, and runs the detector at `[1, k]`.
pub fn analyze_trigger_day(
    log: &IngestedLog,
    metric_id: &str,
    k: u32,
    params: TriggerDayParams,
) -> TemporalResult<TriggerDayFinding> {
    let coverage = classify_coverage(log, metric_id)?;
    let decomposed = decompose_in_off(log, metric_id, k)?;
    let mut finding = detect_trigger_day(&decomposed, &coverage, params)?;
    let mut w_series = Vec::with_capacity(k as usize);
    for j in 1..=k {
        if j == k {
            w_series.push((j, decomposed.w_k));
        } else {
            let d = decompose_in_off(log, metric_id, j)?;
            w_series.push((j, d.w_k));
        }
    }
    finding.w_series = w_series;
    Ok(finding)
}

// ---------------------------------------------------------------------------
// Novelty effect detector
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weekday {
    Monday,
    Tuesday,
    Wednesday,
    Thursday,
    Friday,
    Saturday,
    Sunday,
}

impl Weekday {
    pub fn is_weekend(&self) -> bool {
        matches!(self, Weekday::Saturday | Weekday::Sunday)
    }
}

impl std::str::FromStr for Weekday {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mon" | "monday" => Ok(Weekday::Monday),
            "tue" | "tuesday" => Ok(Weekday::Tuesday),
            "wed" | "wednesday" => Ok(Weekday::Wednesday),
            "thu" | "thursday" => Ok(Weekday::Thursday),
            "fri" | "friday" => Ok(Weekday::Friday),
            "sat" | "saturday" => Ok(Weekday::Saturday),
            "sun" | "sunday" => Ok(Weekday::Sunday),
            other => Err(format!("unknown weekday '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoveltyParams {
    /// Exponent of the slowly-decaying regressor `1/t^alpha`.
    pub alpha_exponent: f64,
    /// Exponent of the fast-decaying regressor `1/t^gamma`.
    pub gamma_exponent: f64,
    pub r2_min: f64,
    /// Significance level of the extremes test; strict by design to limit
    /// false positives.
    pub alpha_extremes: f64,
    /// Weekday the experiment started on, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_weekday: Option<Weekday>,
}

impl Default for NoveltyParams {
    fn default() -> Self {
        Self {
            alpha_exponent: 0.35,
            gamma_exponent: 2.0,
            r2_min: 0.8,
            alpha_extremes: 0.005,
            start_weekday: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyFinding {
    /// (intercept, slow-term, fast-term) coefficients.
    pub beta: [f64; 3],
    pub r_squared: f64,
    pub monotone: bool,
    pub extremes: WelchOutcome,
    pub max_day: u32,
    pub min_day: u32,
    pub flag: bool,
    pub caveats: Vec<String>,
    /// Fitted curve per observed day (plot data).
    pub fitted: Vec<(u32, f64)>,
}

/// Whether `f(t) = b0 + b1 t^-a + b2 t^-g` is monotone on `[1, T]`.
///
/// The derivative has at most one sign change on t > 0, at
/// `t* = (-b2 g / (b1 a))^(1/(g-a))` when the coefficients oppose each
/// other. When an interior extremum exists, the counter-movement it creates
/// is measured on a 1000-point grid; movements below 2% of the curve's span
/// are noise from a near-zero coefficient, not a real trend reversal.
fn fitted_monotone(beta: &[f64; 3], a: f64, g: f64, t_max: f64) -> bool {
    let b1 = beta[1];
    let b2 = beta[2];
    if b1 * b2 >= 0.0 {
        return true;
    }
    let t_star = (-(b2 * g) / (b1 * a)).powf(1.0 / (g - a));
    if !(t_star > 1.0 && t_star < t_max) {
        return true;
    }
    let f = |t: f64| beta[0] + b1 * t.powf(-a) + b2 * t.powf(-g);
    let n = 1000;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..=n {
        let t = 1.0 + (t_max - 1.0) * i as f64 / n as f64;
        let v = f(t);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    if span <= 0.0 {
        return true;
    }
    let main = (f(t_max) - f(1.0)).abs();
    let counter = span - main;
    counter <= 0.02 * span
}

/// Flags a novelty effect on a series of single-day lift estimates for days
/// `1..=T`: a two-term decay regression must fit well, the fitted curve must
/// be monotone, and the extreme single-day impacts must differ at a strict
/// level.
pub fn detect_novelty(
    series: &[DeltaEstimate],
    params: NoveltyParams,
) -> TemporalResult<NoveltyFinding> {
    let t_len = series.len() as u32;
    if t_len < 7 {
        return Err(TemporalError::InsufficientDays {
            needed: 7,
            got: t_len,
        });
    }
    let a = params.alpha_exponent;
    let g = params.gamma_exponent;
    if a <= 0.0 || g <= a {
        return Err(TemporalError::InvalidArgument(
            "decay exponents must satisfy 0 < alpha < gamma".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = (1..=t_len)
        .map(|t| {
            let t = t as f64;
            vec![1.0, t.powf(-a), t.powf(-g)]
        })
        .collect();
    let y: Vec<f64> = series.iter().map(|d| d.delta_pct).collect();
    let fit = ols(&rows, &y)?;
    let beta = [fit.coefficients[0], fit.coefficients[1], fit.coefficients[2]];

    let monotone = fitted_monotone(&beta, a, g, t_len as f64);

    let (max_idx, max_est) = series
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.delta_pct.total_cmp(&y.1.delta_pct))
        .expect("non-empty");
    let (min_idx, min_est) = series
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.delta_pct.total_cmp(&y.1.delta_pct))
        .expect("non-empty");
    let extremes = welch_t(
        max_est.delta_pct,
        max_est.variance,
        min_est.delta_pct,
        min_est.variance,
    )?;

    let flag =
        fit.r_squared >= params.r2_min && monotone && extremes.p < params.alpha_extremes;

    let mut caveats = Vec::new();
    if params.start_weekday.is_some_and(|d| d.is_weekend()) {
        caveats.push(
            "experiment started on a weekend: a day-of-week effect can resemble a novelty \
             trend and this detector does not distinguish them"
                .to_string(),
        );
    }

    Ok(NoveltyFinding {
        beta,
        r_squared: fit.r_squared,
        monotone,
        extremes,
        max_day: max_idx as u32 + 1,
        min_day: min_idx as u32 + 1,
        flag,
        caveats,
        fitted: (1..=t_len)
            .map(|t| {
                let tf = t as f64;
                (t, beta[0] + beta[1] * tf.powf(-a) + beta[2] * tf.powf(-g))
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Staggered-cohort novelty magnitude
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortNoveltyEstimate {
    pub metric_id: String,
    pub window: DayRange,
    pub fresh: DeltaEstimate,
    pub seasoned: DeltaEstimate,
    /// Fresh-cohort impact minus seasoned-cohort impact over the window.
    pub magnitude: f64,
    pub std_error: f64,
}

/// Measures novelty magnitude by comparing the freshly exposed cohort's
/// impact against the seasoned cohort's over the same calendar window
/// starting at `split_day`.
pub fn cohort_novelty_magnitude(
    log: &IngestedLog,
    metric_id: &str,
    seasoned_variant: &str,
    fresh_variant: &str,
    split_day: u32,
    window_days: u32,
) -> TemporalResult<CohortNoveltyEstimate> {
    if window_days == 0 {
        return Err(TemporalError::InvalidArgument(
            "window must span at least one day".into(),
        ));
    }
    let end = split_day + window_days - 1;
    if split_day == 0 || end > log.config.duration_days {
        return Err(TemporalError::InvalidArgument(format!(
            "window [{split_day},{end}] outside experiment"
        )));
    }
    for label in [seasoned_variant, fresh_variant] {
        if log.config.variant_index(label).is_none() {
            return Err(TemporalError::CohortNotFound(format!(
                "variant '{label}' not declared"
            )));
        }
    }
    let range = DayRange::new(split_day, end).expect("validated");
    let set = build_summaries(log, range, AnalysisMode::Triggered)?;
    let fresh_pair = set
        .arm_pair(log, fresh_variant, metric_id)
        .ok_or_else(|| TemporalError::CohortNotFound(format!("metric '{metric_id}' absent")))?;
    if fresh_pair.0.n == 0 {
        return Err(TemporalError::CohortNotFound(format!(
            "fresh cohort '{fresh_variant}' has no triggered users in {range}"
        )));
    }
    let fresh = delta_percent(fresh_pair.0, fresh_pair.1)?;
    let seasoned_pair = set
        .arm_pair(log, seasoned_variant, metric_id)
        .ok_or_else(|| TemporalError::CohortNotFound(format!("metric '{metric_id}' absent")))?;
    let seasoned = delta_percent(seasoned_pair.0, seasoned_pair.1)?;
    Ok(CohortNoveltyEstimate {
        metric_id: metric_id.to_string(),
        window: range,
        magnitude: fresh.delta_pct - seasoned.delta_pct,
        std_error: (fresh.variance + seasoned.variance).sqrt(),
        fresh,
        seasoned,
    })
}
