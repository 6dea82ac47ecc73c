//! Multi-experiment corpus generation for meta-analysis evaluation.
//!
//! Effects are drawn from a planted two-group model with a cross-metric
//! slope; estimate noise is correlated across the two metrics at the
//! user-level correlation and nested across snapshot days, so an early
//! (day-7) reading and the final (day-21) reading of one experiment are
//! statistically consistent.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datamodel::{DayRange, RangeSummary};
use crate::metacorr::{ArmSummaries, ExperimentArchive, IterationSummaries};
use crate::seeding::derive_seed;

use super::engine::SimError;

const STREAM_EXPERIMENT: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_experiments: usize,
    /// Prior probability that an experiment truly moves the indicator metric.
    pub pi1: f64,
    /// Standard deviation of true normalized effects under H1.
    pub effect_sd: f64,
    /// Cross-metric slope: theta_y = beta1 * theta_x.
    pub beta1: f64,
    /// User-level correlation between the two metrics' estimates.
    pub rho_user: f64,
    pub days_total: u32,
    pub early_day: u32,
    /// Final effective sample size of the indicator metric, log-uniform.
    pub ne_x_range: (f64, f64),
    /// Y's effective sample size as a fraction of X's (underpowered when < 1).
    pub ne_y_scale: f64,
    /// Daily trigger probability shaping the saturating accrual curve.
    pub accrual_p: f64,
}

impl CorpusSpec {
    pub fn standard(n_experiments: usize, seed: u64) -> Self {
        Self {
            seed,
            n_experiments,
            pi1: 0.3,
            effect_sd: 0.1,
            beta1: 0.5,
            rho_user: 0.2,
            days_total: 21,
            early_day: 7,
            ne_x_range: (20_000.0, 80_000.0),
            ne_y_scale: 0.05,
            accrual_p: 0.15,
        }
    }

    pub fn pure_null(n_experiments: usize, seed: u64) -> Self {
        let mut spec = Self::standard(n_experiments, seed);
        spec.pi1 = 0.0;
        spec
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_experiments < 50 {
            return Err(format!(
                "need at least 50 experiments for meta-analysis, got {}",
                self.n_experiments
            ));
        }
        if !(0.0..=1.0).contains(&self.pi1) || self.effect_sd < 0.0 {
            return Err("invalid mixture parameters".into());
        }
        if !(-1.0..=1.0).contains(&self.rho_user) {
            return Err("rho_user outside [-1,1]".into());
        }
        if self.early_day == 0 || self.early_day > self.days_total {
            return Err("early_day outside experiment".into());
        }
        if self.ne_x_range.0 <= 0.0 || self.ne_x_range.1 < self.ne_x_range.0 {
            return Err("invalid ne_x_range".into());
        }
        if self.ne_y_scale <= 0.0 || !(0.0..1.0).contains(&self.accrual_p) {
            return Err("invalid ne_y_scale or accrual_p".into());
        }
        Ok(())
    }
}

/// Planted truth for one corpus experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTruth {
    pub experiment_id: String,
    pub truly_moved: bool,
    pub theta_x: f64,
    pub theta_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusTruth {
    pub pi1: f64,
    pub effect_sd: f64,
    pub beta1: f64,
    pub rho_user: f64,
    pub per_experiment: Vec<ExperimentTruth>,
}

#[derive(Debug, Clone)]
pub struct CorpusOutput {
    /// Snapshot day -> one archive per experiment with cumulative data.
    pub snapshots: BTreeMap<u32, Vec<ExperimentArchive>>,
    pub rho_user: f64,
    pub truth: CorpusTruth,
}

fn accrual_fraction(p: f64, day: u32, total: u32) -> f64 {
    (1.0 - (1.0 - p).powi(day as i32)) / (1.0 - (1.0 - p).powi(total as i32))
}

/// Builds arm summaries whose delta-method estimate reproduces the intended
/// normalized effect at the intended effective sample size (unit-variance
/// control arm, mean 1).
fn summaries_for(
    experiment_id: &str,
    metric: &str,
    days: u32,
    delta_hat: f64,
    n_e: f64,
) -> ArmSummaries {
    let n = (2.0 * n_e).round().max(4.0) as u64;
    let nf = n as f64;
    let range = DayRange::new(1, days).expect("valid range");
    let mean_t = 1.0 + delta_hat;
    ArmSummaries {
        treatment: RangeSummary {
            experiment_id: experiment_id.into(),
            variant: "treatment".into(),
            metric_id: metric.into(),
            range,
            n,
            sum: mean_t * nf,
            sum_sq: (1.0 + mean_t * mean_t) * nf,
        },
        control: RangeSummary {
            experiment_id: experiment_id.into(),
            variant: "control".into(),
            metric_id: metric.into(),
            range,
            n,
            sum: nf,
            sum_sq: 2.0 * nf,
        },
    }
}

/// Generates per-experiment archives at the early and final snapshot days,
/// with ground truth for scoring.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<CorpusOutput, SimError> {
    spec.validate().map_err(SimError::InvalidSpec)?;
    let mut early_archives = Vec::with_capacity(spec.n_experiments);
    let mut final_archives = Vec::with_capacity(spec.n_experiments);
    let mut per_experiment = Vec::with_capacity(spec.n_experiments);
    let tail = (1.0 - spec.rho_user * spec.rho_user).sqrt();

    for e in 0..spec.n_experiments {
        let experiment_id = format!("exp{e:05}");
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[STREAM_EXPERIMENT, e as u64]));

        let (lo, hi) = spec.ne_x_range;
        let ne_x_final = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
        let ne_y_final = ne_x_final * spec.ne_y_scale;

        let truly_moved = rng.gen::<f64>() < spec.pi1;
        let theta_x = if truly_moved {
            rng.sample::<f64, _>(StandardNormal) * spec.effect_sd
        } else {
            0.0
        };
        let theta_y = spec.beta1 * theta_x;
        per_experiment.push(ExperimentTruth {
            experiment_id: experiment_id.clone(),
            truly_moved,
            theta_x,
            theta_y,
        });

        // Correlated noise increments, nested across the two snapshots:
        // the sufficient statistic S(d) = theta * Ne(d) + B(d) with
        // independent increments of variance delta-Ne.
        let mut draw_pair = |var: f64| -> (f64, f64) {
            let zx: f64 = rng.sample(StandardNormal);
            let eps: f64 = rng.sample(StandardNormal);
            let zy = spec.rho_user * zx + tail * eps;
            (zx * var.sqrt(), zy * var.sqrt())
        };

        let frac_early = accrual_fraction(spec.accrual_p, spec.early_day, spec.days_total);
        let ne_x_early = ne_x_final * frac_early;
        let ne_y_early = ne_y_final * frac_early;

        let (bx_early, by_early) = {
            let (bx, by) = draw_pair(1.0);
            (bx * ne_x_early.sqrt(), by * ne_y_early.sqrt())
        };
        let (bx_late_inc, by_late_inc) = {
            let (bx, by) = draw_pair(1.0);
            (
                bx * (ne_x_final - ne_x_early).sqrt(),
                by * (ne_y_final - ne_y_early).sqrt(),
            )
        };

        let delta_x_early = (theta_x * ne_x_early + bx_early) / ne_x_early;
        let delta_y_early = (theta_y * ne_y_early + by_early) / ne_y_early;
        let delta_x_final = (theta_x * ne_x_final + bx_early + bx_late_inc) / ne_x_final;
        let delta_y_final = (theta_y * ne_y_final + by_early + by_late_inc) / ne_y_final;

        let ne_daily: Vec<f64> = (1..=spec.days_total)
            .map(|d| ne_x_final * accrual_fraction(spec.accrual_p, d, spec.days_total))
            .collect();

        let build = |days: u32, dx: f64, dy: f64, nex: f64, ney: f64, daily: Vec<f64>| {
            let mut metrics = BTreeMap::new();
            metrics.insert(
                "x".to_string(),
                summaries_for(&experiment_id, "x", days, dx, nex),
            );
            metrics.insert(
                "y".to_string(),
                summaries_for(&experiment_id, "y", days, dy, ney),
            );
            ExperimentArchive {
                experiment_id: experiment_id.clone(),
                iterations: vec![IterationSummaries {
                    iteration: 1,
                    days,
                    metrics,
                    ne_daily: daily,
                }],
            }
        };

        early_archives.push(build(
            spec.early_day,
            delta_x_early,
            delta_y_early,
            ne_x_early,
            ne_y_early,
            ne_daily[..spec.early_day as usize].to_vec(),
        ));
        final_archives.push(build(
            spec.days_total,
            delta_x_final,
            delta_y_final,
            ne_x_final,
            ne_y_final,
            ne_daily,
        ));
    }

    let mut snapshots = BTreeMap::new();
    snapshots.insert(spec.early_day, early_archives);
    snapshots.insert(spec.days_total, final_archives);
    Ok(CorpusOutput {
        snapshots,
        rho_user: spec.rho_user,
        truth: CorpusTruth {
            pi1: spec.pi1,
            effect_sd: spec.effect_sd,
            beta1: spec.beta1,
            rho_user: spec.rho_user,
            per_experiment,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metacorr::build_history;

    #[test]
    fn corpus_is_deterministic_and_consistent() {
        let spec = CorpusSpec::standard(60, 4);
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.snapshots[&21].len(), 60);
        assert_eq!(a.snapshots[&7].len(), 60);
    }

    #[test]
    fn history_from_corpus_recovers_normalized_effects() {
        let spec = CorpusSpec::standard(100, 8);
        let out = generate_corpus(&spec).unwrap();
        let (records, excluded) = build_history(&out.snapshots[&21], 7);
        assert!(excluded.is_empty());
        assert_eq!(records.len(), 100);
        // Normalized effects of truly-null experiments are ~N(0,1) z-scores
        // after scaling; spot-check the scale.
        let z_abs_mean: f64 = records
            .iter()
            .zip(&out.truth.per_experiment)
            .filter(|(_, t)| !t.truly_moved)
            .map(|(r, _)| {
                let m = &r.metrics["x"];
                (m.delta_norm * m.n_e.sqrt()).abs()
            })
            .sum::<f64>()
            / records
                .iter()
                .zip(&out.truth.per_experiment)
                .filter(|(_, t)| !t.truly_moved)
                .count()
                .max(1) as f64;
        // E|Z| = sqrt(2/pi) ~ 0.798 for a standard normal.
        assert!(
            (z_abs_mean - 0.8).abs() < 0.15,
            "null z-scale off: {z_abs_mean}"
        );
    }

    #[test]
    fn rejects_small_corpora() {
        let spec = CorpusSpec::standard(10, 1);
        assert!(generate_corpus(&spec).is_err());
    }
}
