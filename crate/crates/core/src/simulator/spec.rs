//! Scenario specifications for the synthetic experiment generator.

use serde::{Deserialize, Serialize};

use crate::datamodel::VariantAllocation;

/// Which mechanism the generated experiment plants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// No bias, no time-dependent effect.
    Clean,
    /// Exposure events stop firing once a treated user is cooled off.
    CoolOffBug,
    /// Treatment lifts re-visit rates while counting starts mid-experiment.
    Residual,
    /// Treatment moves the score that decides targeting eligibility.
    DynamicTargeting,
    /// A parent experiment on the same hash changes the click-through rate
    /// into this experiment's trigger page.
    DependentExperiments,
    /// In-trigger and off-trigger treatment effects differ.
    TriggerDay,
    /// Treatment effect decays with a user's cumulative trigger count.
    Novelty,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Clean => "clean",
            ScenarioKind::CoolOffBug => "cool_off_bug",
            ScenarioKind::Residual => "residual",
            ScenarioKind::DynamicTargeting => "dynamic_targeting",
            ScenarioKind::DependentExperiments => "dependent_experiments",
            ScenarioKind::TriggerDay => "trigger_day",
            ScenarioKind::Novelty => "novelty",
        }
    }
}

/// Per-user daily activity model. `dispersion` in [0,1) spreads trigger
/// probabilities across users with a Beta distribution of the given mean;
/// zero keeps every user at exactly `daily_trigger_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityModel {
    pub daily_trigger_prob: f64,
    #[serde(default)]
    pub dispersion: f64,
}

/// Noise family for metric value draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseFamily {
    /// Exactly the mean, no noise.
    Fixed,
    Poisson,
    /// Over-dispersed counts: variance = mean + dispersion * mean^2.
    NegBinomial { dispersion: f64 },
    /// Right-skewed continuous values with the given coefficient of variation.
    LogNormal { cv: f64 },
}

/// Treatment effect keyed to a user's cumulative trigger count `j`:
/// `effect(j) = steady + (initial - steady) * rate^(j-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub initial: f64,
    pub steady: f64,
    pub rate: f64,
}

impl DecaySchedule {
    pub fn effect_at(&self, trigger_count: u32) -> f64 {
        let j = trigger_count.max(1);
        self.steady + (self.initial - self.steady) * self.rate.powi(j as i32 - 1)
    }
}

/// One synthetic metric.
///
/// Values are drawn on visit days with mean `mean_on` and, when
/// `mean_off > 0`, on non-visit days with mean `mean_off` (making the metric
/// partially covered). Treatment multiplies the means by `1 + effect` once
/// the user has been exposed; a decay schedule overrides `effect_on`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricModel {
    pub metric_id: String,
    pub mean_on: f64,
    #[serde(default)]
    pub mean_off: f64,
    pub noise: NoiseFamily,
    #[serde(default)]
    pub effect_on: f64,
    #[serde(default)]
    pub effect_off: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecaySchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<String>,
    /// Coefficient of variation of a per-user engagement scale multiplying
    /// both on- and off-day means (mean 1). Positive values induce the
    /// non-negative covariance between in- and off-trigger totals seen in
    /// real engagement data.
    #[serde(default)]
    pub user_scale_cv: f64,
}

/// Cool-off bug parameters: the widget stops firing assignment evaluation
/// once `(impressions > cap or clicked)` holds for a treated user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoolOffParams {
    pub impression_cap: u32,
    pub click_prob: f64,
}

/// Residual-effect parameters: treated users re-visit at
/// `p * (1 + return_rate_lift)` after their first exposure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualParams {
    pub return_rate_lift: f64,
}

/// Dynamic-targeting parameters. Users are targeted while their score is at
/// or below `threshold`; scores drift down by `entry_drift` per day (users
/// become eligible over time) and jump by `score_boost` on each treated
/// trigger, evicting the user from the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetingParams {
    pub threshold: f64,
    pub entry_drift: f64,
    pub score_boost: f64,
}

/// Dependent-experiments parameters: the sibling (parent) experiment shares
/// the hash id; its treatment changes the click-through rate into this
/// experiment's trigger page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyParams {
    pub parent_experiment_id: String,
    pub parent_trigger_prob: f64,
    pub click_through_rate: f64,
    pub ctr_lift: f64,
    /// Daily probability of reaching the child page without the parent.
    pub direct_visit_prob: f64,
    /// Probability that a click-through lands on the child page the next
    /// day rather than the same day (e.g. the user returns to check out).
    pub conversion_lag_prob: f64,
}

/// Staggered novelty-measurement design: the `late_label` variant is held
/// out of treatment until `split_day`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaggeredParams {
    pub split_day: u32,
    pub late_label: String,
}

/// Service tagging of exposure events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceParams {
    /// Exposures fired on visits are tagged with a uniform choice among these.
    #[serde(default)]
    pub route_services: Vec<String>,
    /// A second code path that evaluates assignment for treated users only,
    /// with the given daily probability (the direct-URL bug).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_service: Option<ExtraServiceParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraServiceParams {
    pub service: String,
    pub rate: f64,
}

/// Full description of one synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub n_users: u64,
    pub k_days: u32,
    #[serde(default = "default_experiment_id")]
    pub experiment_id: String,
    /// Randomization namespace; derived from experiment id and seed when
    /// absent so repeated runs re-randomize the split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash_id: Option<String>,
    #[serde(default = "default_allocations")]
    pub allocations: Vec<VariantAllocation>,
    pub activity: ActivityModel,
    /// First day of the counting window; days before it exist in the log but
    /// the analysis is expected to start here.
    #[serde(default = "default_count_from")]
    pub count_from_day: u32,
    #[serde(default)]
    pub metrics: Vec<MetricModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cool_off: Option<CoolOffParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targeting: Option<TargetingParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependency: Option<DependencyParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staggered: Option<StaggeredParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub services: Option<ServiceParams>,
}

fn default_experiment_id() -> String {
    "exp".to_string()
}

fn default_count_from() -> u32 {
    1
}

fn default_allocations() -> Vec<VariantAllocation> {
    vec![
        VariantAllocation {
            label: "control".into(),
            fraction: 0.5,
        },
        VariantAllocation {
            label: "treatment".into(),
            fraction: 0.5,
        },
    ]
}

impl ScenarioSpec {
    pub fn resolved_hash_id(&self) -> String {
        self.hash_id
            .clone()
            .unwrap_or_else(|| format!("{}-{:016x}", self.experiment_id, self.seed))
    }

    fn base(kind: ScenarioKind, n_users: u64, k_days: u32, p: f64, seed: u64) -> Self {
        Self {
            kind,
            seed,
            n_users,
            k_days,
            experiment_id: default_experiment_id(),
            hash_id: None,
            allocations: default_allocations(),
            activity: ActivityModel {
                daily_trigger_prob: p,
                dispersion: 0.0,
            },
            count_from_day: 1,
            metrics: Vec::new(),
            cool_off: None,
            residual: None,
            targeting: None,
            dependency: None,
            staggered: None,
            services: None,
        }
    }

    fn page_view_metric() -> MetricModel {
        MetricModel {
            metric_id: "page_views".into(),
            mean_on: 1.0,
            mean_off: 0.0,
            noise: NoiseFamily::Fixed,
            effect_on: 0.0,
            effect_off: 0.0,
            decay: None,
            source_tag: Some("trigger_page".into()),
            user_scale_cv: 0.0,
        }
    }

    fn engagement_metric(effect_on: f64, effect_off: f64) -> MetricModel {
        MetricModel {
            metric_id: "engagement".into(),
            mean_on: 2.0,
            mean_off: 1.0,
            noise: NoiseFamily::NegBinomial { dispersion: 0.2 },
            effect_on,
            effect_off,
            decay: None,
            source_tag: None,
            user_scale_cv: 0.0,
        }
    }

    pub fn clean(n_users: u64, k_days: u32, seed: u64) -> Self {
        let mut spec = Self::base(ScenarioKind::Clean, n_users, k_days, 0.2, seed);
        spec.metrics = vec![Self::engagement_metric(0.0, 0.0), Self::page_view_metric()];
        spec
    }

    /// Clean scenario without metrics, for calibration sweeps where only
    /// triggered counts matter.
    pub fn clean_counts_only(n_users: u64, k_days: u32, seed: u64) -> Self {
        Self::base(ScenarioKind::Clean, n_users, k_days, 0.2, seed)
    }

    pub fn cool_off_bug(seed: u64) -> Self {
        let mut spec = Self::base(ScenarioKind::CoolOffBug, 50_000, 14, 0.2, seed);
        spec.count_from_day = 8;
        spec.cool_off = Some(CoolOffParams {
            impression_cap: 2,
            click_prob: 0.1,
        });
        spec.metrics = vec![Self::page_view_metric()];
        spec
    }

    pub fn residual(seed: u64) -> Self {
        let mut spec = Self::base(ScenarioKind::Residual, 50_000, 14, 0.1, seed);
        spec.count_from_day = 8;
        spec.residual = Some(ResidualParams {
            return_rate_lift: 0.3,
        });
        spec.metrics = vec![Self::page_view_metric()];
        spec
    }

    pub fn dynamic_targeting(seed: u64) -> Self {
        // The boost must keep evicted users out for longer than the analysis
        // window (boost / entry_drift = 25 days).
        Self::dynamic_targeting_with_boost(seed, 0.5)
    }

    pub fn dynamic_targeting_with_boost(seed: u64, score_boost: f64) -> Self {
        let mut spec = Self::base(ScenarioKind::DynamicTargeting, 50_000, 14, 0.2, seed);
        spec.count_from_day = 8;
        spec.targeting = Some(TargetingParams {
            threshold: 0.35,
            entry_drift: 0.02,
            score_boost,
        });
        spec.metrics = vec![Self::page_view_metric()];
        spec
    }

    pub fn dependent_experiments(seed: u64) -> Self {
        let mut spec = Self::base(ScenarioKind::DependentExperiments, 50_000, 14, 0.0, seed);
        spec.experiment_id = "checkout".into();
        spec.dependency = Some(DependencyParams {
            parent_experiment_id: "posting".into(),
            parent_trigger_prob: 0.2,
            click_through_rate: 0.3,
            ctr_lift: 0.25,
            direct_visit_prob: 0.01,
            conversion_lag_prob: 0.5,
        });
        spec.metrics = vec![Self::page_view_metric()];
        spec
    }

    pub fn trigger_day(n_users: u64, k_days: u32, effect_on: f64, effect_off: f64, seed: u64) -> Self {
        let mut spec = Self::base(ScenarioKind::TriggerDay, n_users, k_days, 0.2, seed);
        spec.metrics = vec![Self::engagement_metric(effect_on, effect_off)];
        spec
    }

    pub fn novelty(n_users: u64, k_days: u32, decay: DecaySchedule, seed: u64) -> Self {
        let mut spec = Self::base(ScenarioKind::Novelty, n_users, k_days, 0.3, seed);
        spec.metrics = vec![MetricModel {
            metric_id: "engagement".into(),
            mean_on: 2.0,
            mean_off: 0.0,
            noise: NoiseFamily::NegBinomial { dispersion: 0.2 },
            effect_on: 0.0,
            effect_off: 0.0,
            decay: Some(decay),
            source_tag: None,
            user_scale_cv: 0.0,
        }];
        spec
    }

    /// Staggered variant of the novelty scenario: a quarter of users are
    /// held out of treatment until `split_day`.
    pub fn novelty_staggered(
        n_users: u64,
        k_days: u32,
        decay: DecaySchedule,
        split_day: u32,
        seed: u64,
    ) -> Self {
        let mut spec = Self::novelty(n_users, k_days, decay, seed);
        spec.allocations = vec![
            VariantAllocation {
                label: "control".into(),
                fraction: 0.5,
            },
            VariantAllocation {
                label: "treatment".into(),
                fraction: 0.25,
            },
            VariantAllocation {
                label: "treatment_late".into(),
                fraction: 0.25,
            },
        ];
        spec.staggered = Some(StaggeredParams {
            split_day,
            late_label: "treatment_late".into(),
        });
        spec
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_users == 0 || self.k_days == 0 {
            return Err("n_users and k_days must be positive".into());
        }
        if self.k_days > 64 {
            return Err("k_days must be at most 64".into());
        }
        let p = self.activity.daily_trigger_prob;
        if !(0.0..=1.0).contains(&p) {
            return Err(format!("daily_trigger_prob {p} outside [0,1]"));
        }
        if !(0.0..1.0).contains(&self.activity.dispersion) {
            return Err("dispersion must lie in [0,1)".into());
        }
        if self.count_from_day == 0 || self.count_from_day > self.k_days {
            return Err(format!(
                "count_from_day {} outside 1..={}",
                self.count_from_day, self.k_days
            ));
        }
        for m in &self.metrics {
            if m.mean_on < 0.0 || m.mean_off < 0.0 {
                return Err(format!("metric '{}' has negative means", m.metric_id));
            }
            if m.user_scale_cv < 0.0 {
                return Err(format!("metric '{}' has negative scale cv", m.metric_id));
            }
            if !m.effect_on.is_finite() || !m.effect_off.is_finite() {
                return Err(format!("metric '{}' has non-finite effects", m.metric_id));
            }
        }
        match self.kind {
            ScenarioKind::CoolOffBug if self.cool_off.is_none() => {
                return Err("cool_off parameters required".into());
            }
            ScenarioKind::Residual if self.residual.is_none() => {
                return Err("residual parameters required".into());
            }
            ScenarioKind::DynamicTargeting if self.targeting.is_none() => {
                return Err("targeting parameters required".into());
            }
            ScenarioKind::DependentExperiments if self.dependency.is_none() => {
                return Err("dependency parameters required".into());
            }
            _ => {}
        }
        if let Some(s) = &self.staggered {
            if s.split_day == 0 || s.split_day > self.k_days {
                return Err("split_day outside experiment".into());
            }
        }
        Ok(())
    }
}
