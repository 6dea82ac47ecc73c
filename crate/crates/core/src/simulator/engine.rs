//! Deterministic event-log generation with ground-truth bookkeeping.
//!
//! Each user draws from an independent random stream keyed by
//! (seed, user index), so output is byte-identical for identical specs and
//! independent of execution order. Events are emitted in canonical order:
//! user, then day, exposures before metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, LogNormal, Poisson};
use thiserror::Error;

use crate::datamodel::{
    assign_variant, Event, ExperimentConfig, ExposureEvent, MetricEvent,
};
use crate::seeding::derive_seed;
use crate::trigger_engine::Coverage;

use super::spec::{NoiseFamily, ScenarioKind, ScenarioSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
}

const STREAM_USER: u64 = 1;

/// Per-variant, per-day true first-trigger and re-trigger counts.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DayTruth {
    pub day: u32,
    pub n_new: Vec<u64>,
    pub n_returned: Vec<u64>,
}

/// Everything needed to score detectors against the generated log.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GroundTruth {
    pub label: ScenarioKind,
    pub seed: u64,
    pub planted_trigger_prob: f64,
    /// I/O contribution ratio of the first metric, when it is partial.
    pub planted_contribution_ratio: Option<f64>,
    /// Per metric: planted (in-trigger, off-trigger) effect.
    pub metric_effects: BTreeMap<String, (f64, f64)>,
    /// Per metric: planted coverage class.
    pub coverage: BTreeMap<String, Coverage>,
    /// Users with >= 1 exposure in the counting window, per variant.
    pub triggered_unique: Vec<u64>,
    /// Users with >= 1 visit in the counting window, per variant.
    pub visited_unique: Vec<u64>,
    /// Users visiting in the window without any window exposure, per variant.
    pub suppressed_users: Vec<u64>,
    /// Days 2..=k, computed from full-history first exposure days.
    pub new_returned_by_day: Vec<DayTruth>,
    /// Total emitted value per metric, for conservation checks.
    pub metric_totals: BTreeMap<String, f64>,
    pub exposure_events: u64,
    pub metric_events: u64,
    /// Union of targeted users over the counting window, per variant.
    pub targeted_union: Option<Vec<u64>>,
}

/// A secondary experiment emitted alongside the primary one.
#[derive(Debug, Clone)]
pub struct SiblingLog {
    pub events: Vec<Event>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub events: Vec<Event>,
    pub config: ExperimentConfig,
    pub truth: GroundTruth,
    pub siblings: Vec<SiblingLog>,
}

fn sample_mean_value(rng: &mut ChaCha8Rng, noise: NoiseFamily, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    match noise {
        NoiseFamily::Fixed => mean,
        NoiseFamily::Poisson => Poisson::new(mean).expect("positive mean").sample(rng),
        NoiseFamily::NegBinomial { dispersion } => {
            if dispersion <= 0.0 {
                return Poisson::new(mean).expect("positive mean").sample(rng);
            }
            let shape = 1.0 / dispersion;
            let scale = mean * dispersion;
            let lambda = Gamma::new(shape, scale).expect("valid gamma").sample(rng);
            if lambda <= 0.0 {
                0.0
            } else {
                Poisson::new(lambda).expect("positive rate").sample(rng)
            }
        }
        NoiseFamily::LogNormal { cv } => {
            let sigma_sq = (1.0 + cv * cv).ln();
            let mu = mean.ln() - sigma_sq / 2.0;
            LogNormal::new(mu, sigma_sq.sqrt())
                .expect("valid lognormal")
                .sample(rng)
        }
    }
}

struct UserSim<'a> {
    spec: &'a ScenarioSpec,
    rng: ChaCha8Rng,
    user_id: String,
    variant_idx: u32,
    variant_label: String,
    treated: bool,
    late_cohort: bool,
    p_visit: f64,
    // scenario state
    exposed_ever: bool,
    impressions: u32,
    clicked: bool,
    score: f64,
    trigger_count: u32,
    pending_child_visit: bool,
    /// Per-metric engagement scale (1.0 without heterogeneity).
    metric_scales: Vec<f64>,
    // outputs
    events: Vec<Event>,
    sibling_events: Vec<Event>,
    visit_mask: u64,
    expo_mask: u64,
    targeted_days: u64,
    metric_totals: Vec<f64>,
}

impl<'a> UserSim<'a> {
    fn emit_exposure(&mut self, day: u32, service: Option<String>) {
        self.events.push(Event::Exposure(ExposureEvent {
            user_id: self.user_id.clone(),
            experiment_id: self.spec.experiment_id.clone(),
            variant: self.variant_label.clone(),
            day,
            service_tag: service,
        }));
        self.expo_mask |= 1 << (day - 1);
    }

    fn emit_metrics(&mut self, day: u32, visited: bool, effect_active: bool) {
        for (i, m) in self.spec.metrics.iter().enumerate() {
            let scale = self.metric_scales[i];
            let mean = if visited {
                let effect = if effect_active {
                    match &m.decay {
                        Some(d) => d.effect_at(self.trigger_count),
                        None => m.effect_on,
                    }
                } else {
                    0.0
                };
                m.mean_on * scale * (1.0 + effect)
            } else {
                if m.mean_off <= 0.0 {
                    continue;
                }
                let effect = if self.treated && self.exposed_ever && !self.late_pending(day) {
                    m.effect_off
                } else {
                    0.0
                };
                m.mean_off * scale * (1.0 + effect)
            };
            let value = sample_mean_value(&mut self.rng, m.noise, mean);
            if value != 0.0 {
                self.metric_totals[i] += value;
                self.events.push(Event::Metric(MetricEvent {
                    user_id: self.user_id.clone(),
                    day,
                    metric_id: m.metric_id.clone(),
                    value,
                    source_tag: m.source_tag.clone(),
                }));
            }
        }
    }

    fn late_pending(&self, day: u32) -> bool {
        self.late_cohort
            && self
                .spec
                .staggered
                .as_ref()
                .is_some_and(|s| day < s.split_day)
    }

    fn route_service(&mut self) -> Option<String> {
        let services = self.spec.services.as_ref()?;
        if services.route_services.is_empty() {
            return None;
        }
        let idx = self.rng.gen_range(0..services.route_services.len());
        Some(services.route_services[idx].clone())
    }

    fn run(&mut self) {
        for day in 1..=self.spec.k_days {
            match self.spec.kind {
                ScenarioKind::Clean | ScenarioKind::TriggerDay | ScenarioKind::Novelty => {
                    self.day_clean_family(day)
                }
                ScenarioKind::CoolOffBug => self.day_cool_off(day),
                ScenarioKind::Residual => self.day_residual(day),
                ScenarioKind::DynamicTargeting => self.day_dynamic_targeting(day),
                ScenarioKind::DependentExperiments => self.day_dependent(day),
            }
            // A second code path evaluating treated users only.
            if let Some(extra) = self
                .spec
                .services
                .as_ref()
                .and_then(|s| s.extra_service.as_ref())
            {
                if self.treated && self.rng.gen::<f64>() < extra.rate {
                    let service = extra.service.clone();
                    self.emit_exposure(day, Some(service));
                }
            }
        }
    }

    fn day_clean_family(&mut self, day: u32) {
        let visited = self.rng.gen::<f64>() < self.p_visit;
        if visited {
            self.visit_mask |= 1 << (day - 1);
            if self.late_pending(day) {
                // Held-out cohort: visits happen, treatment not yet applied.
                self.emit_metrics(day, true, false);
                return;
            }
            let service = self.route_service();
            self.emit_exposure(day, service);
            self.trigger_count += 1;
            self.exposed_ever = true;
            let effect_active = self.treated;
            self.emit_metrics(day, true, effect_active);
        } else {
            self.emit_metrics(day, false, false);
        }
    }

    fn day_cool_off(&mut self, day: u32) {
        let params = self.spec.cool_off.expect("validated");
        let visited = self.rng.gen::<f64>() < self.p_visit;
        if !visited {
            self.emit_metrics(day, false, false);
            return;
        }
        self.visit_mask |= 1 << (day - 1);
        if self.treated {
            let cooled = self.impressions > params.impression_cap || self.clicked;
            if !cooled {
                let service = self.route_service();
                self.emit_exposure(day, service);
                self.exposed_ever = true;
                // Widget shown: impression accrues, click may end the run.
                self.impressions += 1;
                if self.rng.gen::<f64>() < params.click_prob {
                    self.clicked = true;
                }
            }
        } else {
            // Control users never see the widget, so never cool off.
            let service = self.route_service();
            self.emit_exposure(day, service);
            self.exposed_ever = true;
        }
        // Page views fire on the visit regardless of the exposure bug.
        self.emit_metrics(day, true, false);
    }

    fn day_residual(&mut self, day: u32) {
        let params = self.spec.residual.expect("validated");
        let p = if self.treated && self.exposed_ever {
            (self.p_visit * (1.0 + params.return_rate_lift)).min(1.0)
        } else {
            self.p_visit
        };
        let visited = self.rng.gen::<f64>() < p;
        if visited {
            self.visit_mask |= 1 << (day - 1);
            let service = self.route_service();
            self.emit_exposure(day, service);
            self.exposed_ever = true;
            self.emit_metrics(day, true, false);
        } else {
            self.emit_metrics(day, false, false);
        }
    }

    fn day_dynamic_targeting(&mut self, day: u32) {
        let params = self.spec.targeting.expect("validated");
        let in_target = self.score <= params.threshold;
        if in_target {
            self.targeted_days |= 1 << (day - 1);
        }
        let visited = self.rng.gen::<f64>() < self.p_visit;
        if visited {
            self.visit_mask |= 1 << (day - 1);
            if in_target {
                let service = self.route_service();
                self.emit_exposure(day, service);
                self.exposed_ever = true;
                if self.treated {
                    // The treatment lifts the engagement score that the
                    // targeting model thresholds on.
                    self.score += params.score_boost;
                }
            }
            self.emit_metrics(day, true, false);
        } else {
            self.emit_metrics(day, false, false);
        }
        self.score -= params.entry_drift;
    }

    fn day_dependent(&mut self, day: u32) {
        let params = self.spec.dependency.clone().expect("validated");
        let parent_visit = self.rng.gen::<f64>() < params.parent_trigger_prob;
        let mut child_visit = std::mem::take(&mut self.pending_child_visit);
        if parent_visit {
            self.sibling_events.push(Event::Exposure(ExposureEvent {
                user_id: self.user_id.clone(),
                experiment_id: params.parent_experiment_id.clone(),
                variant: self.variant_label.clone(),
                day,
                service_tag: None,
            }));
            let ctr = if self.treated {
                params.click_through_rate * (1.0 + params.ctr_lift)
            } else {
                params.click_through_rate
            };
            if self.rng.gen::<f64>() < ctr {
                if self.rng.gen::<f64>() < params.conversion_lag_prob {
                    self.pending_child_visit = true;
                } else {
                    child_visit = true;
                }
            }
        }
        if self.rng.gen::<f64>() < params.direct_visit_prob {
            child_visit = true;
        }
        if child_visit {
            self.visit_mask |= 1 << (day - 1);
            let service = self.route_service();
            self.emit_exposure(day, service);
            self.exposed_ever = true;
            self.emit_metrics(day, true, false);
        } else {
            self.emit_metrics(day, false, false);
        }
    }
}

/// Generates a synthetic event log plus ground truth for the scenario.
pub fn generate(spec: &ScenarioSpec) -> Result<SimOutput, SimError> {
    spec.validate().map_err(SimError::InvalidSpec)?;
    let hash_id = spec.resolved_hash_id();
    let n_variants = spec.allocations.len();
    let window_mask = {
        let mut m = 0u64;
        for d in spec.count_from_day..=spec.k_days {
            m |= 1 << (d - 1);
        }
        m
    };

    let mut events = Vec::new();
    let mut sibling_events = Vec::new();
    let mut triggered_unique = vec![0u64; n_variants];
    let mut visited_unique = vec![0u64; n_variants];
    let mut suppressed_users = vec![0u64; n_variants];
    let mut new_by_day = vec![vec![0u64; n_variants]; spec.k_days as usize + 1];
    let mut returned_by_day = vec![vec![0u64; n_variants]; spec.k_days as usize + 1];
    let mut metric_totals = vec![0.0f64; spec.metrics.len()];
    let mut targeted_union = vec![0u64; n_variants];
    let mut membership: Vec<Vec<String>> = vec![Vec::new(); spec.k_days as usize + 1];

    for u in 0..spec.n_users {
        let user_id = format!("u{u:07}");
        let variant_label = assign_variant(&hash_id, &spec.allocations, &user_id).to_string();
        let variant_idx = spec
            .allocations
            .iter()
            .position(|v| v.label == variant_label)
            .expect("assigned label") as u32;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[STREAM_USER, u]));

        let base_p = spec.activity.daily_trigger_prob;
        let p_visit = if spec.activity.dispersion > 0.0 && base_p > 0.0 && base_p < 1.0 {
            let nu = 1.0 / spec.activity.dispersion - 1.0;
            let beta = Beta::new(base_p * nu, (1.0 - base_p) * nu).expect("valid beta");
            beta.sample(&mut rng)
        } else {
            base_p
        };

        let late_cohort = spec
            .staggered
            .as_ref()
            .is_some_and(|s| s.late_label == variant_label);

        let score = rng.gen::<f64>();

        let metric_scales: Vec<f64> = spec
            .metrics
            .iter()
            .map(|m| {
                if m.user_scale_cv > 0.0 {
                    let sigma_sq = (1.0 + m.user_scale_cv * m.user_scale_cv).ln();
                    LogNormal::new(-sigma_sq / 2.0, sigma_sq.sqrt())
                        .expect("valid lognormal")
                        .sample(&mut rng)
                } else {
                    1.0
                }
            })
            .collect();

        let mut sim = UserSim {
            spec,
            rng,
            user_id,
            variant_idx,
            variant_label,
            treated: variant_idx != 0,
            late_cohort,
            p_visit,
            exposed_ever: false,
            impressions: 0,
            clicked: false,
            score,
            trigger_count: 0,
            pending_child_visit: false,
            metric_scales,
            events: Vec::new(),
            sibling_events: Vec::new(),
            visit_mask: 0,
            expo_mask: 0,
            targeted_days: 0,
            metric_totals: vec![0.0; spec.metrics.len()],
        };
        sim.run();

        let v = sim.variant_idx as usize;
        if sim.expo_mask & window_mask != 0 {
            triggered_unique[v] += 1;
        }
        if sim.visit_mask & window_mask != 0 {
            visited_unique[v] += 1;
            if sim.expo_mask & window_mask == 0 {
                suppressed_users[v] += 1;
            }
        }
        if sim.expo_mask != 0 {
            let first = sim.expo_mask.trailing_zeros() + 1;
            for day in 1..=spec.k_days {
                if sim.expo_mask & (1 << (day - 1)) != 0 {
                    if day == first {
                        new_by_day[day as usize][v] += 1;
                    } else {
                        returned_by_day[day as usize][v] += 1;
                    }
                }
            }
        }
        if sim.targeted_days & window_mask != 0 {
            targeted_union[v] += 1;
        }
        if spec.kind == ScenarioKind::DynamicTargeting {
            for day in 1..=spec.k_days {
                if sim.targeted_days & (1 << (day - 1)) != 0 {
                    membership[day as usize].push(sim.user_id.clone());
                }
            }
        }
        for (i, total) in sim.metric_totals.iter().enumerate() {
            metric_totals[i] += total;
        }
        events.append(&mut sim.events);
        sibling_events.append(&mut sim.sibling_events);
    }

    let mut config = ExperimentConfig {
        experiment_id: spec.experiment_id.clone(),
        hash_id: hash_id.clone(),
        variants: spec.allocations.clone(),
        start_day: 1,
        count_from_day: spec.count_from_day,
        duration_days: spec.k_days,
        target_membership: None,
    };
    if spec.kind == ScenarioKind::DynamicTargeting {
        let mut map = BTreeMap::new();
        for (day, users) in membership.into_iter().enumerate().skip(1) {
            map.insert(day as u32, users.into_iter().collect::<BTreeSet<_>>());
        }
        config.target_membership = Some(map);
    }

    let first_metric = spec.metrics.first();
    let contribution_ratio = first_metric.and_then(|m| {
        if m.mean_off > 0.0 {
            Some(m.mean_on / m.mean_off)
        } else {
            None
        }
    });

    let truth = GroundTruth {
        label: spec.kind,
        seed: spec.seed,
        planted_trigger_prob: spec.activity.daily_trigger_prob,
        planted_contribution_ratio: contribution_ratio,
        metric_effects: spec
            .metrics
            .iter()
            .map(|m| (m.metric_id.clone(), (m.effect_on, m.effect_off)))
            .collect(),
        coverage: spec
            .metrics
            .iter()
            .map(|m| {
                let coverage = if m.mean_off > 0.0 {
                    Coverage::PartiallyCovered
                } else {
                    Coverage::FullyCovered
                };
                (m.metric_id.clone(), coverage)
            })
            .collect(),
        triggered_unique,
        visited_unique,
        suppressed_users,
        new_returned_by_day: (2..=spec.k_days)
            .map(|day| DayTruth {
                day,
                n_new: new_by_day[day as usize].clone(),
                n_returned: returned_by_day[day as usize].clone(),
            })
            .collect(),
        metric_totals: spec
            .metrics
            .iter()
            .zip(&metric_totals)
            .map(|(m, &t)| (m.metric_id.clone(), t))
            .collect(),
        exposure_events: events
            .iter()
            .filter(|e| matches!(e, Event::Exposure(_)))
            .count() as u64,
        metric_events: events
            .iter()
            .filter(|e| matches!(e, Event::Metric(_)))
            .count() as u64,
        targeted_union: if spec.kind == ScenarioKind::DynamicTargeting {
            Some(targeted_union)
        } else {
            None
        },
    };

    verify_consistency(spec, &events, &config, &truth, window_mask);

    let siblings = if spec.kind == ScenarioKind::DependentExperiments {
        let params = spec.dependency.as_ref().expect("validated");
        vec![SiblingLog {
            events: sibling_events,
            config: ExperimentConfig {
                experiment_id: params.parent_experiment_id.clone(),
                hash_id,
                variants: spec.allocations.clone(),
                start_day: 1,
                count_from_day: 1,
                duration_days: spec.k_days,
                target_membership: None,
            },
        }]
    } else {
        Vec::new()
    };

    Ok(SimOutput {
        events,
        config,
        truth,
        siblings,
    })
}

/// Ground truth must agree with the emitted log; a mismatch is a generator
/// bug, so it panics rather than returning an error.
fn verify_consistency(
    spec: &ScenarioSpec,
    events: &[Event],
    config: &ExperimentConfig,
    truth: &GroundTruth,
    window_mask: u64,
) {
    let mut masks: HashMap<&str, (u32, u64)> = HashMap::new();
    for event in events {
        if let Event::Exposure(e) = event {
            let v = config
                .variant_index(&e.variant)
                .expect("emitted variant is declared") as u32;
            let entry = masks.entry(e.user_id.as_str()).or_insert((v, 0));
            assert_eq!(entry.0, v, "conflicting emitted variants");
            entry.1 |= 1 << (e.day - 1);
        }
    }
    let mut recount = vec![0u64; spec.allocations.len()];
    for (_, (v, mask)) in &masks {
        if mask & window_mask != 0 {
            recount[*v as usize] += 1;
        }
    }
    assert_eq!(
        recount, truth.triggered_unique,
        "ground-truth triggered counts disagree with emitted events"
    );
}

/// Generates and ingests in one step; panics on generator/ingest mismatch.
pub fn generate_ingested(
    spec: &ScenarioSpec,
) -> Result<(crate::datamodel::IngestedLog, GroundTruth, Vec<crate::datamodel::IngestedLog>), SimError>
{
    let out = generate(spec)?;
    let log = crate::datamodel::ingest(out.events, &out.config)
        .expect("generated events always ingest");
    let siblings = out
        .siblings
        .into_iter()
        .map(|s| crate::datamodel::ingest(s.events, &s.config).expect("sibling events ingest"))
        .collect();
    Ok((log, out.truth, siblings))
}
