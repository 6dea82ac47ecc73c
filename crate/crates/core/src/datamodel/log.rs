//! Ingestion of raw events into an immutable, indexed per-user log.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{DataError, DayRange, Event, ExperimentConfig};

/// One aggregated metric contribution: per (day, source tag), values summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub day: u32,
    /// Index into [`IngestedLog::source_tags`], if the event carried one.
    pub source: Option<u32>,
    pub value: f64,
}

/// All contributions of one user to one metric, ordered by (day, source).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    /// Index into [`IngestedLog::metric_names`].
    pub metric: u32,
    pub entries: Vec<MetricEntry>,
}

/// Day-ordered view of one user's exposures and metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLog {
    pub user_id: String,
    /// Index into the config's variant list.
    pub variant: u32,
    /// Sorted, de-duplicated days with at least one exposure event.
    pub trigger_days: Vec<u32>,
    /// Sorted, de-duplicated indices into [`IngestedLog::service_names`] of
    /// every service this user was exposed through.
    pub services: Vec<u32>,
    /// Sorted by metric index.
    pub metrics: Vec<MetricSeries>,
}

impl UserLog {
    pub fn first_trigger_day(&self) -> Option<u32> {
        self.trigger_days.first().copied()
    }

    pub fn triggered_on(&self, day: u32) -> bool {
        self.trigger_days.binary_search(&day).is_ok()
    }

    pub fn triggered_in(&self, range: DayRange) -> bool {
        self.first_trigger_in(range).is_some()
    }

    pub fn first_trigger_in(&self, range: DayRange) -> Option<u32> {
        let idx = self.trigger_days.partition_point(|&d| d < range.start);
        match self.trigger_days.get(idx) {
            Some(&d) if d <= range.end => Some(d),
            _ => None,
        }
    }

    /// Number of trigger days within the range.
    pub fn trigger_days_in(&self, range: DayRange) -> u32 {
        let lo = self.trigger_days.partition_point(|&d| d < range.start);
        let hi = self.trigger_days.partition_point(|&d| d <= range.end);
        (hi - lo) as u32
    }

    pub fn metric_series(&self, metric: u32) -> Option<&MetricSeries> {
        self.metrics
            .binary_search_by_key(&metric, |s| s.metric)
            .ok()
            .map(|i| &self.metrics[i])
    }

    /// Total metric value over the range, across all source tags.
    pub fn metric_total(&self, metric: u32, range: DayRange) -> f64 {
        match self.metric_series(metric) {
            Some(series) => series
                .entries
                .iter()
                .filter(|e| range.contains(e.day))
                .map(|e| e.value)
                .sum(),
            None => 0.0,
        }
    }

    /// Splits the range total into (trigger-day, off-trigger-day) parts.
    pub fn metric_total_split(&self, metric: u32, range: DayRange) -> (f64, f64) {
        let mut on = 0.0;
        let mut off = 0.0;
        if let Some(series) = self.metric_series(metric) {
            for e in series.entries.iter().filter(|e| range.contains(e.day)) {
                if self.triggered_on(e.day) {
                    on += e.value;
                } else {
                    off += e.value;
                }
            }
        }
        (on, off)
    }
}

/// Immutable, indexed result of ingesting an event stream.
///
/// Users are ordered by id; metric names and source tags are interned in
/// sorted order, so ingestion is insensitive to event-stream permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestedLog {
    pub config: ExperimentConfig,
    pub users: Vec<UserLog>,
    pub metric_names: Vec<String>,
    pub source_tags: Vec<String>,
    pub service_names: Vec<String>,
    pub exposure_event_count: u64,
    pub metric_event_count: u64,
    #[serde(skip)]
    user_index: HashMap<String, usize>,
}

impl IngestedLog {
    pub fn experiment_id(&self) -> &str {
        &self.config.experiment_id
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn user(&self, user_id: &str) -> Option<&UserLog> {
        self.user_index.get(user_id).map(|&i| &self.users[i])
    }

    pub fn metric_index(&self, metric_id: &str) -> Option<u32> {
        self.metric_names
            .binary_search_by(|m| m.as_str().cmp(metric_id))
            .ok()
            .map(|i| i as u32)
    }

    pub fn source_tag_index(&self, tag: &str) -> Option<u32> {
        self.source_tags
            .binary_search_by(|t| t.as_str().cmp(tag))
            .ok()
            .map(|i| i as u32)
    }

    pub fn service_name(&self, index: u32) -> &str {
        &self.service_names[index as usize]
    }

    pub fn variant_label(&self, index: u32) -> &str {
        &self.config.variants[index as usize].label
    }

    pub fn n_variants(&self) -> usize {
        self.config.variants.len()
    }

    /// Rebuilds the id index after deserialization.
    pub fn reindex(&mut self) {
        self.user_index = self
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.user_id.clone(), i))
            .collect();
    }
}

#[derive(Default)]
struct UserBuilder {
    variant: Option<String>,
    exposures: BTreeSet<(u32, Option<String>)>,
    // (metric, day, source) -> raw values, summed canonically at finalize.
    metrics: HashMap<(String, u32, Option<String>), Vec<f64>>,
}

/// Ingests an event stream against a declared experiment config.
///
/// Duplicate exposures for one (user, day) are idempotent; conflicting
/// variants for one user are a hard error. Metric values for one
/// (user, day, metric, source) are summed.
pub fn ingest<I>(events: I, config: &ExperimentConfig) -> Result<IngestedLog, DataError>
where
    I: IntoIterator<Item = Event>,
{
    config.validate()?;
    let mut builders: BTreeMap<String, UserBuilder> = BTreeMap::new();
    let mut exposure_event_count = 0u64;
    let mut metric_event_count = 0u64;

    for event in events {
        let day = event.day();
        if day == 0 || day > config.duration_days {
            return Err(DataError::DayOutOfRange {
                day,
                duration: config.duration_days,
            });
        }
        match event {
            Event::Exposure(e) => {
                if e.experiment_id != config.experiment_id {
                    return Err(DataError::UnknownExperiment {
                        found: e.experiment_id,
                        expected: config.experiment_id.clone(),
                    });
                }
                if config.variant_index(&e.variant).is_none() {
                    return Err(DataError::UnknownVariant {
                        variant: e.variant,
                        user_id: e.user_id,
                    });
                }
                let b = builders.entry(e.user_id.clone()).or_default();
                match &b.variant {
                    None => b.variant = Some(e.variant.clone()),
                    Some(v) if *v != e.variant => {
                        return Err(DataError::VariantConflict {
                            user_id: e.user_id,
                            first: v.clone(),
                            second: e.variant,
                        });
                    }
                    Some(_) => {}
                }
                b.exposures.insert((e.day, e.service_tag));
                exposure_event_count += 1;
            }
            Event::Metric(m) => {
                if !m.value.is_finite() {
                    return Err(DataError::NonFiniteValue {
                        user_id: m.user_id,
                        metric_id: m.metric_id,
                    });
                }
                let b = builders.entry(m.user_id.clone()).or_default();
                b.metrics
                    .entry((m.metric_id, m.day, m.source_tag))
                    .or_default()
                    .push(m.value);
                metric_event_count += 1;
            }
        }
    }

    // Canonical interning: sorted metric names, source tags, service names.
    let mut metric_names: BTreeSet<String> = BTreeSet::new();
    let mut source_tags: BTreeSet<String> = BTreeSet::new();
    let mut service_names: BTreeSet<String> = BTreeSet::new();
    for b in builders.values() {
        for (metric, _, source) in b.metrics.keys() {
            metric_names.insert(metric.clone());
            if let Some(tag) = source {
                source_tags.insert(tag.clone());
            }
        }
        for (_, service) in &b.exposures {
            if let Some(tag) = service {
                service_names.insert(tag.clone());
            }
        }
    }
    let metric_names: Vec<String> = metric_names.into_iter().collect();
    let source_tags: Vec<String> = source_tags.into_iter().collect();
    let service_names: Vec<String> = service_names.into_iter().collect();
    let metric_idx: HashMap<&str, u32> = metric_names
        .iter()
        .enumerate()
        .map(|(i, m)| (m.as_str(), i as u32))
        .collect();
    let source_idx: HashMap<&str, u32> = source_tags
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i as u32))
        .collect();
    let service_idx: HashMap<&str, u32> = service_names
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i as u32))
        .collect();

    let mut users = Vec::with_capacity(builders.len());
    for (user_id, b) in builders {
        // Users appearing only in metric events are kept: their variant is
        // recovered by hash when a check needs it. Mark with the sentinel
        // variant of their hash assignment so population queries stay exact.
        let variant_label = match b.variant {
            Some(v) => v,
            None => {
                super::assign_variant(&config.hash_id, &config.variants, &user_id).to_string()
            }
        };
        let variant = config
            .variant_index(&variant_label)
            .expect("validated above") as u32;

        let trigger_days: Vec<u32> = b
            .exposures
            .iter()
            .map(|(d, _)| *d)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let services: Vec<u32> = b
            .exposures
            .iter()
            .filter_map(|(_, tag)| tag.as_deref().map(|t| service_idx[t]))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        // Group raw values per (metric, day, source); sum in value order so
        // ingestion is insensitive to event-stream permutation.
        let mut per_metric: BTreeMap<u32, Vec<MetricEntry>> = BTreeMap::new();
        let mut keyed: Vec<((u32, u32, Option<u32>), Vec<f64>)> = b
            .metrics
            .into_iter()
            .map(|((metric, day, source), values)| {
                let m = metric_idx[metric.as_str()];
                let s = source.as_deref().map(|t| source_idx[t]);
                ((m, day, s), values)
            })
            .collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        for ((metric, day, source), mut values) in keyed {
            values.sort_by(|a, b| a.total_cmp(b));
            let value: f64 = values.iter().sum();
            per_metric.entry(metric).or_default().push(MetricEntry {
                day,
                source,
                value,
            });
        }
        let metrics: Vec<MetricSeries> = per_metric
            .into_iter()
            .map(|(metric, entries)| MetricSeries { metric, entries })
            .collect();

        users.push(UserLog {
            user_id,
            variant,
            trigger_days,
            services,
            metrics,
        });
    }

    let user_index = users
        .iter()
        .enumerate()
        .map(|(i, u)| (u.user_id.clone(), i))
        .collect();

    Ok(IngestedLog {
        config: config.clone(),
        users,
        metric_names,
        source_tags,
        service_names,
        exposure_event_count,
        metric_event_count,
        user_index,
    })
}
