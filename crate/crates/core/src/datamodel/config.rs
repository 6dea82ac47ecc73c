//! Experiment configuration: allocation, randomization namespace, targeting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantAllocation {
    pub label: String,
    pub fraction: f64,
}

/// Declared design of one experiment.
///
/// The first entry of `variants` is the control arm by convention. `hash_id`
/// is the randomization namespace: experiments sharing a `hash_id` split
/// users identically. `count_from_day > start_day` records that sample
/// counting began after the experiment was activated (e.g. after a ramp).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub hash_id: String,
    pub variants: Vec<VariantAllocation>,
    #[serde(default = "default_day_one")]
    pub start_day: u32,
    #[serde(default = "default_day_one")]
    pub count_from_day: u32,
    pub duration_days: u32,
    /// Day -> set of targeted user ids, for dynamically targeted experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_membership: Option<BTreeMap<u32, BTreeSet<String>>>,
}

fn default_day_one() -> u32 {
    1
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.variants.len() < 2 {
            return Err(DataError::InvalidConfig(
                "at least two variants are required".into(),
            ));
        }
        if self.variants.iter().any(|v| v.fraction <= 0.0) {
            return Err(DataError::InvalidConfig(
                "allocation fractions must be strictly positive".into(),
            ));
        }
        let total: f64 = self.variants.iter().map(|v| v.fraction).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidConfig(format!(
                "allocation fractions must sum to 1, got {total}"
            )));
        }
        let mut labels: Vec<&str> = self.variants.iter().map(|v| v.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.variants.len() {
            return Err(DataError::InvalidConfig("duplicate variant label".into()));
        }
        if self.start_day == 0 || self.duration_days == 0 {
            return Err(DataError::InvalidConfig(
                "start_day and duration_days must be >= 1".into(),
            ));
        }
        if self.count_from_day < self.start_day {
            return Err(DataError::InvalidConfig(
                "count_from_day must be >= start_day".into(),
            ));
        }
        Ok(())
    }

    /// Control arm label: the first declared variant.
    pub fn control_label(&self) -> &str {
        &self.variants[0].label
    }

    pub fn variant_index(&self, label: &str) -> Option<usize> {
        self.variants.iter().position(|v| v.label == label)
    }

    pub fn fractions(&self) -> Vec<f64> {
        self.variants.iter().map(|v| v.fraction).collect()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.variants.iter().map(|v| v.label.as_str()).collect()
    }

    pub fn two_arm(experiment_id: &str, hash_id: &str, duration_days: u32) -> Self {
        Self {
            experiment_id: experiment_id.into(),
            hash_id: hash_id.into(),
            variants: vec![
                VariantAllocation {
                    label: "control".into(),
                    fraction: 0.5,
                },
                VariantAllocation {
                    label: "treatment".into(),
                    fraction: 0.5,
                },
            ],
            start_day: 1,
            count_from_day: 1,
            duration_days,
            target_membership: None,
        }
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self, DataError> {
        let config: ExperimentConfig = serde_json::from_reader(reader)
            .map_err(|e| DataError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_fractions() {
        let mut c = ExperimentConfig::two_arm("exp", "h", 14);
        assert!(c.validate().is_ok());
        c.variants[0].fraction = 0.7;
        assert!(c.validate().is_err());
        c.variants[0].fraction = -0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_single_variant_and_bad_count_from() {
        let mut c = ExperimentConfig::two_arm("exp", "h", 14);
        c.variants.truncate(1);
        c.variants[0].fraction = 1.0;
        assert!(c.validate().is_err());

        let mut c = ExperimentConfig::two_arm("exp", "h", 14);
        c.start_day = 3;
        c.count_from_day = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = ExperimentConfig::two_arm("exp", "h", 14);
        let s = serde_json::to_string(&c).unwrap();
        let back = ExperimentConfig::from_reader(s.as_bytes()).unwrap();
        assert_eq!(c, back);
    }
}
