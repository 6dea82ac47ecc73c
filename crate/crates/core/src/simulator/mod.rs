//! Deterministic generator of synthetic experiment logs with known ground
//! truth: clean experiments, the four assignment-bias mechanisms,
//! trigger-day and novelty effects, and multi-experiment corpora for
//! meta-analysis.

mod corpus;
mod engine;
mod spec;

pub use corpus::{generate_corpus, CorpusOutput, CorpusSpec, CorpusTruth, ExperimentTruth};
pub use engine::{
    generate, generate_ingested, DayTruth, GroundTruth, SiblingLog, SimError, SimOutput,
};
pub use spec::{
    ActivityModel, CoolOffParams, DecaySchedule, DependencyParams, ExtraServiceParams,
    MetricModel, NoiseFamily, ResidualParams, ScenarioKind, ScenarioSpec, ServiceParams,
    StaggeredParams, TargetingParams,
};
