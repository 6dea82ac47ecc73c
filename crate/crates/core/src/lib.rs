//! Diagnostics engine for online controlled experiments.
//!
//! The crate ingests raw exposure/metric event logs, computes triggered-analysis
//! summary statistics, and runs automatic detection and root-causing of four
//! failure modes commonly seen in triggered experiments:
//!
//! - assignment bias (sample-ratio mismatch) with a check-driven diagnosis toolkit,
//! - trigger-day effect (cross-day vs single-day impact divergence),
//! - novelty effect (impact decaying as users are exposed repeatedly),
//! - mis-read metric movements, via meta-analysis of historical experiments.
//!
//! A deterministic simulator plants each failure mode so every detector can be
//! scored against ground truth.

pub mod bias_diagnosis;
pub mod cli;
pub mod datamodel;
pub mod metacorr;
pub mod report;
pub mod seeding;
pub mod simulator;
pub mod statscore;
pub mod temporal;
pub mod trigger_engine;
